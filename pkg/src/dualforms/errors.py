"""Exception hierarchy.

Errors that correspond to stable diagnostic codes (the ones surfaced by the
command line front end) carry a ``code`` attribute; everything else is a
plain subclass used for programming errors at the API boundary.
"""

from __future__ import annotations


class FormError(Exception):
    """Base class for all errors raised by this package."""

    code: str | None = None


class InvalidArgumentError(FormError, ValueError):
    """A constructor received an out-of-range argument."""


class UnsupportedElementError(FormError):
    """The requested element family or degree is not available."""


class OutOfDomainError(FormError):
    """A point evaluation was requested outside the mesh interval."""


class PrimalRequiredError(FormError):
    """An operation that needs a primal space was given a dual one."""


class ShapeError(FormError, ValueError):
    """A value vector does not match the dimension of its space."""


class SpaceKindError(FormError, TypeError):
    """A primal space was used where a dual one was required, or vice versa."""


class SpaceError(FormError):
    """Two spaces that must agree do not."""

    code = "SPACE_MISMATCH"


class MeshMismatchError(FormError):
    """An integrand mixes meshes, or no mesh could be inferred."""

    code = "MESH_MISMATCH"


class SignatureError(FormError):
    """Two forms (or branches of a sum) expose different argument signatures."""

    code = "SIGNATURE_MISMATCH"


class DuplicateArgumentError(FormError):
    """A form contains two surviving arguments with the same number."""

    code = "DUP_ARG_NUMBER"


class NumberGapError(FormError):
    """Argument numbers are not contiguous from zero."""

    code = "NUMBER_GAP"


class CycleError(FormError):
    """Form definitions reference each other in a cycle."""

    code = "CYCLE"


class MissingValuesError(FormError):
    """Assembly reached a coefficient or cofunction without stored values."""

    code = "MISSING_VALUES"


class ArityError(FormError):
    """An operation was applied to a form of unsupported arity."""


class NotInterpolableError(FormError):
    """An operand cannot be evaluated at the node set of the target space."""


class UnknownEvaluatorError(FormError):
    """No evaluation hook is registered under the requested name."""


class QuadratureDegreeError(FormError):
    """The requested quadrature degree exceeds the supported maximum."""


class ContractError(FormError):
    """A plan produced tensors whose contraction dimensions disagree."""
