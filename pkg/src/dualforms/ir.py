"""Immutable expression and form IR.

The expression layer holds function-valued trees: arguments, known
coefficients, the spatial coordinate, constants, sums, products and scalar
multiples.  Two node kinds bridge between expressions and forms:

* ``Delta`` pairs a function-valued operand with a dual-space slot
  (a coargument, a cofunction, or a whole form producing a dual value).
  It covers interpolation, interpolation operators, dual evaluation and
  operator composition, depending on what sits in its two slots.
* ``ExternalOp`` wraps a registered evaluation hook that produces a
  function in a chosen output space from its operands.

A ``Form`` is a weighted sum of terms: integrals, delta nodes, external
operator nodes, cofunctions (assembled by identity), and lazily transposed
forms.  Forms and the expressions they contain are immutable and compare
structurally, which is what makes ``replace`` work.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping, Union

import numpy as np

from .errors import (
    ArityError,
    InvalidArgumentError,
    MeshMismatchError,
    ShapeError,
    SignatureError,
    SpaceError,
    SpaceKindError,
    UnknownEvaluatorError,
)
from .fem import Mesh, Space

__all__ = [
    "Expr",
    "Terminal",
    "Argument",
    "Coargument",
    "Coefficient",
    "Cofunction",
    "SpatialCoordinate",
    "Constant",
    "Add",
    "Mul",
    "Scale",
    "Delta",
    "ExternalOp",
    "Measure",
    "dx",
    "IntegralTerm",
    "DeltaTerm",
    "ExternalOperatorTerm",
    "CofunctionTerm",
    "AdjointTerm",
    "Form",
    "argument",
    "make_function",
    "make_cofunction",
    "integral",
    "form_add",
    "delta",
    "adjoint",
    "action",
    "replace",
    "external_operator",
    "register_evaluator",
    "as_form",
]

_ids = itertools.count()


def _as_weight(value) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        return NotImplemented


class Expr:
    """Base class for expression nodes; provides the operator algebra."""

    __slots__ = ()

    def __add__(self, other):
        if isinstance(other, (Form, Cofunction)):
            return form_add(self, other)
        if isinstance(other, Expr):
            return Add((self, other))
        return NotImplemented

    def __radd__(self, other):
        if isinstance(other, Expr):
            return Add((other, self))
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, Expr):
            return Add((self, Scale(-1.0, other)))
        return NotImplemented

    def __neg__(self):
        return Scale(-1.0, self)

    def __mul__(self, other):
        if isinstance(other, Measure):
            return integral(self, other)
        if isinstance(other, Expr):
            return Mul((self, other))
        w = _as_weight(other)
        if w is NotImplemented:
            return NotImplemented
        return Scale(w, self)

    def __rmul__(self, other):
        if isinstance(other, Expr):
            return Mul((other, self))
        w = _as_weight(other)
        if w is NotImplemented:
            return NotImplemented
        return Scale(w, self)


class Terminal(Expr):
    __slots__ = ()


@dataclass(frozen=True, slots=True)
class Argument(Terminal):
    """Placeholder for an unknown function in a primal space."""

    space: Space
    number: int

    def __post_init__(self):
        if self.space.is_dual:
            raise SpaceKindError("Argument requires a primal space; use Coargument for dual spaces")
        if self.number < 0:
            raise InvalidArgumentError("argument number must be >= 0")

    def __str__(self):
        return f"arg{self.number}({self.space.label})"


@dataclass(frozen=True, slots=True)
class Coargument(Terminal):
    """Placeholder for an unknown member of a dual space."""

    space: Space
    number: int

    def __post_init__(self):
        if not self.space.is_dual:
            raise SpaceKindError("Coargument requires a dual space")
        if self.number < 0:
            raise InvalidArgumentError("argument number must be >= 0")

    def __call__(self, operand) -> Delta:
        return delta(operand, self)

    def __str__(self):
        return f"coarg{self.number}({self.space.label})"


def _frozen_values(values, space: Space, what: str) -> np.ndarray | None:
    if values is None:
        return None
    arr = np.array(values, dtype=float)
    if arr.shape != (space.dim,):
        raise ShapeError(f"{what} needs {space.dim} values for {space.label}, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False, slots=True)
class Coefficient(Terminal):
    """A known function: a primal space and coefficients against its basis.

    ``values`` may be None for a declared-but-unvalued coefficient; assembly
    then fails with a missing-values error.  Each coefficient is a distinct
    symbol: equality is by identity token, not by values.
    """

    space: Space
    values: np.ndarray | None = None
    token: int = field(default_factory=lambda: next(_ids))

    def __post_init__(self):
        if self.space.is_dual:
            raise SpaceKindError("Coefficient requires a primal space; use Cofunction for dual spaces")
        object.__setattr__(self, "values", _frozen_values(self.values, self.space, "Coefficient"))

    def __eq__(self, other):
        return isinstance(other, Coefficient) and other.token == self.token

    def __hash__(self):
        return hash(("Coefficient", self.token))

    def __str__(self):
        return f"w{self.token}({self.space.label})"


@dataclass(frozen=True, eq=False, slots=True)
class Cofunction(Terminal):
    """A known member of a dual space: coefficients against the dual basis."""

    space: Space
    values: np.ndarray | None = None
    token: int = field(default_factory=lambda: next(_ids))

    def __post_init__(self):
        if not self.space.is_dual:
            raise SpaceKindError("Cofunction requires a dual space")
        object.__setattr__(self, "values", _frozen_values(self.values, self.space, "Cofunction"))

    def __eq__(self, other):
        return isinstance(other, Cofunction) and other.token == self.token

    def __hash__(self):
        return hash(("Cofunction", self.token))

    def __call__(self, operand) -> Delta:
        """Dual evaluation sugar: ``f(c)`` builds ``delta(c, f)``."""
        return delta(operand, self)

    # Cofunctions behave as (numerical) 1-forms, so their arithmetic goes
    # through the form layer rather than the expression layer.
    def __add__(self, other):
        if isinstance(other, (Form, Cofunction, Delta, ExternalOp)):
            return form_add(self, other)
        return NotImplemented

    def __radd__(self, other):
        return self.__add__(other)

    def __mul__(self, other):
        w = _as_weight(other)
        if w is NotImplemented:
            return NotImplemented
        return as_form(self) * w

    def __rmul__(self, other):
        return self.__mul__(other)

    def __str__(self):
        return f"f{self.token}({self.space.label})"


@dataclass(frozen=True, slots=True)
class SpatialCoordinate(Terminal):
    """The coordinate ``x`` of the interval domain."""

    def __str__(self):
        return "x"


@dataclass(frozen=True, slots=True)
class Constant(Terminal):
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))

    def __str__(self):
        return repr(self.value)


def _flatten(children, cls) -> tuple[Expr, ...]:
    flat: list[Expr] = []
    for child in children:
        if not isinstance(child, Expr):
            raise SpaceKindError(f"expression children must be expressions, got {type(child).__name__}")
        if isinstance(child, cls):
            flat.extend(child.children)
        else:
            flat.append(child)
    return tuple(flat)


@dataclass(frozen=True, slots=True)
class Add(Expr):
    """Pointwise sum; nested sums are flattened."""

    children: tuple[Expr, ...]

    def __post_init__(self):
        object.__setattr__(self, "children", _flatten(self.children, Add))

    def __str__(self):
        return "(" + " + ".join(str(c) for c in self.children) + ")"


@dataclass(frozen=True, slots=True)
class Mul(Expr):
    """Pointwise product; nested products are flattened."""

    children: tuple[Expr, ...]

    def __post_init__(self):
        object.__setattr__(self, "children", _flatten(self.children, Mul))

    def __str__(self):
        return "(" + " * ".join(str(c) for c in self.children) + ")"


@dataclass(frozen=True, slots=True)
class Scale(Expr):
    factor: float
    child: Expr

    def __post_init__(self):
        object.__setattr__(self, "factor", float(self.factor))

    def __str__(self):
        return f"({self.factor} * {self.child})"


@dataclass(frozen=True, slots=True)
class Delta(Expr):
    """Generalized dual evaluation: pair a function-valued operand with a
    dual-space slot.

    ``operand`` is an expression (possibly containing arguments) or a form
    whose argument 0 is a coargument, i.e. a form producing a function.
    ``dual_operand`` is a coargument, a cofunction, or a form whose argument
    0 is primal, i.e. a form producing a dual value.  Evaluation pairs the
    operand with the dual basis of the slot's space: the i-th dual basis
    functional is point evaluation at node i, so pairing across different
    spaces is interpolation.
    """

    operand: Union[Expr, "Form"]
    dual_operand: Union[Coargument, Cofunction, "Form"]

    def __str__(self):
        return f"delta({self.operand}, {self.dual_operand})"

    def __add__(self, other):
        if isinstance(other, (Form, Cofunction, Delta, ExternalOp)):
            return form_add(self, other)
        return Expr.__add__(self, other)

    @property
    def node_space(self) -> Space:
        """Primal space whose nodes define the pairing."""
        slot = self.dual_operand
        if isinstance(slot, (Coargument, Cofunction)):
            return slot.space.primal
        from .analysis import arguments_of  # noqa: PLC0415  (cycle-free lazy import)

        entries = arguments_of(slot)
        zero = [e for e in entries if e.number == 0]
        if not zero or zero[0].space.is_dual:
            raise SpaceKindError("the dual slot of delta must produce a dual value")
        return zero[0].space


@dataclass(frozen=True, slots=True)
class ExternalOp(Expr):
    """A registered operator producing a function in ``output_space``.

    As a form it intrinsically carries a dual argument in the dual of its
    output space, numbered ``number`` (renumbered by composition rules just
    like a delta's dual slot).
    """

    operands: tuple[Expr, ...]
    output_space: Space
    evaluator_id: str
    number: int = 0

    def __post_init__(self):
        object.__setattr__(self, "operands", tuple(self.operands))
        for op in self.operands:
            if not isinstance(op, Expr):
                raise SpaceKindError("external operator operands must be expressions")
        if self.output_space.is_dual:
            raise SpaceKindError("external operators produce functions, so output_space must be primal")

    def __str__(self):
        ops = ", ".join(str(o) for o in self.operands)
        return f"ext[{self.evaluator_id}]({ops})"

    def __add__(self, other):
        if isinstance(other, (Form, Cofunction, Delta, ExternalOp)):
            return form_add(self, other)
        return Expr.__add__(self, other)


@dataclass(frozen=True, slots=True)
class Measure:
    """Integration measure over the interval; optionally bound to a mesh."""

    name: str = "dx"
    mesh: Mesh | None = None

    def __call__(self, mesh: Mesh) -> Measure:
        return Measure(self.name, mesh)

    def __rmul__(self, other):
        if isinstance(other, Expr):
            return integral(other, self)
        return NotImplemented


dx = Measure()


# --------------------------------------------------------------------------
# Form terms


@dataclass(frozen=True, slots=True)
class IntegralTerm:
    integrand: Expr
    mesh: Mesh

    def __str__(self):
        return f"integral({self.integrand}, dx[{self.mesh.n_cells} cells])"


@dataclass(frozen=True, slots=True)
class DeltaTerm:
    node: Delta

    def __str__(self):
        return str(self.node)


@dataclass(frozen=True, slots=True)
class ExternalOperatorTerm:
    node: ExternalOp

    def __str__(self):
        return str(self.node)


@dataclass(frozen=True, slots=True)
class CofunctionTerm:
    cofunction: Cofunction

    def __str__(self):
        return str(self.cofunction)


@dataclass(frozen=True, slots=True)
class AdjointTerm:
    """Arguments of ``form`` relabelled in reversed order, assembled as the
    transpose.  Used when the reversal cannot be expressed by renumbering
    terminals, e.g. for composite forms with nested deltas."""

    form: "Form"

    def __str__(self):
        return f"adjoint({self.form})"


FormTerm = Union[IntegralTerm, DeltaTerm, ExternalOperatorTerm, CofunctionTerm, AdjointTerm]


def _structural_key(obj) -> str:
    """Deterministic total order over IR nodes, used to canonicalize forms."""
    if isinstance(obj, Space):
        return f"S({obj.element.degree},{obj.mesh.n_cells},{obj.mesh.length},{int(obj.is_dual)})"
    if isinstance(obj, Argument):
        return f"a({_structural_key(obj.space)},{obj.number})"
    if isinstance(obj, Coargument):
        return f"ca({_structural_key(obj.space)},{obj.number})"
    if isinstance(obj, Coefficient):
        return f"w{obj.token}"
    if isinstance(obj, Cofunction):
        return f"f{obj.token}"
    if isinstance(obj, SpatialCoordinate):
        return "x"
    if isinstance(obj, Constant):
        return f"k({obj.value})"
    if isinstance(obj, Add):
        return "add(" + ",".join(_structural_key(c) for c in obj.children) + ")"
    if isinstance(obj, Mul):
        return "mul(" + ",".join(_structural_key(c) for c in obj.children) + ")"
    if isinstance(obj, Scale):
        return f"sc({obj.factor},{_structural_key(obj.child)})"
    if isinstance(obj, Delta):
        return f"d({_structural_key(obj.operand)},{_structural_key(obj.dual_operand)})"
    if isinstance(obj, ExternalOp):
        ops = ",".join(_structural_key(o) for o in obj.operands)
        return f"ext({obj.evaluator_id},{_structural_key(obj.output_space)},{obj.number},{ops})"
    if isinstance(obj, IntegralTerm):
        return f"I({_structural_key(obj.integrand)},{obj.mesh.n_cells},{obj.mesh.length})"
    if isinstance(obj, DeltaTerm):
        return "T" + _structural_key(obj.node)
    if isinstance(obj, ExternalOperatorTerm):
        return "T" + _structural_key(obj.node)
    if isinstance(obj, CofunctionTerm):
        return "T" + _structural_key(obj.cofunction)
    if isinstance(obj, AdjointTerm):
        return f"adj({_structural_key(obj.form)})"
    if isinstance(obj, Form):
        return "F[" + ";".join(f"{w}*{_structural_key(t)}" for w, t in obj.terms) + "]"
    raise TypeError(f"no structural key for {type(obj).__name__}")


@dataclass(frozen=True, eq=False, slots=True)
class Form:
    """A weighted sum of terms sharing one argument signature.

    Construction canonicalizes: structurally equal terms are merged by
    adding their weights, and terms are kept in a deterministic order, so
    equality of forms is insensitive to the order in which they were built.
    Signature agreement between terms is enforced by :func:`form_add` and
    checked again by validation.
    """

    terms: tuple[tuple[float, FormTerm], ...]

    def __post_init__(self):
        merged: dict[str, tuple[float, FormTerm]] = {}
        for weight, term in self.terms:
            key = _structural_key(term)
            if key in merged:
                merged[key] = (merged[key][0] + float(weight), term)
            else:
                merged[key] = (float(weight), term)
        canon = tuple(merged[k] for k in sorted(merged))
        object.__setattr__(self, "terms", canon)

    def __eq__(self, other):
        return isinstance(other, Form) and other.terms == self.terms

    def __hash__(self):
        return hash(self.terms)

    def __add__(self, other):
        if isinstance(other, (Form, Cofunction, Delta, ExternalOp)):
            return form_add(self, other)
        return NotImplemented

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        if isinstance(other, (Form, Cofunction, Delta, ExternalOp)):
            return form_add(self, as_form(other) * -1.0)
        return NotImplemented

    def __mul__(self, other):
        w = _as_weight(other)
        if w is NotImplemented:
            return NotImplemented
        return Form(tuple((w * weight, term) for weight, term in self.terms))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return self * -1.0

    def __str__(self):
        if not self.terms:
            return "<empty form>"
        return " + ".join(f"{w} * {t}" if w != 1.0 else str(t) for w, t in self.terms)


def as_form(obj) -> Form:
    """Coerce form-valued objects (delta and external nodes, cofunctions)."""
    if isinstance(obj, Form):
        return obj
    if isinstance(obj, Delta):
        return Form(((1.0, DeltaTerm(obj)),))
    if isinstance(obj, ExternalOp):
        return Form(((1.0, ExternalOperatorTerm(obj)),))
    if isinstance(obj, Cofunction):
        return Form(((1.0, CofunctionTerm(obj)),))
    raise SpaceKindError(f"cannot interpret {type(obj).__name__} as a form")


# --------------------------------------------------------------------------
# Constructors


def argument(space: Space, number: int) -> Argument | Coargument:
    """Argument in a primal space, coargument in a dual one."""
    if space.is_dual:
        return Coargument(space, number)
    return Argument(space, number)


def make_function(space: Space, values) -> Coefficient:
    """Known function: requires a primal space and a full value vector."""
    if values is None:
        raise ShapeError("make_function requires values; construct Coefficient directly to defer them")
    return Coefficient(space, values)


def make_cofunction(space: Space, values) -> Cofunction:
    """Known dual-space member: requires a dual space and a full value vector."""
    if values is None:
        raise ShapeError("make_cofunction requires values; construct Cofunction directly to defer them")
    return Cofunction(space, values)


def _meshes_of(expr: Expr) -> set[Mesh]:
    """Meshes an expression lives on.  Delta and external nodes count with
    their output mesh only; what happens inside their slots is their own
    business (pairing across meshes is the whole point)."""
    if isinstance(expr, (Argument, Coargument, Coefficient, Cofunction)):
        return {expr.space.mesh}
    if isinstance(expr, (SpatialCoordinate, Constant)):
        return set()
    if isinstance(expr, (Add, Mul)):
        out: set[Mesh] = set()
        for c in expr.children:
            out |= _meshes_of(c)
        return out
    if isinstance(expr, Scale):
        return _meshes_of(expr.child)
    if isinstance(expr, Delta):
        return {expr.node_space.mesh}
    if isinstance(expr, ExternalOp):
        return {expr.output_space.mesh}
    raise TypeError(f"unexpected expression node {type(expr).__name__}")


def integral(integrand: Expr, measure: Measure = dx) -> Form:
    """Single-term form integrating ``integrand`` over its mesh."""
    if not isinstance(integrand, Expr) or isinstance(integrand, (Cofunction, Coargument)):
        raise SpaceKindError("integrands must be function-valued expressions")
    meshes = _meshes_of(integrand)
    if measure.mesh is not None:
        meshes = meshes | {measure.mesh}
    if len(meshes) > 1:
        raise MeshMismatchError("integrand references more than one mesh")
    if not meshes:
        raise MeshMismatchError("cannot infer a mesh; use dx(mesh) for constant integrands")
    return Form(((1.0, IntegralTerm(integrand, meshes.pop())),))


def form_add(a, b) -> Form:
    """Sum of two forms (cofunctions count as 1-forms over their primal space)."""
    from .analysis import arguments_of, entries_signature  # noqa: PLC0415

    fa, fb = as_form(a), as_form(b)
    sig_a = entries_signature(arguments_of(fa))
    sig_b = entries_signature(arguments_of(fb))
    if sig_a != sig_b:
        raise SignatureError(
            "argument signatures differ: "
            f"{sorted((s.label, n) for s, n in sig_a)} vs {sorted((s.label, n) for s, n in sig_b)}"
        )
    return Form(fa.terms + fb.terms)


def delta(operand, dual_operand) -> Delta:
    """Dual-evaluation node; see :class:`Delta` for the slot conventions.

    Argument-number clashes between the two slots are deliberately not
    rejected here; they surface as diagnostics at validation time.
    """
    if isinstance(operand, (Delta, ExternalOp)):
        pass  # nested operator: fine as an expression
    elif isinstance(operand, (Cofunction, Coargument)):
        raise SpaceKindError("the operand of delta must be function-valued")
    elif not isinstance(operand, (Expr, Form)):
        raise SpaceKindError(f"delta operand must be an expression or form, got {type(operand).__name__}")
    if isinstance(dual_operand, Delta):
        raise SpaceKindError("a delta node is function-valued and cannot fill the dual slot")
    if not isinstance(dual_operand, (Coargument, Cofunction, Form)):
        raise SpaceKindError(
            f"the dual slot of delta needs a coargument, cofunction or form, got {type(dual_operand).__name__}"
        )
    return Delta(operand, dual_operand)


def _swap_numbers_expr(expr: Expr) -> Expr:
    if isinstance(expr, Argument):
        return Argument(expr.space, 1 - expr.number)
    if isinstance(expr, Coargument):
        return Coargument(expr.space, 1 - expr.number)
    if isinstance(expr, (Coefficient, Cofunction, SpatialCoordinate, Constant)):
        return expr
    if isinstance(expr, Add):
        return Add(tuple(_swap_numbers_expr(c) for c in expr.children))
    if isinstance(expr, Mul):
        return Mul(tuple(_swap_numbers_expr(c) for c in expr.children))
    if isinstance(expr, Scale):
        return Scale(expr.factor, _swap_numbers_expr(expr.child))
    raise TypeError(f"cannot renumber through {type(expr).__name__}")


def _contains_operator_nodes(expr: Expr) -> bool:
    if isinstance(expr, (Delta, ExternalOp)):
        return True
    if isinstance(expr, (Add, Mul)):
        return any(_contains_operator_nodes(c) for c in expr.children)
    if isinstance(expr, Scale):
        return _contains_operator_nodes(expr.child)
    return False


def _renumbered_term(term: FormTerm) -> FormTerm | None:
    """Term with argument numbers 0 and 1 swapped, or None if the swap
    cannot be done by relabelling terminals."""
    if isinstance(term, IntegralTerm):
        if _contains_operator_nodes(term.integrand):
            return None
        return IntegralTerm(_swap_numbers_expr(term.integrand), term.mesh)
    if isinstance(term, DeltaTerm):
        node = term.node
        if isinstance(node.operand, Form) or isinstance(node.dual_operand, Form):
            return None
        if isinstance(node.operand, Expr) and _contains_operator_nodes(node.operand):
            return None
        slot = node.dual_operand
        new_slot = Coargument(slot.space, 1 - slot.number) if isinstance(slot, Coargument) else slot
        return DeltaTerm(Delta(_swap_numbers_expr(node.operand), new_slot))
    if isinstance(term, ExternalOperatorTerm):
        node = term.node
        if any(_contains_operator_nodes(o) for o in node.operands):
            return None
        return ExternalOperatorTerm(
            ExternalOp(
                tuple(_swap_numbers_expr(o) for o in node.operands),
                node.output_space,
                node.evaluator_id,
                1 - node.number,
            )
        )
    return None


def adjoint(form) -> Form:
    """The form with its two arguments relabelled in reversed order.

    Simple terms are renumbered eagerly; composite terms (nested forms)
    are wrapped and assembled as the transpose, since no relabelling of
    their terminals expresses the reversal.
    """
    from .analysis import arguments_of  # noqa: PLC0415

    f = as_form(form)
    entries = arguments_of(f)
    numbers = sorted(e.number for e in entries)
    if numbers != [0, 1]:
        raise ArityError(f"adjoint needs exactly arguments 0 and 1, got numbers {numbers}")
    if len(f.terms) == 1 and isinstance(f.terms[0][1], AdjointTerm) and f.terms[0][0] == 1.0:
        return f.terms[0][1].form
    swapped = [(w, _renumbered_term(t)) for w, t in f.terms]
    if all(t is not None for _, t in swapped):
        return Form(tuple(swapped))  # type: ignore[arg-type]
    return Form(((1.0, AdjointTerm(f)),))


def _single_term_as_expr(form: Form) -> Expr | None:
    """Expression node for a single delta/external term form, else None."""
    if len(form.terms) != 1:
        return None
    weight, term = form.terms[0]
    if isinstance(term, DeltaTerm):
        node: Expr = term.node
    elif isinstance(term, ExternalOperatorTerm):
        node = term.node
    else:
        return None
    return node if weight == 1.0 else Scale(weight, node)


def _substitute_argument_expr(expr: Expr, number: int, value: Expr) -> Expr:
    if isinstance(expr, (Argument, Coargument)) and expr.number == number:
        return value
    if isinstance(expr, Add):
        return Add(tuple(_substitute_argument_expr(c, number, value) for c in expr.children))
    if isinstance(expr, Mul):
        return Mul(tuple(_substitute_argument_expr(c, number, value) for c in expr.children))
    if isinstance(expr, Scale):
        return Scale(expr.factor, _substitute_argument_expr(expr.child, number, value))
    return expr


def action(form, operand) -> Form:
    """Replace the highest-numbered argument of ``form`` with ``operand``.

    ``operand`` may be a coefficient or cofunction from the matching space,
    or another form whose argument-0 space is dual to the replaced slot's
    space (operator composition).
    """
    from .analysis import arguments_of  # noqa: PLC0415
    from .errors import ArityError

    f = as_form(form)
    entries = arguments_of(f)
    if not entries:
        raise ArityError("action is undefined on 0-forms")
    highest = max(entries, key=lambda e: e.number)

    if isinstance(operand, Coefficient):
        if highest.space.is_dual or operand.space != highest.space:
            raise SpaceError(
                f"action operand lives in {operand.space.label}, form expects {highest.space.label}"
            )
        return _action_terminal(f, highest.number, operand)
    if isinstance(operand, Cofunction):
        if not highest.space.is_dual or operand.space != highest.space:
            raise SpaceError(
                f"action operand lives in {operand.space.label}, form expects {highest.space.label}"
            )
        return _action_terminal(f, highest.number, operand)
    if isinstance(operand, (Form, Delta, ExternalOp)):
        g = as_form(operand)
        g_entries = arguments_of(g)
        zeros = [e for e in g_entries if e.number == 0]
        if not zeros:
            raise ArityError("action on a form requires the operand form to have an argument 0")
        if zeros[0].space.dual != highest.space:
            raise SpaceError(
                f"operand form produces values in {zeros[0].space.dual.label}, "
                f"form expects {highest.space.label}"
            )
        if len(g.terms) > 1:
            out = None
            for w, term in g.terms:
                piece = action(f, Form(((w, term),)))
                out = piece if out is None else Form(out.terms + piece.terms)
            return out
        return _action_form(f, highest.number, g)
    raise SpaceKindError(f"cannot take the action on {type(operand).__name__}")


def _action_terminal(f: Form, number: int, value: Coefficient | Cofunction) -> Form:
    new_terms = []
    for w, term in f.terms:
        if isinstance(term, IntegralTerm):
            new_terms.append((w, IntegralTerm(_substitute_argument_expr(term.integrand, number, value), term.mesh)))
        elif isinstance(term, DeltaTerm):
            node = term.node
            op = node.operand
            if isinstance(op, Expr):
                op = _substitute_argument_expr(op, number, value)
            slot = node.dual_operand
            if isinstance(slot, Coargument) and slot.number == number:
                slot = value  # type: ignore[assignment]
            new_terms.append((w, DeltaTerm(Delta(op, slot))))
        elif isinstance(term, ExternalOperatorTerm):
            node = term.node
            if node.number == number:
                if not isinstance(value, Cofunction):
                    raise SpaceError("the intrinsic argument of an external operator is dual-valued")
                new_terms.append((w, DeltaTerm(Delta(node, value))))
            else:
                ops = tuple(_substitute_argument_expr(o, number, value) for o in node.operands)
                new_terms.append((w, ExternalOperatorTerm(ExternalOp(ops, node.output_space, node.evaluator_id, node.number))))
        elif isinstance(term, CofunctionTerm):
            # the intrinsic argument of a cofunction is 0, so this is dual
            # evaluation of the cofunction on the supplied coefficient
            if number != 0 or not isinstance(value, Coefficient):
                raise SpaceError("a cofunction term only accepts a coefficient for its argument 0")
            new_terms.append((w, DeltaTerm(Delta(value, term.cofunction))))
        else:  # AdjointTerm
            raise SpaceKindError("action through a lazily transposed form is not supported; assemble it instead")
    return Form(tuple(new_terms))


def _action_form(f: Form, number: int, g: Form) -> Form:
    g_expr = _single_term_as_expr(g)
    new_terms = []
    for w, term in f.terms:
        if isinstance(term, DeltaTerm):
            node = term.node
            slot = node.dual_operand
            if isinstance(slot, Coargument) and slot.number == number:
                new_terms.append((w, DeltaTerm(Delta(node.operand, g))))
                continue
            op = node.operand
            if isinstance(op, Expr) and g_expr is not None:
                new_op = _substitute_argument_expr(op, number, g_expr)
                if new_op is not op:
                    new_terms.append((w, DeltaTerm(Delta(new_op, slot))))
                    continue
            raise SpaceError("no argument slot found for form composition in delta term")
        elif isinstance(term, IntegralTerm):
            if g_expr is None:
                raise SpaceKindError(
                    "only operator-valued forms (delta or external terms) can be substituted into an integrand"
                )
            new_terms.append((w, IntegralTerm(_substitute_argument_expr(term.integrand, number, g_expr), term.mesh)))
        else:
            raise SpaceKindError(f"form composition into a {type(term).__name__} is not supported")
    return Form(tuple(new_terms))


def _output_space(obj) -> Space | None:
    """Space in which a node's value lives, when that is well defined."""
    if isinstance(obj, (Argument, Coefficient)):
        return obj.space
    if isinstance(obj, (Coargument, Cofunction)):
        return obj.space
    if isinstance(obj, Delta):
        return obj.node_space
    if isinstance(obj, ExternalOp):
        return obj.output_space
    if isinstance(obj, Form):
        from .analysis import arguments_of  # noqa: PLC0415

        entries = arguments_of(obj)
        zeros = [e for e in entries if e.number == 0]
        return zeros[0].space.dual if zeros else None
    return None


def _replace_expr(expr: Expr, mapping: Mapping) -> Expr:
    hit = mapping.get(expr)
    if hit is not None:
        if isinstance(hit, Form):
            node = _single_term_as_expr(hit)
            if node is None:
                raise SpaceKindError("only single delta/external term forms can replace an expression")
            return node
        return hit
    if isinstance(expr, Add):
        return Add(tuple(_replace_expr(c, mapping) for c in expr.children))
    if isinstance(expr, Mul):
        return Mul(tuple(_replace_expr(c, mapping) for c in expr.children))
    if isinstance(expr, Scale):
        return Scale(expr.factor, _replace_expr(expr.child, mapping))
    if isinstance(expr, Delta):
        op = expr.operand
        op = _replace_slot(op, mapping)
        slot = _replace_slot(expr.dual_operand, mapping)
        return Delta(op, slot)
    if isinstance(expr, ExternalOp):
        return ExternalOp(
            tuple(_replace_expr(o, mapping) for o in expr.operands),
            expr.output_space,
            expr.evaluator_id,
            expr.number,
        )
    return expr


def _replace_slot(slot, mapping: Mapping):
    hit = mapping.get(slot)
    if hit is not None:
        return hit
    if isinstance(slot, Form):
        return _replace_form(slot, mapping)
    return _replace_expr(slot, mapping)


def _replace_form(form: Form, mapping: Mapping) -> Form:
    new_terms = []
    for w, term in form.terms:
        if isinstance(term, IntegralTerm):
            new_terms.append((w, IntegralTerm(_replace_expr(term.integrand, mapping), term.mesh)))
        elif isinstance(term, DeltaTerm):
            node = _replace_expr(term.node, mapping)
            if isinstance(node, Delta):
                new_terms.append((w, DeltaTerm(node)))
            elif isinstance(node, (Coefficient, Cofunction)):
                # the whole delta was replaced by a valued terminal
                if isinstance(node, Cofunction):
                    new_terms.append((w, CofunctionTerm(node)))
                else:
                    raise SpaceKindError("a top-level delta cannot be replaced by a bare coefficient")
            else:
                raise SpaceKindError("a top-level delta term must stay a delta or become a cofunction")
        elif isinstance(term, ExternalOperatorTerm):
            node = _replace_expr(term.node, mapping)
            if isinstance(node, ExternalOp):
                new_terms.append((w, ExternalOperatorTerm(node)))
            else:
                raise SpaceKindError("a top-level external operator term must stay an external operator")
        elif isinstance(term, CofunctionTerm):
            hit = mapping.get(term.cofunction)
            if hit is None:
                new_terms.append((w, term))
            elif isinstance(hit, Cofunction):
                new_terms.append((w, CofunctionTerm(hit)))
            else:
                raise SpaceKindError("a cofunction term can only be replaced by a cofunction")
        else:  # AdjointTerm
            new_terms.append((w, AdjointTerm(_replace_form(term.form, mapping))))
    return Form(tuple(new_terms))


def replace(form, mapping: Mapping) -> Form:
    """Structural substitution of subterms.

    Keys are matched by structural equality anywhere they can occur:
    inside integrands, inside delta slots (including nested forms), and in
    external operator operands.  Replacements must preserve the space in
    which the replaced node's value lives.
    """
    f = as_form(form)
    if not mapping:
        return f
    for key, value in mapping.items():
        ks, vs = _output_space(key), _output_space(value)
        if ks is not None and vs is not None and ks != vs:
            raise SpaceError(f"replacement changes value space {ks.label} -> {vs.label}")
    return _replace_form(f, dict(mapping))


# --------------------------------------------------------------------------
# External operator registry

Evaluator = Callable[[list[np.ndarray], Space], np.ndarray]

_EVALUATORS: dict[str, Evaluator] = {}


def register_evaluator(name: str, fn: Evaluator, *, overwrite: bool = False) -> None:
    """Register an evaluation hook mapping operand nodal values to output
    coefficients.  Hooks are expected to be registered once at startup."""
    if name in _EVALUATORS and not overwrite:
        raise InvalidArgumentError(f"evaluator {name!r} is already registered")
    _EVALUATORS[name] = fn


def evaluator_hook(name: str) -> Evaluator:
    try:
        return _EVALUATORS[name]
    except KeyError:
        raise UnknownEvaluatorError(f"no evaluator registered under {name!r}") from None


def external_operator(operands, output_space: Space, evaluator_id: str, number: int = 0) -> ExternalOp:
    """Form-valued node for a registered operator into ``output_space``."""
    evaluator_hook(evaluator_id)
    return ExternalOp(tuple(operands), output_space, evaluator_id, number)


register_evaluator("identity", lambda vals, space: vals[0])
register_evaluator("square-pointwise", lambda vals, space: vals[0] ** 2)
