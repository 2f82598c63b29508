"""A form language with first-class dual spaces over 1-D Lagrange elements.

Dual spaces, cofunctions, coarguments, interpolation via generalized dual
evaluation, adjoints, actions and form composition are all expressible and
assemble to dense tensors through a small reference assembler.
"""

from .analysis import (
    AssemblyPlan,
    Diagnostic,
    SigEntry,
    Signature,
    arguments,
    curried_signature,
    plan,
    validate,
)
from .assemble import (
    DenseMatrix,
    DenseVector,
    Scalar,
    apply,
    assemble,
    execute_plan,
    interpolate,
    transpose,
)
from .errors import FormError
from .fem import (
    P1,
    P2,
    Element,
    Mesh,
    Space,
    dual,
    function_space,
    make_interval_mesh,
    node_coordinates,
    tabulate_basis,
)
from .ir import (
    Add,
    Argument,
    Coargument,
    Coefficient,
    Cofunction,
    Constant,
    Delta,
    ExternalOp,
    Form,
    Mul,
    Scale,
    SpatialCoordinate,
    action,
    adjoint,
    argument,
    as_form,
    delta,
    dx,
    external_operator,
    form_add,
    integral,
    make_cofunction,
    make_function,
    register_evaluator,
    replace,
)

__version__ = "0.1.0"

__all__ = [
    "AssemblyPlan",
    "Diagnostic",
    "SigEntry",
    "Signature",
    "arguments",
    "curried_signature",
    "plan",
    "validate",
    "DenseMatrix",
    "DenseVector",
    "Scalar",
    "apply",
    "assemble",
    "execute_plan",
    "interpolate",
    "transpose",
    "FormError",
    "P1",
    "P2",
    "Element",
    "Mesh",
    "Space",
    "dual",
    "function_space",
    "make_interval_mesh",
    "node_coordinates",
    "tabulate_basis",
    "Add",
    "Argument",
    "Coargument",
    "Coefficient",
    "Cofunction",
    "Constant",
    "Delta",
    "ExternalOp",
    "Form",
    "Mul",
    "Scale",
    "SpatialCoordinate",
    "action",
    "adjoint",
    "argument",
    "as_form",
    "delta",
    "dx",
    "external_operator",
    "form_add",
    "integral",
    "make_cofunction",
    "make_function",
    "register_evaluator",
    "replace",
    "__version__",
]
