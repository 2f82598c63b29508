"""Reference numerical assembly over 1-D Lagrange spaces.

Integrals are evaluated with Gauss-Legendre quadrature on each cell at a
degree derived from the integrand (exact for the polynomial expressions the
IR can build), delta nodes are evaluated by point evaluation at the node
coordinates of their dual slot's space, and composite forms run through the
lowering in :mod:`.analysis` before any numerics happen.

Tensor orientation: a matrix's rows follow argument 0, its columns argument
1, so an assembled operator maps values for the highest-numbered argument to
values in the dual of the argument-0 space.  A 1-form with a primal argument
assembles to a dual-space vector (a cofunction) and one with a dual argument
to a primal-space vector (a function).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .analysis import (
    AssemblyPlan,
    CombineStep,
    ContractStep,
    IdentityStep,
    PrimitiveStep,
    SigEntry,
    arguments,
    plan,
)
from .errors import (
    ArityError,
    ContractError,
    MissingValuesError,
    NotInterpolableError,
    OutOfDomainError,
    QuadratureDegreeError,
    ShapeError,
    SpaceError,
    SpaceKindError,
)
from .fem import Space, dof_map, lagrange_shape_values, node_coordinates, tabulate_basis
from .ir import (
    Add,
    AdjointTerm,
    Argument,
    Coargument,
    Coefficient,
    Cofunction,
    CofunctionTerm,
    Constant,
    Delta,
    DeltaTerm,
    Expr,
    ExternalOp,
    ExternalOperatorTerm,
    Form,
    IntegralTerm,
    Mul,
    Scale,
    SpatialCoordinate,
    as_form,
    delta,
    evaluator_hook,
)

__all__ = [
    "Scalar",
    "DenseVector",
    "DenseMatrix",
    "AssembledTensor",
    "assemble",
    "execute_plan",
    "apply",
    "transpose",
    "interpolate",
    "MAX_QUADRATURE_POINTS",
]

MAX_QUADRATURE_POINTS = 64


@dataclass(frozen=True, slots=True)
class Scalar:
    value: float

    @property
    def kind(self) -> str:
        return "scalar"


@dataclass(frozen=True, eq=False, slots=True)
class DenseVector:
    """Vector with an owning space: primal values are a function, dual
    values a cofunction."""

    values: np.ndarray
    space: Space

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        if arr.shape != (self.space.dim,):
            raise ShapeError(f"vector of shape {arr.shape} does not fit {self.space.label}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def kind(self) -> str:
        return "vector"


@dataclass(frozen=True, eq=False, slots=True)
class DenseMatrix:
    """Matrix with rows over argument 0's space and columns over argument 1's."""

    values: np.ndarray
    row_space: Space
    col_space: Space

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        if arr.shape != (self.row_space.dim, self.col_space.dim):
            raise ShapeError(
                f"matrix of shape {arr.shape} does not fit {self.row_space.label} x {self.col_space.label}"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def kind(self) -> str:
        return "matrix"


AssembledTensor = Scalar | DenseVector | DenseMatrix


@lru_cache(maxsize=None)
def _gauss(n_points: int) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Gauss-Legendre points and weights on [0, 1]; weights sum to 1."""
    pts, wts = np.polynomial.legendre.leggauss(n_points)
    return tuple((pts + 1.0) / 2.0), tuple(wts / 2.0)


def _poly_degree(expr: Expr) -> int:
    if isinstance(expr, (Constant,)):
        return 0
    if isinstance(expr, SpatialCoordinate):
        return 1
    if isinstance(expr, (Argument, Coargument, Coefficient, Cofunction)):
        return expr.space.element.degree
    if isinstance(expr, Add):
        return max(_poly_degree(c) for c in expr.children)
    if isinstance(expr, Mul):
        return sum(_poly_degree(c) for c in expr.children)
    if isinstance(expr, Scale):
        return _poly_degree(expr.child)
    raise ContractError(f"unresolved operator node in an integrand: {expr}")


def _eval(expr: Expr, x: float, arg_value, coeff_value) -> float:
    if isinstance(expr, Constant):
        return expr.value
    if isinstance(expr, SpatialCoordinate):
        return x
    if isinstance(expr, Coefficient):
        return coeff_value(expr)
    if isinstance(expr, (Argument, Coargument)):
        return arg_value(expr)
    if isinstance(expr, Add):
        return sum(_eval(c, x, arg_value, coeff_value) for c in expr.children)
    if isinstance(expr, Mul):
        out = 1.0
        for c in expr.children:
            out *= _eval(c, x, arg_value, coeff_value)
        return out
    if isinstance(expr, Scale):
        return expr.factor * _eval(expr.child, x, arg_value, coeff_value)
    raise ContractError(f"unresolved operator node reached the evaluator: {expr}")


def _values_of(terminal, overrides) -> np.ndarray:
    vals = overrides.get(terminal)
    if vals is None:
        vals = terminal.values
    if vals is None:
        raise MissingValuesError(f"{terminal} has no stored values")
    return vals


def _point_coeff(x: float, overrides):
    def value(c: Coefficient) -> float:
        vals = _values_of(c, overrides)
        try:
            tab = tabulate_basis(c.space, x)
        except OutOfDomainError as exc:
            raise NotInterpolableError(f"{c} cannot be evaluated at x = {x}") from exc
        return float(tab @ vals)

    return value


def _no_args(term):
    raise ContractError(f"argument {term} reached a 0-argument evaluation")


def _expr_arguments(expr: Expr) -> list[Argument]:
    """Distinct argument terminals of a resolved (operator-free) expression."""
    found: dict[int, Argument] = {}

    def walk(e: Expr):
        if isinstance(e, Argument):
            found[e.number] = e
        elif isinstance(e, Coargument):
            raise SpaceKindError("coargument in a function-valued position")
        elif isinstance(e, (Add, Mul)):
            for c in e.children:
                walk(c)
        elif isinstance(e, Scale):
            walk(e.child)

    walk(expr)
    return [found[n] for n in sorted(found)]


def _check_finite(v: float, what) -> float:
    if not np.isfinite(v):
        raise NotInterpolableError(f"{what} evaluated to a non-finite value")
    return v


class _Accumulator:
    """Dense accumulator for one primitive form, addressed by argument number."""

    def __init__(self, entries: tuple[SigEntry, ...]):
        if len(entries) > 2:
            raise ArityError(f"direct assembly supports at most 2 arguments, got {len(entries)}")
        self.entries = entries
        self.numbers = [e.number for e in entries]
        shape = tuple(e.space.dim for e in entries)
        self.array = np.zeros(shape) if shape else 0.0

    def add(self, scale: float, value: float, index_by_number: dict[int, int]) -> None:
        if not self.numbers:
            self.array += scale * value
        else:
            self.array[tuple(index_by_number[n] for n in self.numbers)] += scale * value

    def tensor(self) -> AssembledTensor:
        if not self.entries:
            return Scalar(float(self.array))
        if len(self.entries) == 1:
            return DenseVector(self.array, self.entries[0].space.dual)
        return DenseMatrix(self.array, self.entries[0].space, self.entries[1].space)


def _assemble_integral(acc: _Accumulator, weight: float, term: IntegralTerm, overrides, quad_degree) -> None:
    mesh = term.mesh
    degree = quad_degree if quad_degree is not None else _poly_degree(term.integrand)
    n_points = degree // 2 + 1
    if n_points > MAX_QUADRATURE_POINTS:
        raise QuadratureDegreeError(f"quadrature degree {degree} needs more than {MAX_QUADRATURE_POINTS} points")
    pts, wts = _gauss(n_points)
    h = mesh.cell_size
    entries = acc.entries
    arg_maps = [dof_map(e.space) for e in entries]

    for cell in range(mesh.n_cells):
        for t, wq in zip(pts, wts):
            x = (cell + t) * h
            scale = weight * wq * h
            shapes: dict[int, np.ndarray] = {}

            def shape_values(degree_: int) -> np.ndarray:
                if degree_ not in shapes:
                    shapes[degree_] = lagrange_shape_values(degree_, t)
                return shapes[degree_]

            def coeff_value(c: Coefficient) -> float:
                vals = _values_of(c, overrides)
                dofs = dof_map(c.space).cell_dofs[cell]
                return float(shape_values(c.space.element.degree) @ vals[list(dofs)])

            env: dict[int, float] = {}

            def arg_value(term_):
                return env[term_.number]

            if not entries:
                acc.add(scale, _eval(term.integrand, x, _no_args, coeff_value), {})
            elif len(entries) == 1:
                e0 = entries[0]
                sh0 = shape_values(e0.space.element.degree)
                dofs0 = arg_maps[0].cell_dofs[cell]
                for l0, g0 in enumerate(dofs0):
                    env[e0.number] = sh0[l0]
                    v = _eval(term.integrand, x, arg_value, coeff_value)
                    acc.add(scale, v, {e0.number: g0})
            else:
                e0, e1 = entries
                sh0 = shape_values(e0.space.element.degree)
                sh1 = shape_values(e1.space.element.degree)
                dofs0 = arg_maps[0].cell_dofs[cell]
                dofs1 = arg_maps[1].cell_dofs[cell]
                for l0, g0 in enumerate(dofs0):
                    env[e0.number] = sh0[l0]
                    for l1, g1 in enumerate(dofs1):
                        env[e1.number] = sh1[l1]
                        v = _eval(term.integrand, x, arg_value, coeff_value)
                        acc.add(scale, v, {e0.number: g0, e1.number: g1})


def _assemble_delta(acc: _Accumulator, weight: float, node: Delta, overrides) -> None:
    if isinstance(node.operand, Form) or isinstance(node.dual_operand, Form):
        raise ContractError("nested forms must be lowered before direct assembly; use assemble()")
    slot = node.dual_operand
    nodes_x = node_coordinates(slot.space.primal)
    operand = node.operand
    args = _expr_arguments(operand)
    if len(args) > 1:
        raise ArityError("delta operands with more than one argument are not supported")
    arg = args[0] if args else None
    slot_values = _values_of(slot, overrides) if isinstance(slot, Cofunction) else None

    for i, x in enumerate(float(v) for v in nodes_x):
        coeff_value = _point_coeff(x, overrides)
        if arg is None:
            v = _check_finite(_eval(operand, x, _no_args, coeff_value), node)
            if slot_values is None:
                acc.add(weight, v, {slot.number: i})
            else:
                acc.add(weight * slot_values[i], v, {})
        else:
            try:
                tab = tabulate_basis(arg.space, x)
            except OutOfDomainError as exc:
                raise NotInterpolableError(f"{arg} cannot be evaluated at x = {x}") from exc
            for j in range(arg.space.dim):
                env = {arg.number: tab[j]}
                v = _check_finite(_eval(operand, x, lambda t: env[t.number], coeff_value), node)
                if slot_values is None:
                    acc.add(weight, v, {slot.number: i, arg.number: j})
                else:
                    acc.add(weight * slot_values[i], v, {arg.number: j})


def _assemble_external(acc: _Accumulator, weight: float, node: ExternalOp, overrides) -> None:
    hook = evaluator_hook(node.evaluator_id)
    out_space = node.output_space
    xs = [float(v) for v in node_coordinates(out_space)]
    args: list[Argument] = []
    for op in node.operands:
        args.extend(_expr_arguments(op))
    if len(args) > 1:
        raise ArityError("external operators with more than one argument are not supported")

    if not args:
        vals = []
        for op in node.operands:
            out = np.empty(len(xs))
            for i, x in enumerate(xs):
                out[i] = _check_finite(_eval(op, x, _no_args, _point_coeff(x, overrides)), node)
            vals.append(out)
        coeffs = np.asarray(hook(vals, out_space), dtype=float)
        if coeffs.shape != (out_space.dim,):
            raise ShapeError(
                f"evaluator {node.evaluator_id!r} returned shape {coeffs.shape}, expected ({out_space.dim},)"
            )
        for i, c in enumerate(coeffs):
            acc.add(weight, float(c), {node.number: i})
    else:
        # linearity in the argument is asserted by the hook's registrant, so
        # the matrix is built one basis function at a time
        arg = args[0]
        for j in range(arg.space.dim):
            coeffs = _external_column(node, hook, xs, arg, j, overrides)
            for i, c in enumerate(coeffs):
                acc.add(weight, float(c), {node.number: i, arg.number: j})


def _external_column(node: ExternalOp, hook, xs, arg: Argument, j: int, overrides) -> np.ndarray:
    vals = []
    for op in node.operands:
        out = np.empty(len(xs))
        for i, x in enumerate(xs):
            try:
                tab = tabulate_basis(arg.space, x)
            except OutOfDomainError as exc:
                raise NotInterpolableError(f"{arg} cannot be evaluated at x = {x}") from exc
            env = {arg.number: tab[j]}
            out[i] = _check_finite(
                _eval(op, x, lambda t: env[t.number], _point_coeff(x, overrides)), node
            )
        vals.append(out)
    coeffs = np.asarray(hook(vals, node.output_space), dtype=float)
    if coeffs.shape != (node.output_space.dim,):
        raise ShapeError(f"evaluator {node.evaluator_id!r} returned a wrong-sized vector")
    return coeffs


def _assemble_primitive(form: Form, overrides, quad_degree) -> AssembledTensor:
    entries = arguments(form).ascending
    acc = _Accumulator(entries)
    for weight, term in form.terms:
        if isinstance(term, IntegralTerm):
            _assemble_integral(acc, weight, term, overrides, quad_degree)
        elif isinstance(term, DeltaTerm):
            _assemble_delta(acc, weight, term.node, overrides)
        elif isinstance(term, ExternalOperatorTerm):
            _assemble_external(acc, weight, term.node, overrides)
        elif isinstance(term, CofunctionTerm):
            vals = _values_of(term.cofunction, overrides)
            for i, v in enumerate(vals):
                acc.add(weight, float(v), {0: i})
        elif isinstance(term, AdjointTerm):
            inner = assemble(term.form, quadrature_degree=quad_degree)
            if not isinstance(inner, DenseMatrix):
                raise ArityError("a transposed form must assemble to a matrix")
            acc.array = acc.array + weight * inner.values.T
        else:
            raise TypeError(f"unexpected term {type(term).__name__}")
    return acc.tensor()


def execute_plan(assembly_plan: AssemblyPlan, *, quadrature_degree: int | None = None) -> AssembledTensor:
    """Run a plan's steps in order and return the final tensor."""
    results: list[AssembledTensor] = []
    for step in assembly_plan.steps:
        if isinstance(step, PrimitiveStep):
            overrides = {}
            for terminal, idx in step.bindings:
                source = results[idx]
                if not isinstance(source, DenseVector) or source.space != terminal.space:
                    raise ContractError(f"step binding for {terminal} does not produce a vector in its space")
                overrides[terminal] = source.values
            results.append(_assemble_primitive(step.form, overrides, quadrature_degree))
        elif isinstance(step, IdentityStep):
            results.append(DenseVector(_values_of(step.cofunction, {}), step.cofunction.space))
        elif isinstance(step, ContractStep):
            outer, inner = results[step.outer], results[step.inner]
            if isinstance(outer, Scalar) or isinstance(inner, Scalar):
                raise ContractError("cannot contract scalar steps")
            if not isinstance(inner, DenseMatrix):
                raise ContractError("the inner side of a contraction must be a matrix")
            if outer.values.shape[step.outer_axis] != inner.values.shape[0]:
                raise ContractError("contraction dimensions disagree")
            merged = np.tensordot(outer.values, inner.values, axes=(step.outer_axis, 0))
            merged = np.transpose(merged, step.perm)
            if len(step.entries) == 1:
                results.append(DenseVector(merged, step.entries[0].space.dual))
            elif len(step.entries) == 2:
                results.append(DenseMatrix(merged, step.entries[0].space, step.entries[1].space))
            else:
                raise ContractError(f"contraction produced rank {len(step.entries)}")
        elif isinstance(step, CombineStep):
            parts = [results[i] for i in step.inputs]
            first = parts[0]
            if isinstance(first, Scalar):
                if not all(isinstance(p, Scalar) for p in parts):
                    raise ContractError("cannot combine tensors of different kinds")
                results.append(Scalar(sum(w * p.value for w, p in zip(step.weights, parts))))
            elif isinstance(first, DenseVector):
                if not all(isinstance(p, DenseVector) and p.space == first.space for p in parts):
                    raise ContractError("cannot combine vectors from different spaces")
                total = sum(w * p.values for w, p in zip(step.weights, parts))
                results.append(DenseVector(total, first.space))
            else:
                if not all(
                    isinstance(p, DenseMatrix)
                    and p.row_space == first.row_space
                    and p.col_space == first.col_space
                    for p in parts
                ):
                    raise ContractError("cannot combine matrices with different spaces")
                total = sum(w * p.values for w, p in zip(step.weights, parts))
                results.append(DenseMatrix(total, first.row_space, first.col_space))
        else:
            raise TypeError(f"unexpected plan step {type(step).__name__}")
    return results[assembly_plan.result]


def assemble(form_like, *, quadrature_degree: int | None = None) -> AssembledTensor:
    """Evaluate a form to a scalar, vector or matrix.

    0-forms give a scalar; 1-forms a vector in the dual of their argument's
    space (so a cofunction for a primal argument, a function for a dual
    one); 2-forms a matrix with rows over argument 0.  Composite forms are
    lowered first, so nested interpolations and compositions just work.
    """
    form = as_form(form_like)
    return execute_plan(plan(form), quadrature_degree=quadrature_degree)


def _operand_vector(operand) -> DenseVector:
    if isinstance(operand, DenseVector):
        return operand
    if isinstance(operand, (Coefficient, Cofunction)):
        return DenseVector(_values_of(operand, {}), operand.space)
    raise SpaceKindError(f"cannot apply a tensor to {type(operand).__name__}")


def apply(tensor: AssembledTensor, operand) -> AssembledTensor:
    """Contract an assembled tensor with a value for its highest argument."""
    vec = _operand_vector(operand)
    if isinstance(tensor, DenseMatrix):
        if vec.space != tensor.col_space:
            raise SpaceError(f"operand lives in {vec.space.label}, matrix columns are {tensor.col_space.label}")
        return DenseVector(tensor.values @ vec.values, tensor.row_space.dual)
    if isinstance(tensor, DenseVector):
        if vec.space != tensor.space.dual:
            raise SpaceError(f"operand lives in {vec.space.label}, expected {tensor.space.dual.label}")
        return Scalar(float(tensor.values @ vec.values))
    raise SpaceError("a scalar cannot be applied to anything")


def transpose(matrix: DenseMatrix) -> DenseMatrix:
    """Swap a matrix's axes and their owning spaces."""
    if not isinstance(matrix, DenseMatrix):
        raise SpaceKindError("transpose is defined for matrices")
    return DenseMatrix(matrix.values.T, matrix.col_space, matrix.row_space)


def interpolate(expr, space: Space) -> DenseVector:
    """Function in ``space`` whose coefficients are ``expr`` at the nodes."""
    if isinstance(expr, (int, float)):
        expr = Constant(expr)
    if space.is_dual:
        raise SpaceKindError("interpolation targets a primal space")
    return assemble(delta(expr, Coargument(space.dual, 0)))
