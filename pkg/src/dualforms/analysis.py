"""Argument extraction, validation, signature rendering, and lowering.

The consumption rule implemented here: a form (or delta / external operator
node) nested inside another form stands for its own assembled value, so its
argument 0 is consumed by the substitution and does not appear in the
composite signature.  A top-level node keeps all of its arguments.  The
classic ill-formed case, an operand argument numbered 0 next to a dual slot
also numbered 0, is reported as a ``DUP_ARG_NUMBER`` diagnostic rather than
rejected at construction time.

Lowering (:func:`plan`) turns composite forms into a DAG of primitive
assemblies and contractions: a nested node with no surviving arguments is
assembled into a temporary function (or cofunction) and substituted; one
with surviving arguments is assembled into a matrix, replaced by a fresh
argument in the dual of its argument-0 space numbered one past the
enclosing term's remaining arguments, and contracted afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import (
    CycleError,
    DuplicateArgumentError,
    FormError,
    MeshMismatchError,
    NumberGapError,
    SignatureError,
    SpaceError,
)
from .fem import Mesh, Space
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
    FormTerm,
    IntegralTerm,
    Mul,
    Scale,
    SpatialCoordinate,
    Terminal,
    as_form,
    replace,
)

__all__ = [
    "SigEntry",
    "Signature",
    "Diagnostic",
    "arguments",
    "arguments_of",
    "entries_signature",
    "validate",
    "curried_signature",
    "plan",
    "AssemblyPlan",
    "PrimitiveStep",
    "IdentityStep",
    "ContractStep",
    "CombineStep",
]


@dataclass(frozen=True, slots=True)
class SigEntry:
    """One argument slot of a form: the space it draws from and its number."""

    space: Space
    number: int

    def __str__(self):
        return f"#{self.number}:{self.space.label}"


@dataclass(frozen=True, slots=True)
class Signature:
    """Argument list of a well-formed form, sorted descending by number."""

    entries: tuple[SigEntry, ...]

    @property
    def arity(self) -> int:
        return len(self.entries)

    @property
    def ascending(self) -> tuple[SigEntry, ...]:
        return tuple(reversed(self.entries))

    @property
    def highest(self) -> SigEntry:
        return self.entries[0]

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def __str__(self):
        return curried_signature(self)


@dataclass(frozen=True, slots=True)
class Diagnostic:
    severity: str
    code: str
    message: str
    path: tuple = ()

    def __str__(self):
        where = "/".join(str(p) for p in self.path) or "<root>"
        return f"{self.severity}[{self.code}] at {where}: {self.message}"


_CODE_ERRORS: dict[str, type[FormError]] = {
    "DUP_ARG_NUMBER": DuplicateArgumentError,
    "NUMBER_GAP": NumberGapError,
    "SIGNATURE_MISMATCH": SignatureError,
    "SPACE_MISMATCH": SpaceError,
    "MESH_MISMATCH": MeshMismatchError,
    "CYCLE": CycleError,
}


def _raise_for(diag: Diagnostic):
    raise _CODE_ERRORS.get(diag.code, FormError)(str(diag))


def _err(diags: list[Diagnostic], code: str, message: str, path: tuple) -> None:
    diags.append(Diagnostic("error", code, message, path))


# --------------------------------------------------------------------------
# Entry collection


def _entry_set(entries) -> frozenset:
    return frozenset((e.space, e.number) for e in entries)


def entries_signature(entries) -> frozenset:
    """Hashable signature view used for comparing argument structures."""
    return _entry_set(entries)


def _check_duplicates(entries, diags, path) -> None:
    seen: dict[int, SigEntry] = {}
    for e in entries:
        if e.number in seen:
            _err(
                diags,
                "DUP_ARG_NUMBER",
                f"two surviving arguments numbered {e.number} "
                f"({seen[e.number].space.label} and {e.space.label})",
                path,
            )
        else:
            seen[e.number] = e


def _consume_zero(entries: list[SigEntry], diags, path, what: str) -> list[SigEntry]:
    zeros = [e for e in entries if e.number == 0]
    if not zeros:
        _err(diags, "NUMBER_GAP", f"nested {what} has no argument numbered 0 to consume", path)
        return entries
    out = list(entries)
    out.remove(zeros[0])
    return out


def _expr_entries(expr: Expr, path: tuple, diags: list[Diagnostic]) -> list[SigEntry]:
    """Arguments of a function-valued expression; nested operator nodes
    contribute their survivors."""
    if isinstance(expr, Argument):
        return [SigEntry(expr.space, expr.number)]
    if isinstance(expr, Coargument):
        _err(diags, "SPACE_MISMATCH", "coargument used in a function-valued position", path)
        return [SigEntry(expr.space, expr.number)]
    if isinstance(expr, Cofunction):
        _err(diags, "SPACE_MISMATCH", "cofunction used in a function-valued position", path)
        return []
    if isinstance(expr, (Coefficient, SpatialCoordinate, Constant)):
        return []
    if isinstance(expr, Add):
        first: list[SigEntry] | None = None
        for i, child in enumerate(expr.children):
            ent = _expr_entries(child, path + (i,), diags)
            if first is None:
                first = ent
            elif _entry_set(ent) != _entry_set(first):
                _err(diags, "SIGNATURE_MISMATCH", "summands carry different argument signatures", path + (i,))
        return first or []
    if isinstance(expr, Mul):
        out: list[SigEntry] = []
        for i, child in enumerate(expr.children):
            out.extend(_expr_entries(child, path + (i,), diags))
        return out
    if isinstance(expr, Scale):
        return _expr_entries(expr.child, path + (0,), diags)
    if isinstance(expr, (Delta, ExternalOp)):
        own = _node_entries(expr, path, diags)
        return _consume_zero(own, diags, path, "operator node")
    raise TypeError(f"unexpected expression node {type(expr).__name__}")


def _node_entries(node: Delta | ExternalOp, path: tuple, diags: list[Diagnostic]) -> list[SigEntry]:
    """Full (unconsumed) argument list of a delta or external operator node."""
    if isinstance(node, ExternalOp):
        out: list[SigEntry] = []
        for i, op in enumerate(node.operands):
            out.extend(_expr_entries(op, path + ("operand", i), diags))
        out.append(SigEntry(node.output_space.dual, node.number))
        _check_duplicates(out, diags, path)
        return out

    # delta: resolve the dual slot first so the operand can be checked against it
    slot = node.dual_operand
    spath = path + ("dual_operand",)
    if isinstance(slot, Coargument):
        node_space = slot.space.primal
        vpart: list[SigEntry] = [SigEntry(slot.space, slot.number)]
    elif isinstance(slot, Cofunction):
        node_space = slot.space.primal
        vpart = []
    else:  # Form
        inner = _form_entries(slot, spath, diags)
        zeros = [e for e in inner if e.number == 0]
        if not zeros:
            _err(diags, "NUMBER_GAP", "form in the dual slot has no argument 0", spath)
            node_space = None
        elif zeros[0].space.is_dual:
            _err(diags, "SPACE_MISMATCH", "form in the dual slot must have a primal argument 0", spath)
            node_space = zeros[0].space.primal
        else:
            node_space = zeros[0].space
        vpart = _consume_zero(inner, diags, spath, "form")

    opath = path + ("operand",)
    operand = node.operand
    if isinstance(operand, Form):
        inner = _form_entries(operand, opath, diags)
        zeros = [e for e in inner if e.number == 0]
        if not zeros:
            _err(diags, "NUMBER_GAP", "form in the operand slot has no argument 0", opath)
        else:
            z = zeros[0]
            if not z.space.is_dual:
                _err(diags, "SPACE_MISMATCH", "form in the operand slot must have a dual argument 0", opath)
            elif node_space is not None and z.space.primal != node_space:
                _err(
                    diags,
                    "SPACE_MISMATCH",
                    f"operand form produces values in {z.space.primal.label}, "
                    f"dual slot pairs over {node_space.label}",
                    opath,
                )
        upart = _consume_zero(inner, diags, opath, "form")
    else:
        upart = _expr_entries(operand, opath, diags)

    own = upart + vpart
    _check_duplicates(own, diags, path)
    return own


def _mesh_check(expr: Expr, mesh: Mesh, path: tuple, diags: list[Diagnostic]) -> None:
    if isinstance(expr, (Argument, Coargument, Coefficient, Cofunction)):
        if expr.space.mesh != mesh:
            _err(diags, "MESH_MISMATCH", f"terminal on a different mesh than its integral: {expr}", path)
    elif isinstance(expr, (Add, Mul)):
        for i, child in enumerate(expr.children):
            _mesh_check(child, mesh, path + (i,), diags)
    elif isinstance(expr, Scale):
        _mesh_check(expr.child, mesh, path + (0,), diags)
    elif isinstance(expr, (Delta, ExternalOp)):
        try:
            out_mesh = expr.node_space.mesh if isinstance(expr, Delta) else expr.output_space.mesh
        except FormError:
            return  # slot problems are reported elsewhere
        if out_mesh != mesh:
            _err(diags, "MESH_MISMATCH", "nested operator produces values on a different mesh", path)


def _term_entries(term: FormTerm, path: tuple, diags: list[Diagnostic]) -> list[SigEntry]:
    if isinstance(term, IntegralTerm):
        _mesh_check(term.integrand, term.mesh, path, diags)
        ent = _expr_entries(term.integrand, path, diags)
        _check_duplicates(ent, diags, path)
        return ent
    if isinstance(term, DeltaTerm):
        return _node_entries(term.node, path, diags)
    if isinstance(term, ExternalOperatorTerm):
        return _node_entries(term.node, path, diags)
    if isinstance(term, CofunctionTerm):
        return [SigEntry(term.cofunction.space.primal, 0)]
    if isinstance(term, AdjointTerm):
        inner = _form_entries(term.form, path + ("adjoint",), diags)
        if sorted(e.number for e in inner) != [0, 1]:
            _err(diags, "SIGNATURE_MISMATCH", "transposed form does not have arguments 0 and 1", path)
            return inner
        return [SigEntry(e.space, 1 - e.number) for e in inner]
    raise TypeError(f"unexpected form term {type(term).__name__}")


def _form_entries(form: Form, path: tuple, diags: list[Diagnostic]) -> list[SigEntry]:
    rep: list[SigEntry] | None = None
    for idx, (_, term) in enumerate(form.terms):
        ent = _term_entries(term, path + (idx,), diags)
        if rep is None:
            rep = ent
        elif _entry_set(ent) != _entry_set(rep):
            _err(diags, "SIGNATURE_MISMATCH", "terms of the form carry different argument signatures", path + (idx,))
    return rep or []


# --------------------------------------------------------------------------
# Public analysis entry points


def arguments_of(form_like) -> tuple[SigEntry, ...]:
    """Surviving arguments of a form, with consumption applied; raises the
    typed error of the first problem found.  Contiguity is not required
    here, so intermediate compositions can be inspected."""
    form = as_form(form_like)
    diags: list[Diagnostic] = []
    entries = _form_entries(form, (), diags)
    if diags:
        _raise_for(diags[0])
    return tuple(entries)


def validate(form_like) -> Signature | list[Diagnostic]:
    """Signature of a well-formed form, or the list of everything wrong."""
    form = as_form(form_like)
    diags: list[Diagnostic] = []
    entries = _form_entries(form, (), diags)
    if not diags:
        numbers = sorted(e.number for e in entries)
        if numbers != list(range(len(numbers))):
            _err(diags, "NUMBER_GAP", f"argument numbers {numbers} are not contiguous from 0", ())
    if diags:
        return diags
    return Signature(tuple(sorted(entries, key=lambda e: -e.number)))


def arguments(form_like) -> Signature:
    """Like :func:`validate` but raises the first problem as an exception."""
    result = validate(form_like)
    if isinstance(result, Signature):
        return result
    _raise_for(result[0])
    raise AssertionError("unreachable")


def curried_signature(sig: Signature) -> str:
    """Render a signature and its operator reading, e.g. ``V × V → ℝ = V → V*``."""
    if sig.arity == 0:
        return "ℝ"
    labels = [e.space.label for e in sig.entries]
    form_part = " × ".join(labels) + " → ℝ"
    zero = sig.entries[-1]
    out_label = zero.space.primal.label if zero.space.is_dual else zero.space.dual.label
    if sig.arity == 1:
        return f"{form_part} = {out_label}"
    op_part = " × ".join(labels[:-1]) + " → " + out_label
    return f"{form_part} = {op_part}"


# --------------------------------------------------------------------------
# Lowering to an assembly plan


@dataclass(frozen=True, slots=True)
class PrimitiveStep:
    """Directly assemble a form with no nested operator nodes.  ``bindings``
    name placeholder terminals whose values come from earlier steps."""

    form: Form
    bindings: tuple[tuple[Terminal, int], ...] = ()


@dataclass(frozen=True, slots=True)
class IdentityStep:
    """A cofunction assembles to itself."""

    cofunction: Cofunction


@dataclass(frozen=True, slots=True)
class ContractStep:
    """Contract the fresh-argument axis of step ``outer`` against the
    argument-0 axis of step ``inner``; ``perm`` reorders the surviving axes
    ascending by argument number and ``entries`` names them."""

    outer: int
    inner: int
    outer_axis: int
    perm: tuple[int, ...]
    entries: tuple[SigEntry, ...]


@dataclass(frozen=True, slots=True)
class CombineStep:
    """Weighted sum of earlier steps with identical shapes and spaces."""

    inputs: tuple[int, ...]
    weights: tuple[float, ...]


PlanStep = PrimitiveStep | IdentityStep | ContractStep | CombineStep


@dataclass(frozen=True, slots=True)
class AssemblyPlan:
    steps: tuple[PlanStep, ...]
    result: int

    def __str__(self):
        lines = []
        for i, step in enumerate(self.steps):
            if isinstance(step, PrimitiveStep):
                suffix = ""
                if step.bindings:
                    suffix = " using " + ", ".join(f"{t} <- s{j}" for t, j in step.bindings)
                lines.append(f"s{i}: assemble {step.form}{suffix}")
            elif isinstance(step, IdentityStep):
                lines.append(f"s{i}: identity {step.cofunction}")
            elif isinstance(step, ContractStep):
                lines.append(f"s{i}: contract s{step.outer}[axis {step.outer_axis}] @ s{step.inner}")
            else:
                parts = " + ".join(f"{w} * s{j}" for j, w in zip(step.inputs, step.weights))
                lines.append(f"s{i}: combine {parts}")
        lines.append(f"result: s{self.result}")
        return "\n".join(lines)


def _strict_entries(collect, *args) -> list[SigEntry]:
    diags: list[Diagnostic] = []
    entries = collect(*args, (), diags)
    if diags:
        _raise_for(diags[0])
    return entries


def _first_site_expr(expr: Expr):
    if isinstance(expr, (Delta, ExternalOp)):
        return expr
    if isinstance(expr, (Add, Mul)):
        for child in expr.children:
            site = _first_site_expr(child)
            if site is not None:
                return site
        return None
    if isinstance(expr, Scale):
        return _first_site_expr(expr.child)
    return None


def _first_site(term: FormTerm):
    """First nested operator node (or nested form) inside a term, in a
    deterministic traversal order; None if the term is primitive."""
    if isinstance(term, IntegralTerm):
        return _first_site_expr(term.integrand)
    if isinstance(term, DeltaTerm):
        node = term.node
        if isinstance(node.operand, Form):
            return node.operand
        site = _first_site_expr(node.operand)
        if site is not None:
            return site
        if isinstance(node.dual_operand, Form):
            return node.dual_operand
        return None
    if isinstance(term, ExternalOperatorTerm):
        for op in term.node.operands:
            site = _first_site_expr(op)
            if site is not None:
                return site
        return None
    return None


def _site_entries(site) -> list[SigEntry]:
    if isinstance(site, Form):
        return _strict_entries(_form_entries, site)
    return _strict_entries(_node_entries, site)


def _terminals_of_expr(expr: Expr):
    if isinstance(expr, Terminal):
        yield expr
    elif isinstance(expr, (Add, Mul)):
        for child in expr.children:
            yield from _terminals_of_expr(child)
    elif isinstance(expr, Scale):
        yield from _terminals_of_expr(expr.child)
    elif isinstance(expr, Delta):
        for slot in (expr.operand, expr.dual_operand):
            if isinstance(slot, Form):
                yield from _terminals_of_form(slot)
            else:
                yield from _terminals_of_expr(slot)
    elif isinstance(expr, ExternalOp):
        for op in expr.operands:
            yield from _terminals_of_expr(op)


def _terminals_of_form(form: Form):
    for _, term in form.terms:
        if isinstance(term, IntegralTerm):
            yield from _terminals_of_expr(term.integrand)
        elif isinstance(term, (DeltaTerm, ExternalOperatorTerm)):
            yield from _terminals_of_expr(term.node)
        elif isinstance(term, CofunctionTerm):
            yield term.cofunction
        else:
            yield from _terminals_of_form(term.form)


def _plan_form(form: Form, steps: list[PlanStep], bindings: dict) -> int:
    parts: list[tuple[float, int]] = []
    plain: list[tuple[float, FormTerm]] = []
    for weight, term in form.terms:
        if isinstance(term, CofunctionTerm) and term.cofunction not in bindings:
            steps.append(IdentityStep(term.cofunction))
            parts.append((weight, len(steps) - 1))
        elif _first_site(term) is not None:
            parts.append((1.0, _plan_nested(weight, term, steps, bindings)))
        else:
            plain.append((weight, term))
    if plain:
        sub = Form(tuple(plain))
        bound = tuple((t, bindings[t]) for t in dict.fromkeys(_terminals_of_form(sub)) if t in bindings)
        steps.append(PrimitiveStep(sub, bound))
        parts.append((1.0, len(steps) - 1))
    if len(parts) == 1 and parts[0][0] == 1.0:
        return parts[0][1]
    steps.append(CombineStep(tuple(i for _, i in parts), tuple(w for w, _ in parts)))
    return len(steps) - 1


def _plan_nested(weight: float, term: FormTerm, steps: list[PlanStep], bindings: dict) -> int:
    site = _first_site(term)
    own = _site_entries(site)
    zeros = [e for e in own if e.number == 0]
    if not zeros:
        raise NumberGapError("nested operator has no argument 0; validation should have caught this")
    arg0 = zeros[0]
    survivors = list(own)
    survivors.remove(arg0)

    inner_idx = _plan_form(as_form(site) if not isinstance(site, Form) else site, steps, bindings)
    term_form = Form(((weight, term),))

    if not survivors:
        out_space = arg0.space.dual
        placeholder: Terminal = (
            Cofunction(out_space, None) if out_space.is_dual else Coefficient(out_space, None)
        )
        replaced = replace(term_form, {site: placeholder})
        return _plan_form(replaced, steps, {**bindings, placeholder: inner_idx})

    term_entries = _strict_entries(_term_entries, term)
    survivor_numbers = {e.number for e in survivors}
    remaining = [e for e in term_entries if e.number not in survivor_numbers]
    fresh_number = max((e.number for e in remaining), default=-1) + 1
    fresh_space = arg0.space.dual
    fresh: Terminal = (
        Coargument(fresh_space, fresh_number) if fresh_space.is_dual else Argument(fresh_space, fresh_number)
    )
    replaced = replace(term_form, {site: fresh})
    outer_idx = _plan_form(replaced, steps, bindings)

    outer_numbers = sorted([e.number for e in remaining] + [fresh_number])
    outer_axis = outer_numbers.index(fresh_number)
    combined = sorted(remaining + survivors, key=lambda e: e.number)
    concat_numbers = sorted(e.number for e in remaining) + sorted(e.number for e in survivors)
    perm = tuple(concat_numbers.index(e.number) for e in combined)
    if arg0.space.dim != fresh_space.dim:
        raise SpaceError("contraction dimensions disagree; planner invariant broken")
    steps.append(ContractStep(outer_idx, inner_idx, outer_axis, perm, tuple(combined)))
    return len(steps) - 1


def plan(form_like) -> AssemblyPlan:
    """Lower a validated form to a DAG of primitive assemblies, identities,
    contractions and weighted sums.  Deterministic for identical inputs."""
    form = as_form(form_like)
    arguments(form)  # raise the first diagnostic if the form is ill-formed
    steps: list[PlanStep] = []
    result = _plan_form(form, steps, {})
    return AssemblyPlan(tuple(steps), result)
