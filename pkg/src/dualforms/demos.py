"""Named demonstration scripts for the command line front end.

Each demo builds a small construction on fixed spaces, prints what it built,
its signature, the assembly plan where composition is involved, and the
assembled tensors.  Demos are pure: repeated runs produce identical output.
"""

from __future__ import annotations

from .analysis import curried_signature, plan, validate
from .assemble import assemble, transpose
from .fem import P1, Space, function_space, make_interval_mesh
from .ir import (
    Mul,
    SpatialCoordinate,
    action,
    argument,
    as_form,
    delta,
    dx,
    make_cofunction,
    make_function,
    replace,
)
from .scenario import format_tensor

__all__ = ["DEMOS", "run_demo"]


def _spaces() -> tuple[Space, Space]:
    V = function_space(make_interval_mesh(2, 1.0), P1, name="V")
    W = function_space(make_interval_mesh(1, 1.0), P1, name="W")
    return V, W


def _section(*chunks: str) -> str:
    return "\n".join(chunks).rstrip() + "\n"


def _show(label: str, form_like) -> str:
    sig = validate(as_form(form_like))
    return f"{label}: {form_like}\n  signature: {curried_signature(sig)}"


def demo_f0_f1_f2() -> str:
    V, _ = _spaces()
    c = make_function(V, [1.0, 2.0, 3.0])
    v = argument(V, 0)
    u = argument(V, 1)
    f0 = c * dx
    f1 = v * dx
    f2 = u * v * dx
    return _section(
        "A known function assembles to a number, an unknown one to a vector",
        "of dual coefficients, and two unknowns to a matrix.",
        "",
        _show("f0 = c * dx", f0),
        format_tensor(assemble(f0)),
        _show("f1 = v * dx", f1),
        format_tensor(assemble(f1)),
        _show("f2 = u * v * dx", f2),
        format_tensor(assemble(f2)),
    )


def demo_delta_interp() -> str:
    V, _ = _spaces()
    x = SpatialCoordinate()
    v_ = argument(V.dual, 0)
    f = delta(Mul((x, x)), v_)
    return _section(
        "Interpolating x**2 into V: evaluate it at the nodes of V.",
        "",
        _show("delta(x * x, v_)", f),
        format_tensor(assemble(f)),
    )


def demo_delta_matrix() -> str:
    V, W = _spaces()
    u = argument(W, 1)
    v_ = argument(V.dual, 0)
    f = delta(u, v_)
    return _section(
        "With an argument in the operand slot the delta assembles to the",
        "interpolation operator from W into V.",
        "",
        _show("delta(u, v_)", f),
        format_tensor(assemble(f)),
    )


def demo_delta_adjoint() -> str:
    V, W = _spaces()
    u = argument(W, 1)
    v_ = argument(V.dual, 0)
    forward = delta(u, v_)
    v = argument(W, 0)
    u_ = argument(V.dual, 1)
    backward = delta(v, u_)
    a, b = assemble(forward), assemble(backward)
    same = bool((transpose(a).values == b.values).all())
    return _section(
        "Reversing the argument positions gives the adjoint operator.",
        "",
        _show("delta(u, v_)", forward),
        format_tensor(a),
        _show("delta(v, u_)", backward),
        format_tensor(b),
        f"transpose(first) == second: {same}",
    )


def demo_delta_identity() -> str:
    V, _ = _spaces()
    u = argument(V, 1)
    v_ = argument(V.dual, 0)
    f = delta(u, v_)
    return _section(
        "Pairing a space with its own dual gives the identity matrix.",
        "",
        _show("delta(u, v_)", f),
        format_tensor(assemble(f)),
    )


def demo_dual_eval() -> str:
    V, _ = _spaces()
    f = make_cofunction(V.dual, [0.25, 0.5, 0.25])
    c = make_function(V, [1.0, 1.0, 1.0])
    t = delta(c, f)
    sugar = f(c)
    return _section(
        "A cofunction evaluates a known function to a number; f(c) is sugar",
        "for the same delta node.",
        "",
        _show("t = delta(c, f)", t),
        format_tensor(assemble(t)),
        f"f(c) == delta(c, f): {sugar == t}",
    )


def demo_cofunction_interp() -> str:
    V, W = _spaces()
    f = make_cofunction(V.dual, [1.0, 0.0, 0.0])
    u = argument(W, 0)
    g = delta(u, f)
    return _section(
        "Interpolating a cofunction lands in the dual of the new space and",
        "is the transpose of function interpolation.",
        "",
        _show("g = delta(u, f)", g),
        format_tensor(assemble(g)),
    )


def demo_F1() -> str:
    V, W = _spaces()
    f = make_function(W, [1.0, 1.0])
    v_ = argument(V.dual, 0)
    v = argument(V, 0)
    F1 = delta(f, v_) * v * dx
    return _section(
        "A known function interpolated from W feeds a 1-form over V: the",
        "plan assembles the interpolation into a temporary function first.",
        "",
        _show("F1 = delta(f, v_) * v * dx", F1),
        "plan:",
        str(plan(F1)),
        "",
        format_tensor(assemble(F1)),
    )


def demo_F2() -> str:
    V, W = _spaces()
    w = argument(W, 1)
    v_ = argument(V.dual, 0)
    v = argument(V, 0)
    u = argument(V, 1)
    F2 = delta(w, v_) * v * dx
    tmp_1 = assemble(delta(w, v_))
    tmp_2 = assemble(replace(F2, {delta(w, v_): u}))
    result = assemble(F2)
    return _section(
        "An unknown interpolated from W composes with a 2-form over V; the",
        "nested delta becomes a matrix contracted on the right.",
        "",
        _show("F2 = delta(w, v_) * v * dx", F2),
        "plan:",
        str(plan(F2)),
        "",
        "tmp_1 = assemble(delta(w, v_)):",
        format_tensor(tmp_1),
        "tmp_2 = assemble(replace(F2, {delta(w, v_): u})):",
        format_tensor(tmp_2),
        "tmp_2 @ tmp_1:",
        format_tensor(result),
    )


def demo_F4_nested() -> str:
    V, W = _spaces()
    w = argument(W, 0)
    u = argument(V, 1)
    v = argument(V, 0)
    F4 = delta(w, u * v * dx)
    return _section(
        "Interpolation on the argument-0 side cannot nest inside the",
        "integrand; instead the 2-form fills the dual slot of a delta.",
        "",
        _show("F4 = delta(w, u * v * dx)", F4),
        "plan:",
        str(plan(F4)),
        "",
        format_tensor(assemble(F4)),
    )


def demo_F4_action() -> str:
    V, W = _spaces()
    w = argument(W, 0)
    omega = argument(V.dual, 1)
    u = argument(V, 1)
    v = argument(V, 0)
    base = delta(w, omega)
    F4 = action(base, u * v * dx)
    return _section(
        "The same composition as the nested construction, built by taking",
        "the action of a delta operator on a 2-form.",
        "",
        _show("base = delta(w, omega)", base),
        _show("F4 = action(base, u * v * dx)", F4),
        "plan:",
        str(plan(F4)),
        "",
        format_tensor(assemble(F4)),
    )


def demo_cofunction_sum() -> str:
    V, _ = _spaces()
    f = make_cofunction(V.dual, [1.0, 2.0, 3.0])
    v = argument(V, 0)
    g = f + v * dx
    lhs = assemble(g)
    rhs = assemble(v * dx)
    return _section(
        "A cofunction is a 1-form, so it adds to one; assembly of the",
        "cofunction itself is the identity.",
        "",
        _show("g = f + v * dx", g),
        format_tensor(lhs),
        "assemble(v * dx) alone:",
        format_tensor(rhs),
        "assemble(f) alone:",
        format_tensor(assemble(as_form(f))),
    )


DEMOS = {
    "f0_f1_f2": demo_f0_f1_f2,
    "delta_interp": demo_delta_interp,
    "delta_matrix": demo_delta_matrix,
    "delta_adjoint": demo_delta_adjoint,
    "delta_identity": demo_delta_identity,
    "dual_eval": demo_dual_eval,
    "cofunction_interp": demo_cofunction_interp,
    "F1": demo_F1,
    "F2": demo_F2,
    "F4_nested": demo_F4_nested,
    "F4_action": demo_F4_action,
    "cofunction_sum": demo_cofunction_sum,
}


def run_demo(name: str) -> str:
    return DEMOS[name]()
