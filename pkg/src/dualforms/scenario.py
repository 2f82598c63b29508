"""Scenario files: declarative meshes, spaces, terminals, forms and requests.

The file format is YAML with a ``schema: 1`` marker.  Forms are tagged node
trees; ``{ref: name}`` points at a terminal or another form, and the
operator nodes mirror the library constructors (``add``, ``mul``, ``scale``,
``integral``, ``delta``, ``adjoint``, ``action``, ``replace``,
``external``).  Loading is strict: unknown keys, missing references and
malformed nodes are parse errors, while violations of the form algebra
(shape, space, mesh or signature problems) surface as the library's typed
errors.

Assembled tensors serialize to a small line-oriented text format: ``kind``
and ``shape`` headers, one space descriptor line per axis, then row-major
values with 17 significant digits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .assemble import AssembledTensor, DenseMatrix, DenseVector, Scalar
from .errors import CycleError, FormError
from .fem import Element, Mesh, Space
from .ir import (
    Add,
    Coefficient,
    Cofunction,
    Constant,
    Delta,
    Expr,
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
    replace,
)

__all__ = [
    "Scenario",
    "Request",
    "ScenarioParseError",
    "scenario_from_text",
    "load_scenario",
    "dump_scenario",
    "format_tensor",
]

_ACTIONS = ("validate", "signature", "assemble")
_TERMINAL_KINDS = ("argument", "coefficient", "cofunction", "spatial_coordinate", "constant")
_OPS = ("add", "mul", "scale", "integral", "delta", "adjoint", "action", "replace", "external")


class ScenarioParseError(FormError):
    """The file does not parse or does not follow the schema."""


def _fail(path: tuple, message: str):
    where = "/".join(str(p) for p in path) or "<root>"
    raise ScenarioParseError(f"at {where}: {message}")


def _expect_mapping(obj, path: tuple) -> dict:
    if not isinstance(obj, dict):
        _fail(path, f"expected a mapping, got {type(obj).__name__}")
    return obj


def _take(mapping: dict, path: tuple, required: tuple[str, ...], optional: tuple[str, ...] = ()) -> dict:
    unknown = set(mapping) - set(required) - set(optional)
    if unknown:
        _fail(path, f"unknown keys {sorted(unknown)}")
    for key in required:
        if key not in mapping:
            _fail(path, f"missing key {key!r}")
    return mapping


@dataclass(frozen=True, slots=True)
class Request:
    target: str
    action: str
    output: str | None = None


@dataclass
class Scenario:
    """A parsed scenario; forms are fully built IR objects."""

    meshes: dict[str, Mesh]
    elements: dict[str, Element]
    spaces: dict[str, Space]
    terminals: dict[str, Expr]
    forms: dict[str, object]  # Form | Delta | ExternalOp
    requests: list[Request]
    _space_refs: dict[str, tuple[str, str, bool]] = field(default_factory=dict, repr=False)
    _terminal_trees: dict[str, dict] = field(default_factory=dict, repr=False)
    _form_trees: dict[str, object] = field(default_factory=dict, repr=False)

    def targets(self) -> list[tuple[str, object, Request | None]]:
        """Requested forms in order, or every form when nothing is requested."""
        if self.requests:
            return [(r.target, self.forms[r.target], r) for r in self.requests]
        return [(name, form, None) for name, form in self.forms.items()]

    def to_dict(self) -> dict:
        out: dict = {"schema": 1}
        out["meshes"] = {k: {"n_cells": m.n_cells, "length": m.length} for k, m in self.meshes.items()}
        out["elements"] = {k: {"family": e.family, "degree": e.degree} for k, e in self.elements.items()}
        out["spaces"] = {
            k: {"mesh": mesh, "element": element, "dual": dual}
            for k, (mesh, element, dual) in self._space_refs.items()
        }
        out["terminals"] = {k: dict(tree) for k, tree in self._terminal_trees.items()}
        out["forms"] = {k: tree for k, tree in self._form_trees.items()}
        out["requests"] = [
            {"target": r.target, "action": r.action, **({"output": r.output} if r.output else {})}
            for r in self.requests
        ]
        return out

    def __eq__(self, other):
        return isinstance(other, Scenario) and other.to_dict() == self.to_dict()


def scenario_from_text(text: str) -> Scenario:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioParseError(f"invalid YAML: {exc}") from exc
    data = _expect_mapping(data, ())
    _take(data, (), ("schema",), ("meshes", "elements", "spaces", "terminals", "forms", "requests"))
    if data["schema"] != 1:
        _fail(("schema",), f"unsupported schema version {data['schema']!r}")

    meshes: dict[str, Mesh] = {}
    for name, spec in _expect_mapping(data.get("meshes", {}), ("meshes",)).items():
        path = ("meshes", name)
        spec = _take(_expect_mapping(spec, path), path, ("n_cells", "length"))
        meshes[name] = Mesh(spec["n_cells"], spec["length"])

    elements: dict[str, Element] = {}
    for name, spec in _expect_mapping(data.get("elements", {}), ("elements",)).items():
        path = ("elements", name)
        spec = _take(_expect_mapping(spec, path), path, ("degree",), ("family",))
        elements[name] = Element(spec.get("family", "Lagrange"), spec["degree"])

    spaces: dict[str, Space] = {}
    space_refs: dict[str, tuple[str, str, bool]] = {}
    for name, spec in _expect_mapping(data.get("spaces", {}), ("spaces",)).items():
        path = ("spaces", name)
        spec = _take(_expect_mapping(spec, path), path, ("mesh", "element"), ("dual",))
        if spec["mesh"] not in meshes:
            _fail(path, f"unknown mesh {spec['mesh']!r}")
        if spec["element"] not in elements:
            _fail(path, f"unknown element {spec['element']!r}")
        is_dual = bool(spec.get("dual", False))
        base = Space(meshes[spec["mesh"]], elements[spec["element"]], name=name)
        spaces[name] = base.dual if is_dual else base
        space_refs[name] = (spec["mesh"], spec["element"], is_dual)

    terminals: dict[str, Expr] = {}
    terminal_trees: dict[str, dict] = {}
    for name, spec in _expect_mapping(data.get("terminals", {}), ("terminals",)).items():
        path = ("terminals", name)
        spec = _expect_mapping(spec, path)
        kind = spec.get("kind")
        if kind not in _TERMINAL_KINDS:
            _fail(path, f"kind must be one of {_TERMINAL_KINDS}, got {kind!r}")
        if kind == "argument":
            spec = _take(spec, path, ("kind", "space", "number"))
            terminals[name] = argument(_space_ref(spec["space"], spaces, path), spec["number"])
        elif kind == "coefficient":
            spec = _take(spec, path, ("kind", "space"), ("values",))
            terminals[name] = Coefficient(_space_ref(spec["space"], spaces, path), spec.get("values"))
        elif kind == "cofunction":
            spec = _take(spec, path, ("kind", "space"), ("values",))
            terminals[name] = Cofunction(_space_ref(spec["space"], spaces, path), spec.get("values"))
        elif kind == "spatial_coordinate":
            _take(spec, path, ("kind",))
            terminals[name] = SpatialCoordinate()
        else:
            spec = _take(spec, path, ("kind", "value"))
            terminals[name] = Constant(spec["value"])
        tree = {"kind": kind}
        for key in ("space", "number", "value"):
            if key in spec:
                tree[key] = spec[key]
        if spec.get("values") is not None:
            tree["values"] = [float(v) for v in spec["values"]]
        terminal_trees[name] = tree

    form_trees = _expect_mapping(data.get("forms", {}), ("forms",))
    builder = _FormBuilder(meshes, spaces, terminals, form_trees)
    forms = {name: builder.form(name) for name in form_trees}

    requests: list[Request] = []
    raw_requests = data.get("requests", [])
    if not isinstance(raw_requests, list):
        _fail(("requests",), "expected a list")
    for i, spec in enumerate(raw_requests):
        path = ("requests", i)
        spec = _take(_expect_mapping(spec, path), path, ("target", "action"), ("output",))
        if spec["target"] not in forms:
            _fail(path, f"unknown form {spec['target']!r}")
        if spec["action"] not in _ACTIONS:
            _fail(path, f"action must be one of {_ACTIONS}")
        requests.append(Request(spec["target"], spec["action"], spec.get("output")))

    return Scenario(
        meshes,
        elements,
        spaces,
        terminals,
        forms,
        requests,
        _space_refs=space_refs,
        _terminal_trees=terminal_trees,
        _form_trees={k: v for k, v in form_trees.items()},
    )


def _space_ref(name, spaces: dict[str, Space], path: tuple) -> Space:
    if name not in spaces:
        _fail(path, f"unknown space {name!r}")
    return spaces[name]


class _FormBuilder:
    """Builds form trees with memoization and reference-cycle detection."""

    def __init__(self, meshes, spaces, terminals, trees):
        self.meshes = meshes
        self.spaces = spaces
        self.terminals = terminals
        self.trees = trees
        self.built: dict[str, object] = {}
        self.in_progress: list[str] = []

    def form(self, name: str):
        if name in self.built:
            return self.built[name]
        if name in self.in_progress:
            chain = " -> ".join(self.in_progress + [name])
            raise CycleError(f"form references form a cycle: {chain}")
        self.in_progress.append(name)
        try:
            result = self.node(self.trees[name], ("forms", name))
        finally:
            self.in_progress.pop()
        self.built[name] = result
        return result

    def node(self, tree, path: tuple):
        tree = _expect_mapping(tree, path)
        if "ref" in tree:
            _take(tree, path, ("ref",))
            name = tree["ref"]
            if name in self.terminals:
                return self.terminals[name]
            if name in self.trees:
                return self.form(name)
            _fail(path, f"unknown reference {name!r}")
        op = tree.get("op")
        if op not in _OPS:
            _fail(path, f"op must be one of {_OPS}, got {op!r}")
        method = getattr(self, f"_op_{op}")
        return method(tree, path)

    def _children(self, tree, path, key="children") -> list:
        raw = tree.get(key)
        if not isinstance(raw, list) or not raw:
            _fail(path, f"{key!r} must be a non-empty list")
        return [self.node(child, path + (key, i)) for i, child in enumerate(raw)]

    def _op_add(self, tree, path):
        _take(tree, path, ("op", "children"))
        children = self._children(tree, path)
        if any(isinstance(c, (Form, Cofunction, Delta, ExternalOp)) for c in children):
            out = as_form(children[0])
            for child in children[1:]:
                out = out + as_form(child)
            return out
        return Add(tuple(children))

    def _op_mul(self, tree, path):
        _take(tree, path, ("op", "children"))
        children = self._children(tree, path)
        for child in children:
            if isinstance(child, Form):
                _fail(path, "forms cannot be multiplied inside an expression; nest via delta or action")
        return Mul(tuple(children))

    def _op_scale(self, tree, path):
        _take(tree, path, ("op", "factor", "child"))
        child = self.node(tree["child"], path + ("child",))
        factor = float(tree["factor"])
        if isinstance(child, (Form, Cofunction)):
            return as_form(child) * factor
        return Scale(factor, child)

    def _op_integral(self, tree, path):
        _take(tree, path, ("op", "integrand"), ("measure", "mesh"))
        measure = tree.get("measure", "dx")
        if measure != "dx":
            _fail(path, f"measure must be 'dx', got {measure!r}")
        integrand = self.node(tree["integrand"], path + ("integrand",))
        if "mesh" in tree:
            if tree["mesh"] not in self.meshes:
                _fail(path, f"unknown mesh {tree['mesh']!r}")
            return integrand * dx(self.meshes[tree["mesh"]])
        return integrand * dx

    def _op_delta(self, tree, path):
        _take(tree, path, ("op", "operand", "dual_operand"))
        operand = self.node(tree["operand"], path + ("operand",))
        dual_operand = self.node(tree["dual_operand"], path + ("dual_operand",))
        if isinstance(dual_operand, (Delta, ExternalOp)):
            dual_operand = as_form(dual_operand)
        return delta(operand, dual_operand)

    def _op_adjoint(self, tree, path):
        _take(tree, path, ("op", "form"))
        return adjoint(self.node(tree["form"], path + ("form",)))

    def _op_action(self, tree, path):
        _take(tree, path, ("op", "form", "operand"))
        form = self.node(tree["form"], path + ("form",))
        operand = self.node(tree["operand"], path + ("operand",))
        return action(form, operand)

    def _op_replace(self, tree, path):
        _take(tree, path, ("op", "form", "mapping"))
        form = self.node(tree["form"], path + ("form",))
        raw = tree.get("mapping")
        if not isinstance(raw, list):
            _fail(path, "'mapping' must be a list of {old, new} pairs")
        mapping = {}
        for i, pair in enumerate(raw):
            ppath = path + ("mapping", i)
            pair = _take(_expect_mapping(pair, ppath), ppath, ("old", "new"))
            mapping[self.node(pair["old"], ppath + ("old",))] = self.node(pair["new"], ppath + ("new",))
        return replace(form, mapping)

    def _op_external(self, tree, path):
        _take(tree, path, ("op", "operands", "output_space", "evaluator"), ("number",))
        operands = self._children(tree, path, key="operands")
        space = _space_ref(tree["output_space"], self.spaces, path)
        return external_operator(operands, space, tree["evaluator"], tree.get("number", 0))


def load_scenario(path: str | Path) -> Scenario:
    return scenario_from_text(Path(path).read_text())


def dump_scenario(scenario: Scenario) -> str:
    """Canonical YAML text; reloading it yields an equal scenario."""
    return yaml.safe_dump(scenario.to_dict(), sort_keys=False)


# --------------------------------------------------------------------------
# Tensor serialization


def _format_number(v: float) -> str:
    return f"{v:.16e}"


def _space_descriptor(space: Space) -> str:
    kind = "dual" if space.is_dual else "primal"
    mesh = space.mesh
    return (
        f"{kind} {space.element.family} {space.element.degree} "
        f"cells {mesh.n_cells} length {mesh.length:.17g}"
    )


def format_tensor(tensor: AssembledTensor) -> str:
    """Serialize a tensor: headers, space descriptors, then row-major values."""
    if isinstance(tensor, Scalar):
        lines = ["kind scalar", "shape", _format_number(tensor.value)]
    elif isinstance(tensor, DenseVector):
        lines = [
            "kind vector",
            f"shape {tensor.space.dim}",
            f"space {_space_descriptor(tensor.space)}",
            " ".join(_format_number(v) for v in tensor.values),
        ]
    elif isinstance(tensor, DenseMatrix):
        lines = [
            "kind matrix",
            f"shape {tensor.row_space.dim} {tensor.col_space.dim}",
            f"row_space {_space_descriptor(tensor.row_space)}",
            f"col_space {_space_descriptor(tensor.col_space)}",
        ]
        lines.extend(" ".join(_format_number(v) for v in row) for row in tensor.values)
    else:
        raise TypeError(f"cannot serialize {type(tensor).__name__}")
    return "\n".join(lines) + "\n"
