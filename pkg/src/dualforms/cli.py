"""Command line front end.

``check`` validates the forms a scenario requests and prints their
signatures; ``assemble`` additionally evaluates them and writes tensor
files; ``demo`` runs one of the named demonstration scripts.  Exit codes:
0 success, 1 semantic error (stable diagnostic codes on stderr), 2 parse
error.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .analysis import Signature, curried_signature, validate
from .assemble import assemble as assemble_form
from .demos import DEMOS
from .errors import FormError
from .ir import as_form
from .scenario import Scenario, ScenarioParseError, format_tensor, load_scenario

__all__ = ["main"]


@click.group()
def main() -> None:
    """Forms over finite element spaces with first-class duals."""


def _load(path: str) -> Scenario:
    try:
        return load_scenario(path)
    except ScenarioParseError as exc:
        click.echo(f"parse error: {exc}", err=True)
        sys.exit(2)
    except FileNotFoundError:
        click.echo(f"parse error: no such file {path!r}", err=True)
        sys.exit(2)
    except FormError as exc:
        code = exc.code or type(exc).__name__
        click.echo(f"error[{code}] {exc}", err=True)
        sys.exit(1)


def _check(scenario: Scenario) -> bool:
    ok = True
    for name, form, _ in scenario.targets():
        try:
            result = validate(as_form(form))
        except FormError as exc:
            code = exc.code or type(exc).__name__
            click.echo(f"error[{code}] {name}: {exc}", err=True)
            ok = False
            continue
        if isinstance(result, Signature):
            click.echo(f"{name}: {curried_signature(result)}")
        else:
            ok = False
            for diag in result:
                click.echo(f"{name}: {diag}", err=True)
    return ok


@main.command()
@click.argument("path", type=click.Path())
def check(path: str) -> None:
    """Validate the forms a scenario file requests."""
    scenario = _load(path)
    sys.exit(0 if _check(scenario) else 1)


@main.command("assemble")
@click.argument("path", type=click.Path())
@click.option("--output-dir", type=click.Path(file_okay=False), default=".", show_default=True)
@click.option("--quadrature-degree", type=int, default=None, help="Override the inferred quadrature degree.")
def assemble_cmd(path: str, output_dir: str, quadrature_degree: int | None) -> None:
    """Assemble requested forms and write tensor files."""
    scenario = _load(path)
    if not _check(scenario):
        sys.exit(1)
    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, form, request in scenario.targets():
        if request is not None and request.action != "assemble":
            continue
        try:
            tensor = assemble_form(as_form(form), quadrature_degree=quadrature_degree)
        except FormError as exc:
            code = exc.code or type(exc).__name__
            click.echo(f"error[{code}] {name}: {exc}", err=True)
            sys.exit(1)
        text = format_tensor(tensor)
        target = out_dir / (request.output if request and request.output else f"{name}.txt")
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text)
        shape = text.splitlines()[1].removeprefix("shape").strip()
        click.echo(f"{name} -> {target} [{tensor.kind} {shape}]".rstrip())
    sys.exit(0)


@main.command()
@click.argument("name")
def demo(name: str) -> None:
    """Run a named demonstration (see the README for the list)."""
    fn = DEMOS.get(name)
    if fn is None:
        click.echo(f"unknown demo {name!r}; available: {', '.join(sorted(DEMOS))}", err=True)
        sys.exit(1)
    click.echo(fn(), nl=False)
    sys.exit(0)


if __name__ == "__main__":
    main()
