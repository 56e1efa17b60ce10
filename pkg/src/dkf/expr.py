"""Restricted arithmetic expressions for scenario files.

Scenario documents describe switching signals, matrix schedules and the
uncertain-dynamics / bias generators as small componentwise expressions
in the time index ``k``, the 1-based sensor index ``i``, the state
components ``x1..xn`` and the per-run initial bias ``b0``.  Only plain
arithmetic and a fixed function set (sin, cos, sqrt, abs, floor, mod,
sat, min, max) are admitted; anything else is rejected at load time.
"""

from __future__ import annotations

import ast
import math

from .errors import ValidationError

_ALLOWED_FUNCS = {
    "sin": math.sin,
    "cos": math.cos,
    "sqrt": math.sqrt,
    "abs": abs,
    "floor": math.floor,
    "mod": lambda a, b: a % b,
    "sat": lambda f, b: max(min(f, b), -b),
    "min": min,
    "max": max,
}

_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.Mod, ast.USub, ast.UAdd,
    ast.Load,
)


class CompiledExpr:
    """A validated, compiled scalar expression."""

    def __init__(self, source: str):
        self.source = source
        try:
            tree = ast.parse(source, mode="eval")
        except SyntaxError as exc:
            raise ValidationError(f"bad expression {source!r}: {exc}") from exc
        names = _validate(tree, source)
        self.free_names = names - set(_ALLOWED_FUNCS)
        self._code = compile(tree, f"<expr {source!r}>", "eval")

    def __call__(self, **env) -> float:
        missing = self.free_names - set(env)
        if missing:
            raise ValidationError(
                f"expression {self.source!r} needs {sorted(missing)}"
            )
        scope = dict(_ALLOWED_FUNCS)
        scope.update(env)
        return float(eval(self._code, {"__builtins__": {}}, scope))

    def __repr__(self) -> str:
        return f"CompiledExpr({self.source!r})"


def _validate(tree: ast.AST, source: str) -> set[str]:
    names: set[str] = set()
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ValidationError(
                f"expression {source!r}: {type(node).__name__} not allowed"
            )
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _ALLOWED_FUNCS:
                raise ValidationError(
                    f"expression {source!r}: only {sorted(_ALLOWED_FUNCS)} may be called"
                )
            if node.keywords:
                raise ValidationError(f"expression {source!r}: keyword args not allowed")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ValidationError(f"expression {source!r}: only numeric constants")
        if isinstance(node, ast.Name):
            names.add(node.id)
    return names


def compile_expr(source) -> CompiledExpr:
    if isinstance(source, CompiledExpr):
        return source
    if isinstance(source, (int, float)):
        return CompiledExpr(repr(float(source)))
    return CompiledExpr(str(source))
