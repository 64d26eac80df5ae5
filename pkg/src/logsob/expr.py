"""A small, safe expression language for densities over vertex coordinates.

Allowed: numbers, ``pi``, ``e``, coordinates ``x1 .. xN``, ``+ - * /``,
unary minus and the functions ``exp``, ``log``, ``sin``, ``cos``.  Anything
else is rejected before evaluation.
"""

from __future__ import annotations

import ast
import math
import re

import numpy as np

from .errors import ExpressionError


_FUNCS = {"exp": np.exp, "log": np.log, "sin": np.sin, "cos": np.cos}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide}
_COORD = re.compile(r"x([1-9][0-9]*)\Z")


def _check(node, dim):
    if isinstance(node, ast.Expression):
        return _check(node.body, dim)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return
    if isinstance(node, ast.Name):
        m = _COORD.match(node.id)
        if node.id in _CONSTS or (m and int(m.group(1)) <= dim):
            return
        raise ExpressionError(f"unknown name {node.id!r} (coordinates are x1..x{dim})")
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        _check(node.left, dim)
        _check(node.right, dim)
        return
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        return _check(node.operand, dim)
    if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS
            and len(node.args) == 1 and not node.keywords):
        return _check(node.args[0], dim)
    raise ExpressionError(f"unsupported syntax: {ast.dump(node)[:60]}")


def _eval(node, X):
    if isinstance(node, ast.Expression):
        return _eval(node.body, X)
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id in _CONSTS:
            return _CONSTS[node.id]
        return X[:, int(node.id[1:]) - 1]
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, X), _eval(node.right, X))
    if isinstance(node, ast.UnaryOp):
        v = _eval(node.operand, X)
        return -v if isinstance(node.op, ast.USub) else v
    return _FUNCS[node.func.id](_eval(node.args[0], X))


def compile_expression(text: str, dim: int):
    """Validate ``text`` and return a function of an (V, dim) coordinate array."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse density expression: {exc.msg}") from None
    _check(tree, dim)

    def evaluate(X):
        X = np.asarray(X, dtype=float)
        with np.errstate(all="ignore"):
            out = _eval(tree, X)
        return np.broadcast_to(np.asarray(out, dtype=float), (X.shape[0],)).copy()

    return evaluate


def evaluate_expression(text: str, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return compile_expression(text, X.shape[1])(X)
