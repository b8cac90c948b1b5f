"""Tiny arithmetic expression evaluator for scenario files.

Accepts +, -, *, /, ^ (power), exp, sin, cos, the coordinates x1..xn, the
imaginary unit i, numeric literals, unary minus, and parentheses.  Parsing
goes through the Python ast with a strict node whitelist, so nothing else
evaluates.  Results broadcast over the grid.
"""

import ast

import numpy as np

from .errors import ConfigError

_FUNCTIONS = {"exp": np.exp, "sin": np.sin, "cos": np.cos}


def _eval_node(node, names):
    if isinstance(node, ast.Expression):
        return _eval_node(node.body, names)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, (int, float)):
            return node.value
        raise ConfigError(f"literal {node.value!r} is not numeric")
    if isinstance(node, ast.Name):
        if node.id in names:
            return names[node.id]
        raise ConfigError(f"unknown symbol {node.id!r} in expression")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        val = _eval_node(node.operand, names)
        return -val if isinstance(node.op, ast.USub) else val
    if isinstance(node, ast.BinOp):
        left = _eval_node(node.left, names)
        right = _eval_node(node.right, names)
        if isinstance(node.op, ast.Add):
            return left + right
        if isinstance(node.op, ast.Sub):
            return left - right
        if isinstance(node.op, ast.Mult):
            return left * right
        if isinstance(node.op, ast.Div):
            return left / right
        if isinstance(node.op, ast.Pow):
            return left ** right
        raise ConfigError(f"operator {type(node.op).__name__} not allowed")
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS:
            raise ConfigError("only exp, sin, cos calls are allowed")
        if len(node.args) != 1 or node.keywords:
            raise ConfigError(f"{node.func.id} takes exactly one argument")
        return _FUNCTIONS[node.func.id](_eval_node(node.args[0], names))
    raise ConfigError(f"expression element {type(node).__name__} not allowed")


def evaluate(expr, grid=None, extra=None):
    """Evaluate an expression string on a grid.

    Returns a scalar or an array broadcast to the grid shape.  x1..xn bind to
    the grid coordinates, i to the imaginary unit.
    """
    if not isinstance(expr, str):
        raise ConfigError(f"expression must be a string, got {type(expr).__name__}")
    names = {"i": 1j}
    if grid is not None:
        for k, xk in enumerate(grid.coords):
            names[f"x{k + 1}"] = xk
    if extra:
        names.update(extra)
    # ^ means power here, but the Python parser would give it bitwise-xor
    # precedence (below +), so rewrite it to ** before parsing
    try:
        tree = ast.parse(expr.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {expr!r}: {exc}") from exc
    value = _eval_node(tree, names)
    if grid is not None and np.ndim(value) == 0:
        value = np.full(grid.shape, value)
    return value
