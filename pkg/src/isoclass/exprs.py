"""Expression-string parsing for symbols, diffeos, phases, and profiles.

Config files specify classical observables as strings over ``x_1..x_n`` and
``xi_1..xi_n`` with arithmetic, ``exp``, ``sin``, ``cos``, and the constants
``pi`` and ``I``.  Profile stacks use ``t_1..t_k`` and ``u_1..u_l`` instead.
Parsing and analytic differentiation are delegated to sympy; evaluators are
lambdified to numpy and always broadcast to the common input shape.
"""

from __future__ import annotations

import numpy as np
import sympy as sp

__all__ = ["ExpressionError", "parse_symbol_expr", "parse_plain_expr", "lambdify_broadcast"]

_ALLOWED_FUNCS = {"exp": sp.exp, "sin": sp.sin, "cos": sp.cos}
_ALLOWED_CONSTS = {"pi": sp.pi, "I": sp.I, "E": sp.E}


class ExpressionError(ValueError):
    """Malformed expression string or disallowed name."""


def _parse(text: str, allowed: dict[str, sp.Symbol]) -> sp.Expr:
    local = dict(_ALLOWED_FUNCS)
    local.update(_ALLOWED_CONSTS)
    local.update(allowed)
    try:
        expr = sp.sympify(text, locals=local, rational=False)
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise ExpressionError(f"cannot parse expression {text!r}: {exc}") from None
    stray = expr.free_symbols - set(allowed.values())
    if stray:
        names = ", ".join(sorted(str(s) for s in stray))
        raise ExpressionError(f"unknown variables in {text!r}: {names}")
    return expr


def symbol_vars(n: int) -> tuple[list[sp.Symbol], list[sp.Symbol]]:
    """Position and momentum symbols ``x_1..x_n``, ``xi_1..xi_n``."""
    xs = [sp.Symbol(f"x_{i+1}", real=True) for i in range(n)]
    xis = [sp.Symbol(f"xi_{i+1}", real=True) for i in range(n)]
    return xs, xis


def parse_symbol_expr(text: str, n: int) -> sp.Expr:
    """Parse a phase-space observable over ``x_i``/``xi_i``."""
    xs, xis = symbol_vars(n)
    return _parse(text, {str(s): s for s in xs + xis})


def parse_plain_expr(text: str, names: list[str]) -> tuple[sp.Expr, list[sp.Symbol]]:
    """Parse an expression over an explicit list of real variable names."""
    syms = [sp.Symbol(nm, real=True) for nm in names]
    return _parse(text, {nm: s for nm, s in zip(names, syms)}), syms


def lambdify_broadcast(syms: list[sp.Symbol], expr: sp.Expr):
    """Lambdify that broadcasts constant results to the common argument shape."""
    fn = sp.lambdify(syms, expr, "numpy")

    def call(*args):
        shape = np.broadcast(*(np.asarray(a) for a in args)).shape
        out = np.asarray(fn(*args), dtype=complex)
        return np.broadcast_to(out, shape).copy() if out.shape != shape else out

    return call
