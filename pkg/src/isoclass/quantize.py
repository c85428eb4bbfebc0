"""Kohn-Nirenberg semiclassical quantization of symbols ``p0 + hbar p1``.

The operator realized by :func:`apply_kn` is

    ``(P f)(x) = (2 pi hbar)^{-n} \\iint exp(i (x-y).xi / hbar)
                 (p0 + hbar p1)(x, xi) f(y) dy dxi``

computed as a Fourier-multiplier sweep on the grid's own momentum lattice.
When the symbol splits into a sum of products ``f_i(x) g_i(xi)`` the fast path
applies each factor as a multiplier; otherwise a dense per-node quadrature is
used (affordable at desk scale only).

The subprincipal symbol in this ordering is
``p1 - (1/2i) sum_j d^2 p0 / dx_j dxi_j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import sympy as sp

from .exprs import lambdify_broadcast, parse_symbol_expr, symbol_vars
from .grid import DiagnosticError, Field, PhasePoint, conjugate_grid, nyquist_mass, semiclassical_fourier

__all__ = ["SymbolOracle", "apply_kn"]

FD_STEP = 1e-5
ALIAS_AMPLIFY = 1e-6

Evaluator = Callable[..., np.ndarray]


def _fd_derivative(fn, which: int, n: int):
    """Central finite difference in argument ``which`` of fn(x_1..x_n, xi_1..xi_n)."""

    def deriv(*args):
        args = [np.asarray(a, dtype=float) for a in args]
        h = FD_STEP * (1.0 + np.abs(args[which]))
        up = list(args)
        dn = list(args)
        up[which] = args[which] + h
        dn[which] = args[which] - h
        return (np.asarray(fn(*up), dtype=complex) - np.asarray(fn(*dn), dtype=complex)) / (2.0 * h)

    return deriv


@dataclass
class SymbolOracle:
    """Evaluator bundle for a classical observable ``p0(x, xi)`` and its expansion.

    All evaluators take ``2n`` positional array arguments
    ``(x_1, .., x_n, xi_1, .., xi_n)`` and broadcast.

    Attributes
    ----------
    n : int
        Base dimension.
    p0 : callable
        Principal part.
    p1 : callable or None
        Order-hbar part (taken as zero when absent).
    dx, dxi : lists of callables
        First partials of ``p0``.
    d2 : dict
        Second partials of ``p0``; keys ``("x", i, "xi", j)`` etc.
    separable_terms : list of (callable, callable) or None
        Decomposition ``p0 + hbar p1 = sum f_i(x) g_i(xi; hbar)`` used by the
        fast path; ``g_i`` receives an ``hbar`` keyword through closure state.
    """

    n: int
    p0: Evaluator
    p1: Optional[Evaluator] = None
    dx: list = field(default_factory=list)
    dxi: list = field(default_factory=list)
    d2: dict = field(default_factory=dict)
    separable_p0: Optional[list] = None
    separable_p1: Optional[list] = None
    expr_p0: Optional[sp.Expr] = None
    expr_p1: Optional[sp.Expr] = None

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_expr(cls, p0, n: int, p1=None) -> "SymbolOracle":
        """Build from sympy expressions or expression strings over x_i / xi_i."""
        e0 = parse_symbol_expr(p0, n) if isinstance(p0, str) else sp.sympify(p0)
        e1 = None
        if p1 is not None:
            e1 = parse_symbol_expr(p1, n) if isinstance(p1, str) else sp.sympify(p1)
        xs, xis = symbol_vars(n)
        syms = xs + xis
        oracle = cls(
            n=n,
            p0=lambdify_broadcast(syms, e0),
            p1=lambdify_broadcast(syms, e1) if e1 is not None else None,
            expr_p0=e0,
            expr_p1=e1,
        )
        oracle.dx = [lambdify_broadcast(syms, sp.diff(e0, x)) for x in xs]
        oracle.dxi = [lambdify_broadcast(syms, sp.diff(e0, xi)) for xi in xis]
        for i in range(n):
            for j in range(n):
                oracle.d2["x", i, "x", j] = lambdify_broadcast(syms, sp.diff(e0, xs[i], xs[j]))
                oracle.d2["xi", i, "xi", j] = lambdify_broadcast(syms, sp.diff(e0, xis[i], xis[j]))
                oracle.d2["x", i, "xi", j] = lambdify_broadcast(syms, sp.diff(e0, xs[i], xis[j]))
        oracle.separable_p0 = _separate(e0, xs, xis)
        oracle.separable_p1 = _separate(e1, xs, xis) if e1 is not None else []
        oracle._check_separable()
        return oracle

    @classmethod
    def from_callables(cls, p0: Evaluator, n: int, p1: Optional[Evaluator] = None,
                       dx=None, dxi=None, d2=None) -> "SymbolOracle":
        """Build from plain evaluators; missing derivatives fall back to finite
        differences with step ``1e-5 * (1 + |arg|)``."""
        oracle = cls(n=n, p0=p0, p1=p1)
        oracle.dx = list(dx) if dx else [_fd_derivative(p0, i, n) for i in range(n)]
        oracle.dxi = list(dxi) if dxi else [_fd_derivative(p0, n + i, n) for i in range(n)]
        if d2:
            oracle.d2 = dict(d2)
        else:
            for i in range(n):
                for j in range(n):
                    oracle.d2["x", i, "x", j] = _fd_derivative(oracle.dx[i], j, n)
                    oracle.d2["xi", i, "xi", j] = _fd_derivative(oracle.dxi[i], n + j, n)
                    oracle.d2["x", i, "xi", j] = _fd_derivative(oracle.dx[i], n + j, n)
        return oracle

    # -- evaluation helpers --------------------------------------------------

    def _args(self, x, xi):
        x = np.atleast_1d(np.asarray(x))
        xi = np.atleast_1d(np.asarray(xi))
        return list(x) + list(xi)

    def value(self, x, xi, hbar: float = 0.0) -> complex:
        args = self._args(x, xi)
        val = complex(np.asarray(self.p0(*args)).reshape(()))
        if hbar and self.p1 is not None:
            val += hbar * complex(np.asarray(self.p1(*args)).reshape(()))
        return val

    def grad_x(self, x, xi) -> np.ndarray:
        args = self._args(x, xi)
        return np.array([complex(np.asarray(d(*args)).reshape(())) for d in self.dx])

    def grad_xi(self, x, xi) -> np.ndarray:
        args = self._args(x, xi)
        return np.array([complex(np.asarray(d(*args)).reshape(())) for d in self.dxi])

    def hess(self, x, xi, a: str, b: str) -> np.ndarray:
        """Second-partial block; a, b in {"x", "xi"}."""
        args = self._args(x, xi)
        out = np.empty((self.n, self.n), dtype=complex)
        for i in range(self.n):
            for j in range(self.n):
                key = (a, i, b, j) if (a, i, b, j) in self.d2 else (b, j, a, i)
                out[i, j] = complex(np.asarray(self.d2[key](*args)).reshape(()))
        return out

    def hamilton_field(self, z: PhasePoint) -> np.ndarray:
        """(dx/dt, dxi/dt) = (dp/dxi, -dp/dx), complex for complex symbols."""
        return np.concatenate([self.grad_xi(z.x, z.xi), -self.grad_x(z.x, z.xi)])

    def poisson_bracket_re_im(self, z: PhasePoint) -> float:
        """{Re p0, Im p0}(z) with {f,g} = sum df/dxi dg/dx - df/dx dg/dxi."""
        gx = self.grad_x(z.x, z.xi)
        gxi = self.grad_xi(z.x, z.xi)
        return float(np.sum(gxi.real * gx.imag - gx.real * gxi.imag))

    def subprincipal(self, x, xi) -> complex:
        """p1 - (1/2i) sum_j d2 p0 / dx_j dxi_j at a point."""
        args = self._args(x, xi)
        val = 0.0 + 0.0j
        if self.p1 is not None:
            val += complex(np.asarray(self.p1(*args)).reshape(()))
        trace = sum(
            complex(np.asarray(self.d2["x", j, "xi", j](*args)).reshape(())) for j in range(self.n)
        )
        return val - trace / 2.0j

    def shifted(self, z: PhasePoint) -> "SymbolOracle":
        """The symbol ``p(x + x_z, xi + xi_z)``, exact under KN conjugation by
        translation and a linear phase."""
        if self.expr_p0 is None:
            raise ValueError("shifting requires an expression-backed oracle")
        xs, xis = symbol_vars(self.n)
        sub = {s: s + float(v) for s, v in zip(xs, z.x)}
        sub.update({s: s + float(v) for s, v in zip(xis, z.xi)})
        e0 = sp.expand(self.expr_p0.subs(sub, simultaneous=True))
        e1 = sp.expand(self.expr_p1.subs(sub, simultaneous=True)) if self.expr_p1 is not None else None
        return SymbolOracle.from_expr(e0, self.n, p1=e1)

    # -- invariants ----------------------------------------------------------

    def verify_derivatives(self, points: Sequence[tuple], rtol: float = 1e-6):
        """Check supplied first derivatives against central finite differences."""
        for x, xi in points:
            args = self._args(x, xi)
            for i in range(self.n):
                for supplied, which in ((self.dx[i], i), (self.dxi[i], self.n + i)):
                    fd = _fd_derivative(self.p0, which, self.n)(*args)
                    got = np.asarray(supplied(*args))
                    scale = max(1.0, float(np.max(np.abs(fd))))
                    if np.max(np.abs(got - fd)) > rtol * scale:
                        raise ValueError(
                            f"derivative {which} disagrees with finite differences at {(x, xi)}"
                        )

    def _check_separable(self, seed: int = 0, rtol: float = 1e-10):
        if not self.separable_p0:
            return
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-1.5, 1.5, size=(6, 2 * self.n))
        args = list(pts.T)
        direct = np.asarray(self.p0(*args))
        summed = np.zeros_like(direct)
        for fx, gxi in self.separable_p0:
            summed = summed + np.asarray(fx(*args[: self.n])) * np.asarray(gxi(*args[self.n:]))
        scale = max(1.0, float(np.max(np.abs(direct))))
        if np.max(np.abs(direct - summed)) > rtol * scale:
            raise ValueError("separable terms do not reproduce p0 on probe points")


def _separate(expr: sp.Expr, xs, xis):
    """Split an expanded expression into (f(x), g(xi)) product terms, or None."""
    if expr is None:
        return []
    expanded = sp.expand(expr)
    terms = expanded.args if isinstance(expanded, sp.Add) else (expanded,)
    out = []
    xset, xiset = set(xs), set(xis)
    for term in terms:
        indep, dep = term.as_independent(*xis, as_Add=False)
        if dep.free_symbols & xset:
            return None  # a genuinely mixed factor, e.g. sin(x*xi)
        out.append(
            (lambdify_broadcast(list(xs), indep), lambdify_broadcast(list(xis), dep))
        )
    return out


def _dense_sweep(p_vals_fn, fhat: Field, out_grid, hbar: float, chunk_rows: int = 64) -> np.ndarray:
    """Per-node quadrature sum_xi exp(i x.xi/hbar) p(x,xi) fhat(xi) dxi / (2 pi hbar)^{n/2}."""
    n = out_grid.dim
    xi_axes = fhat.grid.axes()
    x_axes = out_grid.axes()
    dxi = fhat.grid.cell_volume()
    scale = dxi * (2.0 * np.pi * hbar) ** (-n / 2.0)
    out = np.empty(out_grid.sizes, dtype=complex)
    if n == 1:
        X = x_axes[0][:, None]
        XI = xi_axes[0][None, :]
        for s in range(0, out_grid.sizes[0], chunk_rows):
            sl = slice(s, min(s + chunk_rows, out_grid.sizes[0]))
            pv = p_vals_fn(X[sl], XI)
            _check_symbol_values(pv, "dense symbol sweep")
            out[sl] = scale * np.sum(np.exp(1j * X[sl] * XI / hbar) * pv * fhat.values[None, :], axis=1)
        return out
    if n == 2:
        x2 = x_axes[1]
        XI1 = xi_axes[0][:, None]
        XI2 = xi_axes[1][None, :]
        E2 = np.exp(1j * np.outer(x2, xi_axes[1]) / hbar)  # (m2, j2)
        for m1, x1 in enumerate(x_axes[0]):
            E1 = np.exp(1j * x1 * xi_axes[0] / hbar)  # (j1,)
            pv = p_vals_fn(np.array([[x1]]), x2[:, None, None], XI1[None], XI2[None])
            _check_symbol_values(pv, f"dense sweep at x1={x1}")
            # pv: (m2, j1, j2); contract j1 with E1*fhat, then j2 with E2
            inner = np.einsum("j,jl,mjl->ml", E1, fhat.values, pv)
            out[m1] = scale * np.einsum("ml,ml->m", E2, inner)
        return out
    raise NotImplementedError("dense quadrature implemented for n <= 2")


def _check_symbol_values(vals: np.ndarray, where: str):
    if not np.all(np.isfinite(np.asarray(vals, dtype=complex).view(float))):
        raise ValueError(f"symbol evaluated to a non-finite value in {where}")


def apply_kn(p: SymbolOracle, f: Field) -> Field:
    """Apply the Kohn-Nirenberg quantization of ``p0 + hbar p1`` to a field.

    Raises
    ------
    DiagnosticError
        If the symbol amplifies the relative Nyquist-shell mass above 1e-6
        (the output would be aliased rather than merely small).
    """
    hbar = f.hbar
    fhat = semiclassical_fourier(f, sign=1)
    in_mass = nyquist_mass(f)
    xs_axes = f.grid.axes()
    xi_axes = fhat.grid.axes()

    fast = p.separable_p0 is not None and (p.p1 is None or p.separable_p1)
    if fast:
        acc = np.zeros(f.grid.sizes, dtype=complex)
        groups = [(p.separable_p0, 1.0)]
        if p.separable_p1:
            groups.append((p.separable_p1, hbar))
        for terms, weight in groups:
            for fx, gxi in terms:
                gx_vals = np.asarray(gxi(*np.meshgrid(*xi_axes, indexing="ij")))
                _check_symbol_values(gx_vals, "separable momentum factor")
                part = semiclassical_fourier(
                    Field(fhat.grid, hbar, gx_vals * fhat.values), sign=-1
                )
                fx_vals = np.asarray(fx(*np.meshgrid(*xs_axes, indexing="ij")))
                _check_symbol_values(fx_vals, "separable position factor")
                acc = acc + weight * fx_vals * part.values
        out = Field(f.grid, hbar, acc)
    else:
        def p_vals(*coords):
            vals = np.asarray(p.p0(*coords))
            if p.p1 is not None:
                vals = vals + hbar * np.asarray(p.p1(*coords))
            return vals

        out = Field(f.grid, hbar, _dense_sweep(p_vals, fhat, f.grid, hbar))

    out_mass = nyquist_mass(out)
    if out_mass > ALIAS_AMPLIFY and out_mass > 10.0 * max(in_mass, 1e-300):
        raise DiagnosticError(
            f"symbol amplified Nyquist-shell mass to {out_mass:.2e} "
            f"(input {in_mass:.2e}); refine the grid"
        )
    return out
