"""Model isotropic states ``hbar^r a(t, u/sqrt(hbar), hbar)`` and their profiles.

A splitting ``x = (t, u)`` of the grid axes fixes the model submanifold
``{u = 0, xi = 0}``.  States are built from a truncated profile stack
``a ~ hbar^r sum_j a_j(t, u) hbar^{j/2}`` with Schwartz profiles ``a_j``,
multiplied by a smooth compactly supported window in ``t``.  The rescaled
leading profile ``a_0(t_star, .)`` is recovered from a state by band-limited
interpolation at the points ``sqrt(hbar) u``, and across a geometric hbar
schedule by Richardson extrapolation in ``sqrt(hbar)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import sympy as sp

from .exprs import lambdify_broadcast, parse_plain_expr
from .grid import (
    DiagnosticError,
    Field,
    Grid,
    boundary_mass,
    evaluate_periodic,
    husimi_map,
    inner_product,
    make_grid,
    norm,
)

__all__ = [
    "Splitting",
    "Profile",
    "StackTerm",
    "ProfileStack",
    "IsotropicState",
    "hermite_function",
    "hermite_profile",
    "stack_term_from_expr",
    "make_t_window",
    "suggest_grid",
    "build_model_state",
    "extract_profile",
    "fit_leading_symbol",
    "predicted_norm",
    "wavefront_mass",
    "default_profile_grid",
]

PROFILE_TAIL_TOL = 1e-10
BOX_ESCAPE_TOL = 1e-10


@dataclass(frozen=True)
class Splitting:
    """Axis split R^n = R^k x R^l: first k grid axes are t, last l are u."""

    k: int
    l: int

    def __post_init__(self):
        if self.k < 0 or self.l < 1:
            raise ValueError("need k >= 0 and l >= 1")

    @property
    def n(self) -> int:
        return self.k + self.l


@dataclass(frozen=True)
class Profile:
    """A Schwartz function of the transverse variable u, sampled on a u-grid."""

    ugrid: Grid
    values: np.ndarray
    base_point: tuple[float, ...] = ()

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=complex)
        if vals.shape != self.ugrid.sizes:
            raise ValueError("profile values do not match the u-grid")
        object.__setattr__(self, "values", vals)
        tail = self.tail_mass()
        if tail > PROFILE_TAIL_TOL:
            warnings.warn(
                f"profile has relative tail mass {tail:.2e} outside the Schwartz-proxy region",
                stacklevel=2,
            )

    def tail_mass(self) -> float:
        """Relative mass at |u_i| > half_width_i - 2 (Schwartz decay proxy)."""
        power = np.abs(self.values) ** 2
        total = power.sum()
        if total == 0.0:
            return 0.0
        mask = np.zeros(self.ugrid.sizes, dtype=bool)
        for i, (L, N) in enumerate(zip(self.ugrid.half_widths, self.ugrid.sizes)):
            u = self.ugrid.axis(i)
            shape = [1] * self.ugrid.dim
            shape[i] = N
            mask |= (np.abs(u) > L - 2.0).reshape(shape)
        return float(power[mask].sum() / total)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.ugrid.cell_volume()))


def profile_distance(a: Profile, b: Profile, relative: bool = True) -> float:
    """L2 distance of two profiles on the same u-grid, relative to |b| by default."""
    if a.ugrid != b.ugrid:
        raise ValueError("profiles live on different u-grids")
    d = float(np.sqrt(np.sum(np.abs(a.values - b.values) ** 2) * a.ugrid.cell_volume()))
    if not relative:
        return d
    nb = b.norm()
    return d / nb if nb > 0 else d


@dataclass(frozen=True)
class StackTerm:
    """One coefficient ``a_j(t, u)`` of a profile stack.

    ``fn`` takes ``k + l`` positional broadcastable arrays ``(t_1.., u_1..)``;
    ``dt`` optionally holds the analytic partials in each t variable (needed
    by the order-2 transport prediction when k >= 1).
    """

    fn: Callable[..., np.ndarray]
    dt: Optional[tuple[Callable[..., np.ndarray], ...]] = None


@dataclass(frozen=True)
class ProfileStack:
    """Truncated expansion ``hbar^r sum_j a_j(t,u) hbar^{j/2}``; terms[j] is a_j."""

    r: float
    terms: tuple[StackTerm, ...]
    splitting: Splitting

    def __post_init__(self):
        if len(self.terms) == 0:
            raise ValueError("a profile stack needs at least the leading term")


@dataclass(frozen=True)
class IsotropicState:
    """A field tagged as an element of the model class of order r."""

    field: Field
    splitting: Splitting
    r: float
    stack: Optional[ProfileStack] = None

    def __post_init__(self):
        if self.splitting.n != self.field.grid.dim:
            raise ValueError("splitting does not match the grid dimension")


# -- profile constructors ----------------------------------------------------


def hermite_function(m: int, x: np.ndarray) -> np.ndarray:
    """Orthonormal Hermite function h_m via the stable three-term recurrence."""
    if m < 0:
        raise ValueError("Hermite index must be nonnegative")
    x = np.asarray(x, dtype=float)
    h_prev = np.pi**-0.25 * np.exp(-(x**2) / 2.0)
    if m == 0:
        return h_prev
    h_cur = np.sqrt(2.0) * x * h_prev
    for j in range(1, m):
        h_next = np.sqrt(2.0 / (j + 1)) * x * h_cur - np.sqrt(j / (j + 1)) * h_prev
        h_prev, h_cur = h_cur, h_next
    return h_cur


def hermite_profile(multi_index: Sequence[int], width: Sequence[float]) -> Callable[..., np.ndarray]:
    """Product Hermite profile ``prod_i h_{m_i}(u_i / w_i) / sqrt(w_i)``, unit L2 norm."""
    ms = [int(m) for m in np.atleast_1d(multi_index)]
    ws = [float(w) for w in np.atleast_1d(width)]
    if len(ws) == 1 and len(ms) > 1:
        ws = ws * len(ms)
    if any(m < 0 for m in ms):
        raise ValueError("Hermite index must be nonnegative")
    if any(w <= 0 for w in ws):
        raise ValueError("width must be positive")

    def evaluator(*us):
        if len(us) != len(ms):
            raise ValueError(f"expected {len(ms)} u arrays, got {len(us)}")
        out = None
        for m, w, u in zip(ms, ws, us):
            factor = hermite_function(m, np.asarray(u) / w) / np.sqrt(w)
            out = factor if out is None else out * factor
        return out.astype(complex)

    return evaluator


def stack_term_from_expr(text: str, splitting: Splitting) -> StackTerm:
    """Parse ``a_j(t, u)`` over variables t_1..t_k, u_1..u_l with analytic dt."""
    names = [f"t_{i+1}" for i in range(splitting.k)] + [f"u_{i+1}" for i in range(splitting.l)]
    expr, syms = parse_plain_expr(text, names)
    fn = lambdify_broadcast(syms, expr)
    dts = tuple(lambdify_broadcast(syms, sp.diff(expr, syms[i])) for i in range(splitting.k))
    return StackTerm(fn=fn, dt=dts if splitting.k else None)


def pure_u_term(fn_u: Callable[..., np.ndarray], splitting: Splitting) -> StackTerm:
    """Lift a u-only evaluator (e.g. from hermite_profile) into a stack term."""
    k = splitting.k

    def fn(*coords):
        out = fn_u(*coords[k:])
        shape = np.broadcast(*(np.asarray(c) for c in coords)).shape
        return np.broadcast_to(out, shape).copy() if np.asarray(out).shape != shape else out

    def zero(*coords):
        return np.zeros(np.broadcast(*(np.asarray(c) for c in coords)).shape, dtype=complex)

    return StackTerm(fn=fn, dt=tuple(zero for _ in range(k)) if k else None)


# -- window and grid helpers ---------------------------------------------------


def make_t_window(t_half: float, flat: float = 0.75, outer: float = 0.9375) -> Callable:
    """Smooth bump: 1 on |t| <= flat*t_half, 0 beyond outer*t_half, C^infinity between."""
    a, b = flat * t_half, outer * t_half

    def psi(s):
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = np.exp(-1.0 / s[pos])
        return out

    def window(*ts):
        r = np.sqrt(sum(np.asarray(t, dtype=float) ** 2 for t in ts))
        up = psi((b - r) / (b - a))
        dn = psi((r - a) / (b - a))
        return up / (up + dn + 1e-300)

    return window


def default_profile_grid(l: int, half_width: float = 8.0, size: int = 256) -> Grid:
    return make_grid([half_width] * l, [size] * l)


def suggest_grid(
    splitting: Splitting,
    hbar: float,
    u_half: float = 1.0,
    t_half: float = 8.0,
    t_size: int = 128,
    profile_spacing: float = 0.0625,
    max_size: int = 1 << 14,
) -> Grid:
    """A field grid resolving extraction at this hbar: dx_u <= sqrt(hbar) * profile spacing."""
    target = np.sqrt(hbar) * profile_spacing
    n_u = 1 << max(3, math.ceil(math.log2(2.0 * u_half / target)))
    if n_u > max_size:
        raise ValueError(f"required u resolution {n_u} exceeds the desk-scale cap {max_size}")
    widths = [t_half] * splitting.k + [u_half] * splitting.l
    sizes = [t_size] * splitting.k + [n_u] * splitting.l
    return make_grid(widths, sizes)


# -- build / extract -----------------------------------------------------------


def build_model_state(
    stack: ProfileStack,
    hbar: float,
    grid: Grid,
    t_window: Optional[Callable] = "auto",
) -> IsotropicState:
    """Sample ``hbar^r sum_j hbar^{j/2} a_j(t, u/sqrt(hbar)) * window(t)`` on a grid.

    Raises
    ------
    DiagnosticError
        If more than 1e-10 of the state's mass sits at the box edges
        (the Schwartz profile does not fit at this hbar).
    """
    split = stack.splitting
    if split.n != grid.dim:
        raise ValueError("stack splitting does not match the grid")
    mesh = grid.meshgrid()
    ts = mesh[: split.k]
    us = [m / np.sqrt(hbar) for m in mesh[split.k:]]
    vals = np.zeros(grid.sizes, dtype=complex)
    for j, term in enumerate(stack.terms):
        vals = vals + hbar ** (j / 2.0) * np.asarray(term.fn(*ts, *us))
    if split.k:
        if t_window == "auto":
            t_window = make_t_window(min(grid.half_widths[: split.k]))
        if t_window is not None:
            vals = vals * t_window(*ts)
    vals = vals * hbar**stack.r
    field = Field(grid, hbar, vals)
    escape = boundary_mass(field)
    if escape > BOX_ESCAPE_TOL:
        raise DiagnosticError(
            f"state mass {escape:.2e} at the box edges exceeds {BOX_ESCAPE_TOL:.0e}; "
            "enlarge the box or shrink the profile"
        )
    return IsotropicState(field=field, splitting=split, r=stack.r, stack=stack)


def _t_slice(field: Field, splitting: Splitting, t_star) -> tuple[np.ndarray, tuple[float, ...], Grid]:
    """Nearest-node t slice of the field and the u-axes subgrid."""
    k = splitting.k
    t_star = np.atleast_1d(np.asarray(t_star, dtype=float)) if k else np.zeros(0)
    if t_star.size != k:
        raise ValueError(f"t_star must have {k} components")
    idx = []
    snapped = []
    for i in range(k):
        nodes = field.grid.axis(i)
        j = int(np.argmin(np.abs(nodes - t_star[i])))
        idx.append(j)
        snapped.append(float(nodes[j]))
    sl = field.values[tuple(idx)] if k else field.values
    ugrid = Grid(field.grid.half_widths[k:], field.grid.sizes[k:])
    return sl, tuple(snapped), ugrid


def extract_profile(
    state: IsotropicState,
    t_star=(),
    ugrid: Optional[Grid] = None,
    order: Optional[float] = None,
) -> Profile:
    """Rescaled profile ``hbar^{-r} Upsilon(t_star, sqrt(hbar) u)`` on a u-grid.

    ``order`` overrides the state's r (used when extracting the image of an
    operator, whose order is shifted).  t_star is snapped to the nearest node.
    """
    split = state.splitting
    hbar = state.field.hbar
    r = state.r if order is None else order
    if ugrid is None:
        ugrid = default_profile_grid(split.l)
    if ugrid.dim != split.l:
        raise ValueError("profile grid dimension must equal l")
    slice_vals, snapped, sub = _t_slice(state.field, split, t_star)
    root = np.sqrt(hbar)
    for i in range(split.l):
        if sub.spacing[i] > root * ugrid.spacing[i] * (1.0 + 1e-12):
            raise ValueError(
                f"field spacing {sub.spacing[i]:.3e} along u-axis {i} under-resolves "
                f"sqrt(hbar) * profile spacing = {root * ugrid.spacing[i]:.3e}"
            )
    pts = np.stack([m.ravel() for m in np.meshgrid(*ugrid.axes(), indexing="ij")], axis=-1) * root
    vals = evaluate_periodic(slice_vals, sub, pts).reshape(ugrid.sizes)
    return Profile(ugrid=ugrid, values=vals * hbar ** (-r), base_point=snapped)


def fit_leading_symbol(
    states: Sequence[IsotropicState],
    t_star=(),
    ugrid: Optional[Grid] = None,
) -> tuple[Profile, float]:
    """Richardson-extrapolate extracted profiles in sqrt(hbar); fit the residual rate.

    Requires at least three states on a halving schedule ``hbar_{m+1} = hbar_m / 2``.
    Returns the extrapolated leading profile and the fitted log-log slope of
    ``|extracted_m - a0|`` against ``hbar_m`` (about 1/2 per surviving half-order).
    """
    if len(states) < 3:
        raise ValueError("need at least 3 schedule points")
    hbars = np.array([s.field.hbar for s in states])
    ratios = hbars[1:] / hbars[:-1]
    if not np.allclose(ratios, 0.5, rtol=1e-8):
        raise ValueError("schedule must be geometric with ratio 1/2")
    if len({s.splitting for s in states}) != 1:
        raise ValueError("states carry inconsistent splittings")
    if ugrid is None:
        ugrid = default_profile_grid(states[0].splitting.l)
    profiles = [extract_profile(s, t_star, ugrid) for s in states]
    rho = 1.0 / np.sqrt(2.0)
    tableau = [p.values for p in profiles]
    levels = min(len(tableau) - 1, 3)
    for j in range(1, levels + 1):
        tableau = [
            (tableau[i + 1] - rho**j * tableau[i]) / (1.0 - rho**j)
            for i in range(len(tableau) - 1)
        ]
    a0 = Profile(ugrid=ugrid, values=tableau[-1], base_point=profiles[0].base_point)
    resid = np.array(
        [
            np.sqrt(np.sum(np.abs(p.values - a0.values) ** 2) * ugrid.cell_volume())
            for p in profiles
        ]
    )
    floor = 1e-13 * max(a0.norm(), 1e-300)
    good = resid > floor
    if good.sum() >= 2:
        rate = float(np.polyfit(np.log(hbars[good]), np.log(resid[good]), 1)[0])
    else:
        rate = float("nan")  # residuals at the noise floor; rate unconstrained
    return a0, rate


# -- norm estimate and wave front ----------------------------------------------


def predicted_norm(state: IsotropicState, ugrid: Optional[Grid] = None) -> float:
    """Leading norm ``hbar^{r + l/4} (int |a_0(t,u)|^2 du dt)^{1/2}`` from the stack."""
    if state.stack is None:
        raise ValueError("predicted_norm needs a built state carrying its stack")
    split = state.splitting
    hbar = state.field.hbar
    if ugrid is None:
        ugrid = default_profile_grid(split.l)
    umesh = np.meshgrid(*ugrid.axes(), indexing="ij")
    lead = state.stack.terms[0].fn
    if split.k:
        t_axes = [state.field.grid.axis(i) for i in range(split.k)]
        tmesh = np.meshgrid(*t_axes, indexing="ij")
        tm = [t.reshape(t.shape + (1,) * split.l) for t in tmesh]
        um = [u.reshape((1,) * split.k + u.shape) for u in umesh]
        vals = np.asarray(lead(*tm, *um))
        cell = np.prod([2 * L / N for L, N in zip(state.field.grid.half_widths[: split.k],
                                                  state.field.grid.sizes[: split.k])])
        integral = float(np.sum(np.abs(vals) ** 2) * cell * ugrid.cell_volume())
    else:
        vals = np.asarray(lead(*umesh))
        integral = float(np.sum(np.abs(vals) ** 2) * ugrid.cell_volume())
    return hbar ** (state.r + split.l / 4.0) * np.sqrt(integral)


def norm_check(state: IsotropicState) -> dict:
    """Measured vs predicted norm; the relative error decays like sqrt(hbar)."""
    measured = norm(state.field)
    predicted = predicted_norm(state)
    return {
        "hbar": state.field.hbar,
        "measured": measured,
        "predicted": predicted,
        "rel_error": abs(measured - predicted) / predicted,
    }


def wavefront_mass(
    state: IsotropicState,
    radius: float,
    xi_extent: Optional[float] = None,
    spacing: Optional[float] = None,
) -> float:
    """Fraction of Husimi mass at phase points with dist((x, xi), Sigma_0) > radius.

    The distance ignores the t coordinates: dist^2 = |u|^2 + |xi|^2.  Currently
    implemented for 1-D fields (k = 0, l = 1), which is where the containment
    criteria are exercised; the lattice is sqrt(hbar)-dense.
    """
    hbar = state.field.hbar
    if radius < 3.0 * np.sqrt(hbar):
        raise ValueError("radius must be at least 3 sqrt(hbar)")
    if state.field.grid.dim != 1 or state.splitting.k != 0:
        raise NotImplementedError("wavefront_mass lattice automation covers k=0, l=1")
    grid = state.field.grid
    if xi_extent is None:
        xi_extent = max(3.0 * radius, 25.0 * np.sqrt(hbar))
        xi_extent = min(xi_extent, 0.95 * grid.nyquist_momentum(hbar)[0])
    if spacing is None:
        spacing = min(np.sqrt(hbar), radius / 6.0)
    xs = np.arange(-grid.half_widths[0] * 0.95, grid.half_widths[0] * 0.95, spacing)
    xis = np.arange(-xi_extent, xi_extent, spacing)
    dens = husimi_map(state.field, [xs], xis[:, None])
    X, XI = np.meshgrid(xs, xis, indexing="ij")
    dist = np.sqrt(X**2 + XI**2)
    total = dens.sum()
    if total == 0.0:
        return 0.0
    return float(dens[dist > radius].sum() / total)
