"""Elementary Fourier integral operators preserving the model isotropic class.

Three operator families act on states concentrated on ``{u = 0, xi = 0}``:

* pullback along a diffeomorphism fixing ``{u = 0}``:
  ``(U_f psi)(x) = psi(f(x))``; the rescaled leading profile transforms by
  ``sigma_t(U_f psi)(u) = sigma_{f(t)}(psi)( (df_2/du)(t,0) u )``
* multiplication by a quadratic-vanishing phase ``exp(i phi / hbar)`` with
  ``phi(t,0) = 0`` and ``grad phi(t,0) = 0``; the leading profile picks up
  ``exp(i sum u_r u_s psi_rs(t,0))`` with ``psi_rs = (1/2) d2 phi/du_r du_s``
* the unitary semiclassical Fourier transform in the u variables with t held
  fixed; under the unitary normalization the class order is unchanged and the
  leading profile maps to its unitary classical Fourier transform.

Each symbol law ships with a convergence harness comparing the analytic
prediction against build/apply/extract across an hbar schedule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import sympy as sp

from .exprs import lambdify_broadcast, parse_plain_expr
from .grid import (
    DiagnosticError,
    Field,
    Grid,
    evaluate_periodic,
    norm,
    nyquist_mass,
)
from .metaplectic import GeneratorWord, TypeIII, mp_apply
from .states import (
    IsotropicState,
    Profile,
    ProfileStack,
    Splitting,
    build_model_state,
    default_profile_grid,
    extract_profile,
    suggest_grid,
)
from .symbolcalc import ConvergenceReport, fit_loglog_slope

__all__ = [
    "Diffeo",
    "QuadraticPhase",
    "pullback_apply",
    "quadratic_phase_apply",
    "partial_fourier_apply",
    "predicted_pullback_profile",
    "predicted_phase_profile",
    "predicted_fourier_profile",
    "fio_law_check",
]

EDGE_MARGIN = 1e-13


@dataclass(frozen=True)
class Diffeo:
    """A smooth diffeomorphism of the box with ``f({u=0}) subset {u=0}``.

    ``forward`` and ``inverse`` map ``n`` coordinate arrays to a list of ``n``
    arrays; ``jacobian`` returns the stacked matrix ``df`` with shape
    ``(..., n, n)``.  Built most conveniently from expression strings.
    """

    splitting: Splitting
    forward: Callable[..., list]
    inverse: Callable[..., list]
    jacobian: Callable[..., np.ndarray]

    @classmethod
    def from_exprs(cls, forward: Sequence[str], inverse: Sequence[str], splitting: Splitting) -> "Diffeo":
        n = splitting.n
        names = [f"x_{i+1}" for i in range(n)]
        fwd_exprs, syms = [], None
        for text in forward:
            e, syms = parse_plain_expr(text, names)
            fwd_exprs.append(e)
        inv_exprs = [parse_plain_expr(text, names)[0] for text in inverse]
        if len(fwd_exprs) != n or len(inv_exprs) != n:
            raise ValueError(f"need {n} component expressions")
        fwd_fns = [lambdify_broadcast(syms, e) for e in fwd_exprs]
        inv_fns = [lambdify_broadcast(syms, e) for e in inv_exprs]
        jac_fns = [[lambdify_broadcast(syms, sp.diff(e, s)) for s in syms] for e in fwd_exprs]

        def forward_fn(*xs):
            return [f(*xs) for f in fwd_fns]

        def inverse_fn(*xs):
            return [f(*xs) for f in inv_fns]

        def jacobian_fn(*xs):
            shape = np.broadcast(*(np.asarray(a) for a in xs)).shape
            out = np.empty(shape + (n, n), dtype=complex)
            for i in range(n):
                for j in range(n):
                    out[..., i, j] = jac_fns[i][j](*xs)
            return out

        d = cls(splitting=splitting, forward=forward_fn, inverse=inverse_fn, jacobian=jacobian_fn)
        d.validate()
        return d

    def validate(self, probes: Optional[np.ndarray] = None, rtol: float = 1e-8):
        """f(inverse) = id within 1e-8 and u-components of f(t, 0) vanish."""
        n, k = self.splitting.n, self.splitting.k
        if probes is None:
            rng = np.random.default_rng(0)
            probes = rng.uniform(-0.8, 0.8, size=(8, n))
        args = list(probes.T)
        back = self.forward(*self.inverse(*args))
        for i in range(n):
            if np.max(np.abs(np.asarray(back[i]) - probes[:, i])) > rtol:
                raise ValueError("forward(inverse) deviates from the identity on probe points")
        on_y = [probes[:, i] if i < k else np.zeros(probes.shape[0]) for i in range(n)]
        image = self.forward(*on_y)
        for i in range(k, n):
            if np.max(np.abs(np.asarray(image[i]))) > 1e-12:
                raise ValueError("diffeomorphism does not preserve {u = 0}")

    def u_block_at(self, t_star) -> np.ndarray:
        """(df_2/du)(t_star, 0): the linear map entering the symbol law."""
        k, l, n = self.splitting.k, self.splitting.l, self.splitting.n
        point = [np.atleast_1d(t_star)[i] if i < k else 0.0 for i in range(n)]
        J = self.jacobian(*[np.asarray([c]) for c in point])[0]
        return J[k:, k:].real

    def base_image(self, t_star) -> np.ndarray:
        k, n = self.splitting.k, self.splitting.n
        point = [np.atleast_1d(t_star)[i] if i < k else 0.0 for i in range(n)]
        img = self.forward(*[np.asarray([c]) for c in point])
        return np.array([np.asarray(img[i]).reshape(()).real for i in range(k)])


@dataclass(frozen=True)
class QuadraticPhase:
    """A phase vanishing to second order on ``{u = 0}`` (full gradient included)."""

    splitting: Splitting
    phi: Callable[..., np.ndarray]
    grad: Callable[..., np.ndarray]
    hessian_u: Callable[..., np.ndarray]

    @classmethod
    def from_expr(cls, text: str, splitting: Splitting) -> "QuadraticPhase":
        n, k, l = splitting.n, splitting.k, splitting.l
        names = [f"x_{i+1}" for i in range(n)]
        e, syms = parse_plain_expr(text, names)
        phi = lambdify_broadcast(syms, e)
        grads = [lambdify_broadcast(syms, sp.diff(e, s)) for s in syms]
        hess = [
            [lambdify_broadcast(syms, sp.diff(e, syms[k + r], syms[k + s]) / 2) for s in range(l)]
            for r in range(l)
        ]

        def grad_fn(*xs):
            shape = np.broadcast(*(np.asarray(a) for a in xs)).shape
            out = np.empty(shape + (n,), dtype=complex)
            for i in range(n):
                out[..., i] = grads[i](*xs)
            return out

        def hessian_u_fn(t_star):
            point = [np.asarray([np.atleast_1d(t_star)[i]]) if i < k else np.asarray([0.0]) for i in range(n)]
            out = np.empty((l, l), dtype=float)
            for r in range(l):
                for s in range(l):
                    out[r, s] = np.asarray(hess[r][s](*point)).reshape(()).real
            return out

        q = cls(splitting=splitting, phi=phi, grad=grad_fn, hessian_u=hessian_u_fn)
        q.validate()
        return q

    def validate(self, probes: Optional[np.ndarray] = None):
        k, n = self.splitting.k, self.splitting.n
        rng = np.random.default_rng(1)
        ts = rng.uniform(-3.0, 3.0, size=(8, max(k, 1)))
        args = [ts[:, i] if i < k else np.zeros(8) for i in range(n)]
        vals = np.asarray(self.phi(*args))
        if np.max(np.abs(vals)) > 1e-12:
            raise ValueError("phase does not vanish on {u = 0}")
        g = np.asarray(self.grad(*args))
        if np.max(np.abs(g)) > 1e-10:
            raise ValueError("phase gradient does not vanish on {u = 0}")


# -- operators ---------------------------------------------------------------


def _effective_support_mask(values: np.ndarray, rel: float = EDGE_MARGIN) -> np.ndarray:
    return np.abs(values) > rel * np.max(np.abs(values))


def pullback_apply(f: Diffeo, state: IsotropicState) -> IsotropicState:
    """Composition with the diffeomorphism: ``(U_f psi)(x) = psi(f(x))``.

    Band-limited interpolation axis by axis; requires the t components of f to
    be u-independent (the model reductions used here are of this triangular
    form) and the image of the state's effective support to stay inside the box.
    """
    grid = state.field.grid
    split = state.splitting
    k, l, n = split.k, split.l, split.n
    mesh = grid.meshgrid()
    image = [np.asarray(c).real for c in f.forward(*mesh)]

    support = _effective_support_mask(state.field.values)
    for i in range(n):
        L = grid.half_widths[i]
        reach = np.max(np.abs(image[i][support])) if support.any() else 0.0
        if reach > L - 2 * grid.spacing[i]:
            raise DiagnosticError(
                f"diffeomorphism image reaches {reach:.3f} on axis {i}, escaping the box of half-width {L}"
            )

    if k == 0:
        pts = np.stack([c.ravel() for c in image], axis=-1)
        vals = evaluate_periodic(state.field.values, grid, pts).reshape(grid.sizes)
    else:
        for i in range(k):
            variation = np.max(np.abs(image[i] - image[i][(...,) + (slice(0, 1),) * l]))
            if variation > 1e-12:
                raise NotImplementedError(
                    "pullback interpolation requires t components independent of u"
                )
        if k != 1 or l != 1:
            raise NotImplementedError("pullback implemented for n <= 2 splittings")
        # interpolate along t (u-independent targets), then along u per t node
        t_grid = Grid(grid.half_widths[:1], grid.sizes[:1])
        u_grid = Grid(grid.half_widths[1:], grid.sizes[1:])
        work = _interp_matrix(t_grid, image[0][:, 0]) @ np.fft.fft(state.field.values, axis=0)
        u_targets = image[1]
        if np.max(np.abs(u_targets - u_targets[0:1, :])) < 1e-14:
            vals = np.fft.fft(work, axis=1) @ _interp_matrix(u_grid, u_targets[0]).T
        else:
            vals = np.empty_like(work)
            spectra = np.fft.fft(work, axis=1)
            for i in range(grid.sizes[0]):
                vals[i, :] = _interp_matrix(u_grid, u_targets[i]) @ spectra[i]
    out = Field(grid, state.field.hbar, vals)
    return IsotropicState(field=out, splitting=split, r=state.r, stack=None)


def _interp_matrix(grid1d: Grid, points: np.ndarray) -> np.ndarray:
    """Matrix mapping fft(samples) to trigonometric-interpolant values at points."""
    N, L = grid1d.sizes[0], grid1d.half_widths[0]
    kk = np.fft.fftfreq(N, d=1.0 / N) * (np.pi / L)
    return np.exp(1j * np.outer(np.asarray(points) + L, kk)) / N


def quadratic_phase_apply(q: QuadraticPhase, state: IsotropicState) -> IsotropicState:
    """Pointwise multiplication by ``exp(i phi(x) / hbar)``."""
    grid = state.field.grid
    mesh = grid.meshgrid()
    phase = np.asarray(q.phi(*mesh)).real
    vals = np.exp(1j * phase / state.field.hbar) * state.field.values
    out = Field(grid, state.field.hbar, vals)
    if nyquist_mass(out) > 1e-6:
        raise DiagnosticError("quadratic phase aliases on this grid; refine the u axes")
    return IsotropicState(field=out, splitting=state.splitting, r=state.r, stack=None)


def partial_fourier_apply(state: IsotropicState) -> IsotropicState:
    """Unitary semiclassical Fourier transform in u with t held fixed.

    Output samples live on the same grid (the u box doubles as the mu box).
    With the unitary normalization the class order is preserved and the
    rescaled leading profile maps to its unitary classical Fourier transform.
    """
    grid = state.field.grid
    split = state.splitting
    hbar = state.field.hbar
    vals = state.field.values
    for axis in range(split.k, split.n):
        u = grid.axis(axis)
        du = grid.spacing[axis]
        kernel = np.exp(-1j * np.outer(u, u) / hbar) * (du / np.sqrt(2.0 * np.pi * hbar))
        vals = np.moveaxis(np.tensordot(kernel, np.moveaxis(vals, axis, 0), axes=(1, 0)), 0, axis)
    out = Field(grid, hbar, vals)
    if nyquist_mass(out) > 1e-6:
        raise DiagnosticError("partial Fourier transform aliases; the u frequency content is unresolved")
    return IsotropicState(field=out, splitting=split, r=state.r, stack=None)


# -- predicted profiles --------------------------------------------------------


def _leading_profile_values(stack: ProfileStack, t_star, ugrid: Grid, points: Optional[np.ndarray] = None):
    split = stack.splitting
    if points is None:
        mesh = np.meshgrid(*ugrid.axes(), indexing="ij")
    else:
        mesh = [points[..., i] for i in range(split.l)]
    ts = [np.full(np.asarray(mesh[0]).shape, t) for t in np.atleast_1d(t_star)] if split.k else []
    return np.asarray(stack.terms[0].fn(*ts, *mesh))


def predicted_pullback_profile(f: Diffeo, stack: ProfileStack, t_star=(), ugrid: Optional[Grid] = None) -> Profile:
    """sigma_{f(t)}(state) composed with (df_2/du)(t, 0)."""
    split = stack.splitting
    if ugrid is None:
        ugrid = default_profile_grid(split.l)
    B = f.u_block_at(t_star)
    base = f.base_image(t_star) if split.k else ()
    mesh = np.meshgrid(*ugrid.axes(), indexing="ij")
    pts = np.stack(mesh, axis=-1) @ B.T
    vals = _leading_profile_values(stack, base, ugrid, points=pts)
    return Profile(ugrid=ugrid, values=vals, base_point=tuple(np.atleast_1d(t_star)) if split.k else ())


def predicted_phase_profile(q: QuadraticPhase, stack: ProfileStack, t_star=(), ugrid: Optional[Grid] = None) -> Profile:
    """exp(i sum u_r u_s psi_rs(t,0)) a0(t, u)."""
    split = stack.splitting
    if ugrid is None:
        ugrid = default_profile_grid(split.l)
    psi = q.hessian_u(t_star)
    mesh = np.meshgrid(*ugrid.axes(), indexing="ij")
    quad = np.zeros(ugrid.sizes)
    for r in range(split.l):
        for s in range(split.l):
            if psi[r, s] != 0.0:
                quad = quad + psi[r, s] * mesh[r] * mesh[s]
    a0 = _leading_profile_values(stack, t_star, ugrid)
    return Profile(ugrid=ugrid, values=np.exp(1j * quad) * a0,
                   base_point=tuple(np.atleast_1d(t_star)) if split.k else ())


def predicted_fourier_profile(stack: ProfileStack, t_star=(), ugrid: Optional[Grid] = None) -> Profile:
    """Unitary classical Fourier transform of a0 in u (the TypeIII action)."""
    split = stack.splitting
    if ugrid is None:
        ugrid = default_profile_grid(split.l)
    a0 = _leading_profile_values(stack, t_star, ugrid)
    prof = Profile(ugrid=ugrid, values=a0, base_point=tuple(np.atleast_1d(t_star)) if split.k else ())
    return mp_apply(GeneratorWord((TypeIII(split.l),)), prof)


# -- convergence harness ----------------------------------------------------------


def fio_law_check(
    kind: str,
    stack: ProfileStack,
    schedule: Sequence[float],
    diffeo: Optional[Diffeo] = None,
    phase: Optional[QuadraticPhase] = None,
    t_star=(),
    ugrid: Optional[Grid] = None,
    grid_options: Optional[dict] = None,
    slope_min: float = 0.4,
    residual_max: float = 0.05,
) -> ConvergenceReport:
    """Convergence test of one elementary symbol law: 'ml15' (quadratic phase),
    'ml18' (partial Fourier), or 'ml23' (pullback)."""
    split = stack.splitting
    if ugrid is None:
        ugrid = default_profile_grid(split.l)
    if kind == "ml23":
        if diffeo is None:
            raise ValueError("ml23 needs a diffeomorphism")
        predicted = predicted_pullback_profile(diffeo, stack, t_star, ugrid)
    elif kind == "ml15":
        if phase is None:
            raise ValueError("ml15 needs a quadratic phase")
        predicted = predicted_phase_profile(phase, stack, t_star, ugrid)
    elif kind == "ml18":
        predicted = predicted_fourier_profile(stack, t_star, ugrid)
    else:
        raise ValueError("kind must be one of ml15, ml18, ml23")
    opts = dict(profile_spacing=min(ugrid.spacing))
    opts.update(grid_options or {})
    residuals = []
    unitarity = []
    for hbar in schedule:
        grid = suggest_grid(split, hbar, **opts)
        state = build_model_state(stack, hbar, grid)
        if kind == "ml23":
            image = pullback_apply(diffeo, state)
        elif kind == "ml15":
            image = quadratic_phase_apply(phase, state)
        else:
            image = partial_fourier_apply(state)
            unitarity.append(abs(norm(image.field) - norm(state.field)) / norm(state.field))
        extracted = extract_profile(image, t_star, ugrid, order=state.r)
        num = np.sqrt(np.sum(np.abs(extracted.values - predicted.values) ** 2) * ugrid.cell_volume())
        residuals.append(float(num / predicted.norm()))
    slope = fit_loglog_slope(schedule, residuals)
    passed = bool(slope >= slope_min and residuals[-1] <= residual_max)
    details = {"kind": kind, "slope_min": slope_min, "residual_max": residual_max}
    if unitarity:
        details["max_unitarity_defect"] = float(max(unitarity))
        passed = passed and details["max_unitarity_defect"] <= 1e-10
    return ConvergenceReport(
        name=f"fio-{kind}",
        hbars=list(schedule),
        residuals=residuals,
        slope=slope,
        passed=passed,
        details=details,
    )
