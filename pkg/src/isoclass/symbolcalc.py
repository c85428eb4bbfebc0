"""Predicted symbols of P(Upsilon) at orders 0, 1/2, 1 and the convergence harness.

With the splitting ``x = (t, u)``, ``xi = (tau, mu)`` and the evaluation point
``s = (t_star, 0; 0, 0)``, the predictions are:

* order 0:  ``p0(s) a0``
* order 1:  ``sum_j u_j dp0/du_j(s) a0 + (1/i) sum_j dp0/dmu_j(s) da0/du_j``
  (requires ``p0`` to vanish on the model submanifold)
* order 2:  ``p1(s) a0 + (1/i) sum_j dp0/dtau_j(s) da0/dt_j
  + (1/2) sum_ij [ d2p0/du_i du_j a0 u_i u_j
  + (2/i) d2p0/du_i dmu_j (da0/du_j) u_i - d2p0/dmu_i dmu_j d2a0/du_i du_j ]``
  (requires additionally that the Hamilton field is tangent: dp0/du = dp0/dmu = 0
  at s).

The harness builds states on a geometric hbar schedule, applies the quantized
operator, extracts the image profile at the shifted order, and fits the
residual decay; a surviving half power of hbar appears as log-log slope 1/2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .grid import Grid, spectral_gradient
from .quantize import SymbolOracle, apply_kn
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

__all__ = ["TransportPrediction", "ConvergenceReport", "transport_predict", "transport_check", "regularity_check"]

PRECONDITION_TOL = 1e-10


@dataclass(frozen=True)
class TransportPrediction:
    """Predicted rescaled symbol of P(Upsilon), `order` half-powers below the identity."""

    order: int
    profile: Profile


@dataclass
class ConvergenceReport:
    """Residuals of a prediction across an hbar schedule with a fitted decay slope."""

    name: str
    hbars: list[float]
    residuals: list[float]
    slope: float
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "hbars": list(self.hbars),
            "residuals": list(self.residuals),
            "slope": self.slope,
            "passed": bool(self.passed),
            "details": dict(self.details),
        }


def fit_loglog_slope(hbars: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of log(values) against log(hbars); needs >= 3 points."""
    hbars = np.asarray(hbars, dtype=float)
    values = np.asarray(values, dtype=float)
    if hbars.size < 3:
        raise ValueError("slope fit needs at least 3 points")
    if np.any(values <= 0):
        return float("nan")
    return float(np.polyfit(np.log(hbars), np.log(values), 1)[0])


def _point(splitting: Splitting, t_star) -> tuple[np.ndarray, np.ndarray]:
    k, n = splitting.k, splitting.n
    x = np.zeros(n)
    if k:
        x[:k] = np.atleast_1d(np.asarray(t_star, dtype=float))
    return x, np.zeros(n)


def _leading_values(stack: ProfileStack, t_star, ugrid: Grid):
    """a0(t_star, u) and its t-partials on the profile grid."""
    split = stack.splitting
    mesh = np.meshgrid(*ugrid.axes(), indexing="ij")
    ts = [np.full(ugrid.sizes, t) for t in np.atleast_1d(np.asarray(t_star, dtype=float))] if split.k else []
    lead = stack.terms[0]
    a0 = np.asarray(lead.fn(*ts, *mesh))
    dts = None
    if split.k:
        if lead.dt is None:
            raise ValueError("order-2 predictions with k >= 1 need a stack with analytic t-derivatives")
        dts = [np.asarray(d(*ts, *mesh)) for d in lead.dt]
    return a0, dts


def _check_vanishing(label: str, value: complex, tol: float = PRECONDITION_TOL):
    if abs(value) > tol:
        raise ValueError(f"precondition violated: {label} = {value:.3e} exceeds {tol:.0e}")


def transport_predict(
    p: SymbolOracle,
    stack: Union[ProfileStack, Profile],
    t_star=(),
    order: int = 0,
    ugrid: Optional[Grid] = None,
) -> TransportPrediction:
    """Predicted rescaled symbol of P(Upsilon) at the given half-power order.

    ``stack`` may be a bare Profile only when its t-derivative is not needed
    (k = 0, or order < 2, or the symbol has no tau dependence at s).
    """
    if isinstance(stack, ProfileStack):
        split = stack.splitting
        if ugrid is None:
            ugrid = default_profile_grid(split.l)
        a0, dts = (None, None)
    else:
        split = Splitting(k=len(stack.base_point), l=stack.ugrid.dim)
        ugrid = stack.ugrid
    if p.n != split.n:
        raise ValueError("symbol dimension does not match the splitting")

    x, xi = _point(split, t_star)
    k, l = split.k, split.l
    if isinstance(stack, ProfileStack):
        a0, dts = _leading_values(stack, t_star, ugrid)
    else:
        a0, dts = stack.values, None

    mesh = np.meshgrid(*ugrid.axes(), indexing="ij")
    pg = Grid(ugrid.half_widths, ugrid.sizes)

    def check_vanishing_on_sigma0():
        # the theorems need p0 to vanish on all of the model submanifold, not
        # just at s: probe a few base points along the t axes
        _check_vanishing("p0(s)", p.value(x, xi))
        for shift in (-3.0, -1.0, 1.0, 3.0):
            xt = x.copy()
            xt[:k] = xt[:k] + shift
            _check_vanishing(f"p0 on Sigma_0 at t offset {shift}", p.value(xt, xi))

    if order == 0:
        vals = p.value(x, xi) * a0
    elif order == 1:
        check_vanishing_on_sigma0()
        gx = p.grad_x(x, xi)[k:]
        gxi = p.grad_xi(x, xi)[k:]
        vals = np.zeros(ugrid.sizes, dtype=complex)
        for j in range(l):
            if gx[j] != 0.0:
                vals = vals + gx[j] * mesh[j] * a0
            if gxi[j] != 0.0:
                vals = vals + (gxi[j] / 1j) * spectral_gradient(a0, pg, j)
    elif order == 2:
        check_vanishing_on_sigma0()
        gx = p.grad_x(x, xi)
        gxi = p.grad_xi(x, xi)
        for j in range(l):
            _check_vanishing(f"dp0/du_{j+1}(s)", gx[k + j])
            _check_vanishing(f"dp0/dmu_{j+1}(s)", gxi[k + j])
        vals = np.zeros(ugrid.sizes, dtype=complex)
        if p.p1 is not None:
            vals = vals + np.asarray(p.p1(*list(x), *list(xi))).reshape(()) * a0
        # t-derivative term (1/i) dp0/dtau_j da0/dt_j
        for j in range(k):
            coeff = gxi[j]
            if coeff != 0.0:
                if dts is None:
                    raise ValueError("t-derivative term requires a ProfileStack with dt evaluators")
                vals = vals + (coeff / 1j) * dts[j]
        huu = p.hess(x, xi, "x", "x")[k:, k:]
        hum = p.hess(x, xi, "x", "xi")[k:, k:]
        hmm = p.hess(x, xi, "xi", "xi")[k:, k:]
        grads = [spectral_gradient(a0, pg, j) for j in range(l)]
        for i in range(l):
            for j in range(l):
                if huu[i, j] != 0.0:
                    vals = vals + 0.5 * huu[i, j] * mesh[i] * mesh[j] * a0
                if hum[i, j] != 0.0:
                    vals = vals + (hum[i, j] / 1j) * mesh[i] * grads[j]
                if hmm[i, j] != 0.0:
                    vals = vals - 0.5 * hmm[i, j] * spectral_gradient(grads[i], pg, j)
    else:
        raise ValueError("order must be 0, 1, or 2")

    prof = Profile(ugrid=ugrid, values=vals, base_point=tuple(np.atleast_1d(t_star)) if k else ())
    return TransportPrediction(order=order, profile=prof)


def _residual(extracted: Profile, predicted: Profile) -> float:
    num = np.sqrt(np.sum(np.abs(extracted.values - predicted.values) ** 2) * extracted.ugrid.cell_volume())
    den = predicted.norm()
    return float(num / den) if den > 1e-300 else float(num)


def transport_check(
    p: SymbolOracle,
    stack: ProfileStack,
    order: int,
    schedule: Sequence[float],
    t_star=(),
    ugrid: Optional[Grid] = None,
    grid_options: Optional[dict] = None,
    slope_target: float = 0.5,
    slope_tol: float = 0.1,
    residual_max: float = 0.05,
) -> ConvergenceReport:
    """Build / apply / extract across an hbar schedule and compare to the prediction.

    Pass criteria: fitted slope >= slope_target - slope_tol and final residual
    <= residual_max (the convention throughout the acceptance suite).
    """
    schedule = list(schedule)
    if len(schedule) < 3:
        raise ValueError("schedule needs at least 3 points")
    ratios = np.array(schedule[1:]) / np.array(schedule[:-1])
    if not np.allclose(ratios, ratios[0], rtol=1e-8):
        raise ValueError("schedule must be geometric")
    split = stack.splitting
    if ugrid is None:
        ugrid = default_profile_grid(split.l)
    opts = dict(profile_spacing=min(ugrid.spacing))
    opts.update(grid_options or {})
    prediction = transport_predict(p, stack, t_star, order, ugrid)
    residuals = []
    for hbar in schedule:
        grid = suggest_grid(split, hbar, **opts)
        state = build_model_state(stack, hbar, grid)
        image = apply_kn(p, state.field)
        shifted = IsotropicState(image, split, state.r, stack=None)
        extracted = extract_profile(shifted, t_star, ugrid, order=state.r + order / 2.0)
        residuals.append(_residual(extracted, prediction.profile))
    slope = fit_loglog_slope(schedule, residuals)
    passed = bool(slope >= slope_target - slope_tol and residuals[-1] <= residual_max)
    return ConvergenceReport(
        name=f"transport-order-{order}",
        hbars=schedule,
        residuals=residuals,
        slope=slope,
        passed=passed,
        details={
            "order": order,
            "slope_target": slope_target,
            "slope_tol": slope_tol,
            "residual_max": residual_max,
            "t_star": list(np.atleast_1d(t_star)) if split.k else [],
        },
    )


def regularity_check(
    symbols: Sequence[SymbolOracle],
    stack: ProfileStack,
    schedule: Sequence[float],
    t_star=(),
    ugrid: Optional[Grid] = None,
    grid_options: Optional[dict] = None,
    growth_tol: float = 0.1,
) -> ConvergenceReport:
    """Isotropic regularity: composing operators whose symbols vanish on the model
    submanifold with tangent Hamilton fields keeps the rescaled profile bounded.

    Applies the operators in sequence, extracts at order r + len(symbols), and
    fits the profile-norm slope across the schedule: pass iff slope >= -growth_tol.
    """
    split = stack.splitting
    if ugrid is None:
        ugrid = default_profile_grid(split.l)
    x, xi = _point(split, t_star)
    for idx, p in enumerate(symbols):
        _check_vanishing(f"symbol {idx}: p0(s)", p.value(x, xi))
        for j in range(split.l):
            _check_vanishing(f"symbol {idx}: dp0/du_{j+1}(s)", p.grad_x(x, xi)[split.k + j])
            _check_vanishing(f"symbol {idx}: dp0/dmu_{j+1}(s)", p.grad_xi(x, xi)[split.k + j])
    opts = dict(profile_spacing=min(ugrid.spacing))
    opts.update(grid_options or {})
    schedule = list(schedule)
    norms = []
    for hbar in schedule:
        grid = suggest_grid(split, hbar, **opts)
        state = build_model_state(stack, hbar, grid)
        out = state.field
        for p in symbols:
            out = apply_kn(p, out)
        shifted = IsotropicState(out, split, state.r, stack=None)
        extracted = extract_profile(shifted, t_star, ugrid, order=state.r + len(symbols))
        norms.append(extracted.norm())
    slope = fit_loglog_slope(schedule, norms)
    passed = bool(np.isnan(slope) or slope >= -growth_tol)
    return ConvergenceReport(
        name="isotropic-regularity",
        hbars=schedule,
        residuals=norms,
        slope=slope,
        passed=passed,
        details={"growth_tol": growth_tol, "n_operators": len(symbols)},
    )
