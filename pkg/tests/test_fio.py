"""Elementary FIO classes and their symbol-transformation laws."""

import numpy as np
import pytest

from isoclass.grid import norm
from isoclass.states import (
    Profile,
    ProfileStack,
    Splitting,
    build_model_state,
    default_profile_grid,
    extract_profile,
    hermite_profile,
    profile_distance,
    pure_u_term,
    stack_term_from_expr,
    suggest_grid,
    wavefront_mass,
)
from isoclass.fio import (
    Diffeo,
    QuadraticPhase,
    fio_law_check,
    partial_fourier_apply,
    predicted_fourier_profile,
    pullback_apply,
    quadratic_phase_apply,
)

SPLIT01 = Splitting(k=0, l=1)
SPLIT11 = Splitting(k=1, l=1)
UG = default_profile_grid(1)


def stack01(extra=None):
    terms = [pure_u_term(hermite_profile([0], [1.0]), SPLIT01)]
    if extra:
        terms.append(pure_u_term(extra, SPLIT01))
    return ProfileStack(r=0.0, terms=tuple(terms), splitting=SPLIT01)


def stack11(a1=None):
    terms = [stack_term_from_expr("pi**(-1/4) * exp(-t_1**2) * exp(-u_1**2/2)", SPLIT11)]
    if a1:
        terms.append(stack_term_from_expr(a1, SPLIT11))
    return ProfileStack(r=0.0, terms=tuple(terms), splitting=SPLIT11)


class TestDiffeo:
    def test_roundtrip_validation(self):
        d = Diffeo.from_exprs(["x_1 - 1", "x_2*(1.25 + 0.3*x_2)"],
                              ["x_1 + 1", "(-1.25 + (1.5625 + 1.2*x_2)**0.5)/0.6"],
                              SPLIT11)
        assert np.allclose(d.u_block_at([0.0]), [[1.25]])
        assert np.allclose(d.base_image([0.7]), [-0.3])

    def test_bad_inverse_rejected(self):
        with pytest.raises(ValueError, match="identity"):
            Diffeo.from_exprs(["x_1", "2*x_2"], ["x_1", "x_2"], SPLIT11)

    def test_y_preservation_enforced(self):
        with pytest.raises(ValueError, match="u = 0"):
            Diffeo.from_exprs(["x_1", "x_2 + 1"], ["x_1", "x_2 - 1"], SPLIT11)


class TestPullback:
    def test_identity(self):
        d = Diffeo.from_exprs(["x_1", "x_2"], ["x_1", "x_2"], SPLIT11)
        hbar = 1e-3
        st = build_model_state(stack11(), hbar, suggest_grid(SPLIT11, hbar, t_size=64))
        out = pullback_apply(d, st)
        assert norm(out.field) > 0
        diff = np.max(np.abs(out.field.values - st.field.values))
        assert diff < 1e-8 * np.max(np.abs(st.field.values))

    def test_u_dilation_profiles(self):
        # U_f psi = psi o f: f = (t, 2u) composes to a0(2u); f = (t, u/2) to a0(u/2)
        hbar = 1e-3
        st = build_model_state(stack11(), hbar, suggest_grid(SPLIT11, hbar, t_size=64))
        u = UG.axis(0)
        base = np.pi**-0.25 * np.exp(-(u**2) / 2)
        d2 = Diffeo.from_exprs(["x_1", "2*x_2"], ["x_1", "x_2/2"], SPLIT11)
        prof = extract_profile(pullback_apply(d2, st), t_star=[0.0], ugrid=UG)
        assert profile_distance(prof, Profile(UG, np.pi**-0.25 * np.exp(-0.25) * np.exp(-2 * u**2))) < 1e-6
        dhalf = Diffeo.from_exprs(["x_1", "x_2/2"], ["x_1", "2*x_2"], SPLIT11)
        prof = extract_profile(pullback_apply(dhalf, st), t_star=[0.0], ugrid=UG)
        assert profile_distance(prof, Profile(UG, np.pi**-0.25 * np.exp(-0.25) * np.exp(-(u**2) / 8))) < 1e-6

    def test_t_translation(self):
        # f = (t - 1, u): extracted profile at t_star equals the original at t_star - 1
        hbar = 1e-3
        st = build_model_state(stack11(), hbar, suggest_grid(SPLIT11, hbar, t_size=64))
        d = Diffeo.from_exprs(["x_1 - 1", "x_2"], ["x_1 + 1", "x_2"], SPLIT11)
        prof = extract_profile(pullback_apply(d, st), t_star=[0.5], ugrid=UG)
        u = UG.axis(0)
        expected = np.pi**-0.25 * np.exp(-((0.5 - 1.0) ** 2)) * np.exp(-(u**2) / 2)
        assert profile_distance(prof, Profile(UG, expected)) < 1e-6

    def test_escape_detected(self):
        from isoclass.grid import DiagnosticError

        hbar = 1e-3
        st = build_model_state(stack11(), hbar, suggest_grid(SPLIT11, hbar, t_size=64))
        d = Diffeo.from_exprs(["x_1 + 6", "x_2"], ["x_1 - 6", "x_2"], SPLIT11)
        with pytest.raises(DiagnosticError, match="escap"):
            pullback_apply(d, st)

    def test_ml23_convergence(self):
        d = Diffeo.from_exprs(["x_1 - 1", "x_2*(1.25 + 0.3*x_2)"],
                              ["x_1 + 1", "(-1.25 + (1.5625 + 1.2*x_2)**0.5)/0.6"],
                              SPLIT11)
        rep = fio_law_check(
            "ml23", stack11(), [4e-3, 2e-3, 1e-3], diffeo=d, t_star=[0.5],
            grid_options={"t_size": 64},
        )
        assert rep.passed, rep.to_dict()


class TestQuadraticPhase:
    def test_zero_phase_identity(self):
        q = QuadraticPhase.from_expr("0", SPLIT01)
        hbar = 1e-3
        st = build_model_state(stack01(), hbar, suggest_grid(SPLIT01, hbar))
        out = quadratic_phase_apply(q, st)
        assert np.max(np.abs(out.field.values - st.field.values)) == 0.0

    def test_linear_phase_rejected(self):
        with pytest.raises(ValueError, match="gradient"):
            QuadraticPhase.from_expr("x_1", SPLIT01)
        with pytest.raises(ValueError, match="vanish"):
            QuadraticPhase.from_expr("1 + x_2**2", SPLIT11)

    def test_ml15_quadratic(self):
        # phi = u^2/2 + c u^3: leading profile e^{i u^2/2} a0, residual O(sqrt(hbar))
        q = QuadraticPhase.from_expr("x_1**2/2 + 0.4*x_1**3", SPLIT01)
        rep = fio_law_check("ml15", stack01(), [4e-3, 2e-3, 1e-3], phase=q)
        assert rep.passed, rep.to_dict()
        assert abs(rep.slope - 0.5) < 0.12

    def test_ml15_cubic_leading_identity(self):
        # phi = u^3 vanishes to third order: the leading profile is unchanged
        q = QuadraticPhase.from_expr("x_1**3", SPLIT01)
        rep = fio_law_check("ml15", stack01(), [4e-3, 2e-3, 1e-3], phase=q)
        assert rep.passed
        assert abs(rep.slope - 0.5) < 0.12

    def test_hessian_extraction(self):
        q = QuadraticPhase.from_expr("x_2**2 * (1 + x_1**2)", SPLIT11)
        assert np.allclose(q.hessian_u([0.5]), [[1.25]])


class TestPartialFourier:
    def test_gaussian_fixed_point(self):
        hbar = 1e-3
        st = build_model_state(stack01(), hbar, suggest_grid(SPLIT01, hbar))
        out = partial_fourier_apply(st)
        assert out.r == st.r
        prof = extract_profile(out, ugrid=UG)
        ref = Profile(UG, hermite_profile([0], [1.0])(UG.axis(0)))
        assert profile_distance(prof, ref) < 0.05

    def test_hermite_eigenfunction(self):
        # h1 maps to -i h1 under the unitary transform
        terms = (pure_u_term(hermite_profile([1], [1.0]), SPLIT01),)
        stack = ProfileStack(r=0.0, terms=terms, splitting=SPLIT01)
        hbar = 1e-3
        st = build_model_state(stack, hbar, suggest_grid(SPLIT01, hbar))
        prof = extract_profile(partial_fourier_apply(st), ugrid=UG)
        h1 = hermite_profile([1], [1.0])(UG.axis(0))
        assert profile_distance(prof, Profile(UG, -1j * h1)) < 0.05
        # magnitudes agree even before fixing the phase
        assert np.max(np.abs(np.abs(prof.values) - np.abs(h1))) < 0.05

    def test_double_transform_parity(self):
        hbar = 1e-3
        stack = stack01(extra=hermite_profile([1], [1.0]))
        st = build_model_state(stack, hbar, suggest_grid(SPLIT01, hbar))
        twice = partial_fourier_apply(partial_fourier_apply(st))
        prof = extract_profile(twice, ugrid=UG)
        direct = extract_profile(st, ugrid=UG)
        mirrored = direct.values[::-1]
        # |profile|(u) = |a|(-u) up to interpolation/parity-node offset
        u = UG.axis(0)
        keep = np.abs(u) < 6
        assert np.max(np.abs(np.abs(prof.values) - np.abs(mirrored))[keep]) < 0.05

    def test_unitarity(self):
        hbar = 1e-3
        st = build_model_state(stack01(), hbar, suggest_grid(SPLIT01, hbar))
        out = partial_fourier_apply(st)
        assert abs(norm(out.field) - norm(st.field)) <= 1e-10 * norm(st.field)

    def test_ml18_convergence(self):
        stack = stack01(extra=lambda u: (0.6 + 0.4 * u) * np.pi**-0.25 * np.exp(-(u**2) / 2))
        rep = fio_law_check("ml18", stack, [4e-3, 2e-3, 1e-3])
        assert rep.passed, rep.to_dict()
        assert rep.details["max_unitarity_defect"] <= 1e-10

    def test_ml18_on_k1(self):
        rep = fio_law_check(
            "ml18",
            stack11(a1="(0.5 + 0.4*u_1) * exp(-t_1**2) * exp(-u_1**2/2)"),
            [4e-3, 2e-3, 1e-3],
            t_star=[0.0],
            grid_options={"t_size": 64},
        )
        assert rep.passed, rep.to_dict()


class TestClassPreservation:
    def test_wavefront_decay_after_each_fio(self):
        # mass outside a fixed neighborhood keeps dropping >= 4x per hbar halving
        radius = 0.2
        masses = {}
        for hbar in (4e-3, 2e-3):
            st = build_model_state(stack01(), hbar, suggest_grid(SPLIT01, hbar))
            q = QuadraticPhase.from_expr("x_1**2/2", SPLIT01)
            d = Diffeo.from_exprs(["x_1*(1 + 0.2*x_1)"], ["(-1 + (1 + 0.8*x_1)**0.5)/0.4"], SPLIT01)
            images = {
                "built": st,
                "phase": quadratic_phase_apply(q, st),
                "fourier": partial_fourier_apply(st),
                "pullback": pullback_apply(d, st),
            }
            masses[hbar] = {kk: wavefront_mass(s, radius) for kk, s in images.items()}
        for kk in masses[4e-3]:
            assert masses[4e-3][kk] / max(masses[2e-3][kk], 1e-300) >= 4.0, kk
