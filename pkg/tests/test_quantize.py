"""Kohn-Nirenberg quantization contracts."""

import numpy as np
import pytest

from isoclass.grid import Field, PhasePoint, coherent_field, inner_product, make_grid, norm
from isoclass.quantize import SymbolOracle, apply_kn

HBAR = 0.01
GRID = make_grid([8], [1024])


def coherent(z=(0.0, 0.0), hbar=HBAR, grid=GRID):
    return coherent_field(grid, hbar, PhasePoint([z[0]], [z[1]]))


class TestApplyKn:
    def test_unit_symbol_is_identity(self):
        f = coherent((0.3, -0.2))
        out = apply_kn(SymbolOracle.from_expr("1", 1), f)
        assert norm(Field(GRID, HBAR, out.values - f.values)) < 1e-10 * norm(f)

    def test_position_symbol_multiplies(self):
        f = coherent((0.5, 0.1))
        out = apply_kn(SymbolOracle.from_expr("x_1", 1), f)
        x = GRID.axis(0)
        assert np.max(np.abs(out.values - x * f.values)) < 1e-12 * np.max(np.abs(f.values))

    def test_momentum_symbol_on_coherent_state(self):
        # Exact Gaussian identity: (hbar D) g_z = (xi0 + i (x - x0)) g_z,
        # hence <g_z, P g_z> = xi0 with vanishing first moment.
        x0, xi0 = 0.4, 0.7
        f = coherent((x0, xi0))
        out = apply_kn(SymbolOracle.from_expr("xi_1", 1), f)
        x = GRID.axis(0)
        expected = (xi0 + 1j * (x - x0)) * f.values
        assert norm(Field(GRID, HBAR, out.values - expected)) < 1e-9
        assert abs(inner_product(f, out) - xi0) < 1e-9

    def test_linearity(self):
        f, g = coherent((0.2, 0.0)), coherent((-0.1, 0.3))
        pa = SymbolOracle.from_expr("x_1*xi_1", 1)
        pb = SymbolOracle.from_expr("xi_1**2", 1)
        pab = SymbolOracle.from_expr("x_1*xi_1 + xi_1**2", 1)
        lhs = apply_kn(pab, Field(GRID, HBAR, f.values + 2j * g.values))
        rhs = (
            apply_kn(pa, f).values + 2j * apply_kn(pa, g).values
            + apply_kn(pb, f).values + 2j * apply_kn(pb, g).values
        )
        assert norm(Field(GRID, HBAR, lhs.values - rhs)) < 1e-12 * norm(lhs)

    def test_dense_path_matches_separable(self):
        f = coherent((0.2, -0.4), grid=make_grid([8], [256]))
        expr = SymbolOracle.from_expr("x_1*xi_1 + cos(x_1)", 1)
        dense = SymbolOracle.from_callables(expr.p0, 1)
        assert expr.separable_p0 is not None and dense.separable_p0 is None
        a = apply_kn(expr, f)
        b = apply_kn(dense, f)
        assert norm(Field(f.grid, HBAR, a.values - b.values)) < 1e-10 * norm(a)

    def test_dense_path_2d(self):
        g2 = make_grid([6, 6], [64, 64])
        f = coherent_field(g2, 0.05, PhasePoint([0.2, -0.1], [0.3, 0.0]))
        expr = SymbolOracle.from_expr("x_2*xi_1 + xi_2**2", 2)
        dense = SymbolOracle.from_callables(expr.p0, 2)
        a = apply_kn(expr, f)
        b = apply_kn(dense, f)
        assert norm(Field(g2, 0.05, a.values - b.values)) < 1e-10 * norm(a)

    def test_p1_term_scales_with_hbar(self):
        p = SymbolOracle.from_expr("x_1", 1, p1="x_1")
        for hb in (1e-2, 5e-3):
            f = coherent(hbar=hb)
            out = apply_kn(p, f)
            x = GRID.axis(0)
            expected = (1 + hb) * x * f.values
            assert np.max(np.abs(out.values - expected)) < 1e-12

    def test_nonfinite_symbol_reports(self):
        f = coherent(grid=make_grid([8], [256]))
        bad = SymbolOracle.from_callables(
            lambda x, xi: np.where(np.broadcast_to(x, np.broadcast(x, xi).shape) == 0.0, np.nan, 1.0), 1
        )
        with pytest.raises(ValueError, match="non-finite"):
            apply_kn(bad, f)

    def test_self_adjointness(self):
        # multiplier or multiplication symbols: exactly symmetric; mixed real
        # symbols: O(hbar) defect, halving with hbar
        defects = {}
        for hb in (2e-2, 1e-2):
            f = coherent((0.3, 0.2), hbar=hb)
            g = coherent((-0.2, -0.1), hbar=hb)
            for name in ("xi_1**2", "x_1**2"):
                p = SymbolOracle.from_expr(name, 1)
                d = abs(inner_product(apply_kn(p, f), g) - inner_product(f, apply_kn(p, g)))
                assert d < 1e-12
            p = SymbolOracle.from_expr("x_1*xi_1", 1)
            defects[hb] = abs(inner_product(apply_kn(p, f), g) - inner_product(f, apply_kn(p, g)))
            assert defects[hb] < 10 * hb * norm(f) * norm(g)
        assert defects[1e-2] < 0.75 * defects[2e-2]


class TestSymbolOracle:
    def test_analytic_derivatives_match_fd(self):
        p = SymbolOracle.from_expr("exp(x_1)*sin(xi_1) + x_1**2*xi_1", 1)
        p.verify_derivatives([((0.3,), (0.7,)), ((-1.0,), (0.2,))])

    def test_bad_derivative_caught(self):
        p = SymbolOracle.from_expr("x_1*xi_1", 1)
        p.dx[0] = lambda x, xi: np.broadcast_to(0.0, np.broadcast(x, xi).shape).copy()
        with pytest.raises(ValueError, match="finite differences"):
            p.verify_derivatives([((0.5,), (1.0,))])

    def test_fd_fallback_accuracy(self):
        p = SymbolOracle.from_callables(lambda x, xi: np.exp(x) * xi**2, 1)
        got = p.grad_x((0.5,), (2.0,))[0]
        assert abs(got - np.exp(0.5) * 4.0) < 1e-6
        got2 = p.hess((0.5,), (2.0,), "xi", "xi")[0, 0]
        assert abs(got2 - 2 * np.exp(0.5)) < 1e-4

    def test_subprincipal(self):
        p = SymbolOracle.from_expr("x_1*xi_1", 1)
        assert np.isclose(p.subprincipal((0.0,), (0.0,)), 0.5j)
        q = SymbolOracle.from_expr("xi_1**2", 1, p1="x_1")
        assert np.isclose(q.subprincipal((2.0,), (0.0,)), 2.0)

    def test_hamilton_field_and_bracket(self):
        # {Re H, Im H} for H = xi - I x is -1 (hand computation, 2x2 case)
        p = SymbolOracle.from_expr("xi_1 - I*x_1", 1)
        z = PhasePoint([0.0], [0.0])
        assert np.allclose(p.hamilton_field(z), [1.0, 1j])
        assert np.isclose(p.poisson_bracket_re_im(z), -1.0)
        # H = xi^2 + I x at (0, -1): bracket 2 xi = -2
        q = SymbolOracle.from_expr("xi_1**2 + I*x_1", 1)
        assert np.isclose(q.poisson_bracket_re_im(PhasePoint([0.0], [-1.0])), -2.0)

    def test_shifted_oracle(self):
        p = SymbolOracle.from_expr("xi_1**2 + I*x_1", 1)
        q = p.shifted(PhasePoint([0.0], [-1.0]))
        # q(x, xi) = (xi - 1)^2 + I x
        assert np.isclose(q.value((0.0,), (0.0,)), 1.0)
        assert np.isclose(q.value((2.0,), (1.0,)), 2j)

    def test_separability_detection(self):
        assert SymbolOracle.from_expr("sin(x_1*xi_1)", 1).separable_p0 is None
        p = SymbolOracle.from_expr("(1 + x_1**2)*xi_1 + exp(x_1)", 1)
        assert p.separable_p0 is not None
