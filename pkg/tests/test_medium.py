import math

import numpy as np
import pytest

import rtetr as rt


@pytest.fixture
def box():
    return rt.build_grid(rt.Box2D(1.0, 1.0), 6, n_theta=8)


def hg_medium(grid, g=0.5, mu_a=0.0, mu_s=1.0):
    return rt.build_medium(
        grid, mu_a=mu_a, mu_s=mu_s, kernel=rt.henyey_greenstein_kernel(grid, g)
    )


class TestKernels:
    def test_isotropic_fixes_angular_constants(self, box):
        med = rt.build_medium(box, mu_s=1.0)
        f = rt.Field(box, np.ones(box.field_shape()))
        out = rt.apply_scattering(med, f)
        assert np.allclose(out.values, 1.0, atol=1e-13)

    def test_zero_maps_to_zero(self, box):
        med = hg_medium(box)
        out = rt.apply_scattering(med, rt.Field.zeros(box))
        assert not out.values.any()

    def test_matches_dense_row_matrix(self, box):
        # oracle: planar phase function rows assembled and renormalized
        # directly, then applied as a dense weighted matrix
        g = 0.5
        cosang = np.clip(box.directions @ box.directions.T, -1, 1)
        raw = (1 - g * g) / (2 * np.pi * (1 + g * g - 2 * g * cosang))
        raw /= (raw @ box.weights)[:, None]
        med = hg_medium(box, g=g)
        rng = np.random.default_rng(0)
        f = rt.Field.random(box, rng)
        expected = f.values @ (raw * box.weights[None, :]).T
        out = rt.apply_scattering(med, f)
        assert np.allclose(out.values, expected, atol=1e-12)

    def test_validate_clean_kernels(self, box):
        for med in (rt.build_medium(box), hg_medium(box, 0.9)):
            assert rt.validate_kernel(med) == []

    def test_validate_catches_negative_entry(self, box):
        med = rt.build_medium(box)
        med.kernel.table[0, 1] = -0.1
        issues = rt.validate_kernel(med)
        assert any("nonnegativity" in v for v in issues)

    def test_construction_enforces_conservation(self, box):
        rng = np.random.default_rng(3)
        raw = rng.uniform(0.1, 2.0, (box.n_dirs, box.n_dirs))
        k = rt.table_kernel(box, raw)
        rows = k.table @ box.weights
        assert np.max(np.abs(rows - 1.0)) <= 1e-12
        neg = box.neg_index
        assert np.array_equal(k.table, k.table[np.ix_(neg, neg)].T)

    def test_rejects_negative_table(self, box):
        raw = -np.ones((box.n_dirs, box.n_dirs))
        with pytest.raises(ValueError):
            rt.table_kernel(box, raw)


class TestScatteringAdjoint:
    def test_adjoint_identity_random_pairs(self, box):
        med = hg_medium(box, 0.7)
        rng = np.random.default_rng(1)
        for _ in range(50):
            f, h = rt.Field.random(box, rng), rt.Field.random(box, rng)
            lhs = rt.phase_inner(rt.apply_scattering(med, f), h)
            rhs = rt.phase_inner(f, rt.apply_scattering_adjoint(med, h))
            assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))

    def test_isotropic_self_adjoint(self, box):
        med = rt.build_medium(box, mu_s=1.0)
        f = rt.Field.random(box, np.random.default_rng(2))
        a = rt.apply_scattering(med, f)
        b = rt.apply_scattering_adjoint(med, f)
        assert np.allclose(a.values, b.values, atol=1e-14)

    def test_flip_conjugation_matches_adjoint(self, box):
        # direction flip conjugation turns the kernel into its transpose
        med = hg_medium(box, 0.4)
        f = rt.Field.random(box, np.random.default_rng(3))
        lhs = rt.reflect_angle(rt.apply_scattering(med, f))
        rhs = rt.apply_scattering_adjoint(med, rt.reflect_angle(f))
        assert np.allclose(lhs.values, rhs.values, atol=1e-12)


class TestRegimeReport:
    def test_weak_scatter_example(self):
        g = rt.build_grid(rt.Rod1D(1.0), 4)
        med = rt.build_medium(g, mu_a=0.0, mu_s=0.1)
        rep = rt.regime_report(med, g)
        assert rep.lhs == pytest.approx(0.1 * math.exp(0.1), rel=1e-12)
        assert rep.satisfied
        assert rep.omega_star == pytest.approx(math.log(0.1 * math.exp(0.1)), rel=1e-12)
        assert rep.E_star == pytest.approx(1 + 0.1 + math.log(0.1), rel=1e-12)
        assert rep.E_star < 0

    def test_violating_example(self):
        g = rt.build_grid(rt.Rod1D(1.0), 4)
        med = rt.build_medium(g, mu_a=0.0, mu_s=0.5)
        rep = rt.regime_report(med, g)
        assert rep.lhs == pytest.approx(0.5 * math.exp(0.5), rel=1e-12)
        assert not rep.satisfied

    def test_no_scattering_degenerates(self):
        g = rt.build_grid(rt.Rod1D(1.0), 4)
        med = rt.build_medium(g, mu_a=0.7, mu_s=0.0)
        rep = rt.regime_report(med, g)
        assert rep.lhs == 0.0 and rep.satisfied
        assert rep.omega_star == -math.inf
        assert rep.decay_bound(1.5 * g.T) == 0.0

    def test_constants_formulas(self):
        g = rt.build_grid(rt.Rod1D(1.0), 4)
        med = rt.build_medium(g, mu_a=0.1, mu_s=0.05)
        rep = rt.regime_report(med, g)
        total = 1.0 * (0.1 + 0.05)
        assert rep.alpha0 == pytest.approx(1 + math.sqrt(2) + total, rel=1e-13)
        assert rep.beta0 == pytest.approx(
            math.sqrt(2) + (1 + total) * math.exp(total), rel=1e-13
        )
        scale = (math.sqrt(2) * math.e - 1) / (math.sqrt(2) * math.e)
        assert rep.alpha == pytest.approx(scale / rep.alpha0, rel=1e-13)
        assert rep.beta == pytest.approx(scale / rep.beta0, rel=1e-13)

    def test_decay_bound_formula(self):
        g = rt.build_grid(rt.Rod1D(1.0), 4)
        med = rt.build_medium(g, mu_a=0.0, mu_s=0.1)
        rep = rt.regime_report(med, g)
        base = math.exp(0.1)
        for t in (1.0, 2.0, 3.5):
            expected = math.e * base * (math.e * base * 0.1) ** (t / g.T - 1.0)
            assert rep.decay_bound(t) == pytest.approx(expected, rel=1e-12)

    def test_lhs_monotone_in_scattering(self):
        g = rt.build_grid(rt.Rod1D(1.0), 4)
        values = [
            rt.regime_report(rt.build_medium(g, mu_s=s), g).lhs
            for s in np.linspace(0.0, 1.0, 11)
        ]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_bars_are_discrete_maxima(self, box):
        x, y = box.cell_centers()
        med = rt.build_medium(box, mu_a=lambda x, y: 0.1 + 0.3 * x, mu_s=0.2)
        assert med.mu_a_bar == pytest.approx(med.mu_a.max())
        assert med.mu_s_bar == 0.2


class TestOperatorNormEstimate:
    def test_identity(self, box):
        est = rt.operator_norm_estimate(lambda f: f.copy(), box, iters=5, seed=0)
        assert est == pytest.approx(1.0, abs=1e-10)

    def test_conservative_kernel_norm_one(self, box):
        med = hg_medium(box, 0.5)
        est = rt.operator_norm_estimate(
            lambda f: rt.apply_scattering(med, f),
            box,
            iters=60,
            seed=1,
            apply_adjoint=lambda f: rt.apply_scattering_adjoint(med, f),
        )
        assert est <= 1.0 + 1e-8
        assert est >= 1.0 - 1e-6

    def test_homogeneity(self, box):
        med = rt.build_medium(box, mu_s=1.0)
        est = rt.operator_norm_estimate(
            lambda f: 2.0 * rt.apply_scattering(med, f),
            box,
            iters=60,
            seed=2,
            apply_adjoint=lambda f: 2.0 * rt.apply_scattering_adjoint(med, f),
        )
        assert est == pytest.approx(2.0, abs=1e-6)

    def test_rejects_bad_iters(self, box):
        with pytest.raises(ValueError):
            rt.operator_norm_estimate(lambda f: f, box, iters=0)


class TestMediumValidation:
    def test_rejects_negative_coefficients(self, box):
        with pytest.raises(ValueError):
            rt.build_medium(box, mu_a=-0.1)

    def test_coefficients_masked_on_disk(self):
        g = rt.build_grid(rt.Disk2D(0.5), 8, n_theta=4)
        med = rt.build_medium(g, mu_a=0.3, mu_s=0.1)
        assert np.all(med.mu_a[~g.mask] == 0.0)
        assert med.mu_a_bar == pytest.approx(0.3)
