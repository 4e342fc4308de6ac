import numpy as np
import pytest

from popctrl.characteristics import CharacteristicsTable
from popctrl.errors import OutOfRange
from popctrl.rates import Table


def table_for(g, S=1.0, mu1=None, A=1.0, mu2=None, n=1024, cap=None):
    return CharacteristicsTable(g, S, mu1=mu1, max_age=A, mu2=mu2,
                                n_nodes=n, horizon_cap=cap)


def const(c):
    return lambda x: np.full_like(np.asarray(x, dtype=float), c)


class TestGrowthTime:
    def test_unit_growth_identity(self):
        t = table_for(const(1.0))
        assert t.growth_time(0.3) == pytest.approx(0.3, abs=1e-13)

    def test_sqrt_growth_closed_form(self):
        # g(s) = 2 sqrt(s) -> G(s) = sqrt(s); integrable endpoint singularity
        t = table_for(lambda s: 2.0 * np.sqrt(np.maximum(s, 0.0)))
        assert t.growth_time(0.25) == pytest.approx(0.5, abs=1e-8)

    def test_tabulated_growth_vs_refined_quadrature(self):
        # sample g(s) = 1 + s at 64 nodes; the oracle integrates the SAME
        # interpolant with a 10^6-node composite rule
        xs = np.linspace(0.0, 1.0, 64)
        g_tab = Table(xs, 1.0 + xs)
        t = table_for(g_tab)
        fine = np.linspace(0.0, 1.0, 1_000_001)
        oracle = np.trapz(1.0 / g_tab(fine), fine)
        assert t.growth_time(1.0) == pytest.approx(oracle, abs=1e-9)
        # and the interpolant of smooth data reproduces ln 2 closely
        assert t.growth_time(1.0) == pytest.approx(np.log(2.0), abs=1e-6)

    def test_out_of_range(self):
        t = table_for(const(1.0))
        with pytest.raises(OutOfRange):
            t.growth_time(1.5)

    def test_table_invariants(self):
        t = table_for(lambda s: 1.0 + s)
        assert t.G_values[0] == 0.0
        assert np.all(np.diff(t.G_values) > 0)


class TestInverseGrowth:
    def test_identity(self):
        t = table_for(const(1.0))
        assert t.inverse_growth(0.7) == pytest.approx(0.7, abs=1e-13)

    def test_round_trip_random(self, rng):
        t = table_for(lambda s: 1.0 + s)
        taus = rng.uniform(0.0, t.G_max, size=1000)
        for tau in taus:
            s = t.inverse_growth(tau)
            assert abs(t.growth_time(s) - tau) <= 1e-12 * t.G_max

    def test_endpoint_clamped(self):
        t = table_for(lambda s: 1.0 + s)
        assert t.inverse_growth(t.G_max) == t.S

    def test_node_round_trip(self):
        t = table_for(lambda s: 0.5 + s**2, n=256)
        for s_node, g_node in zip(t.s_nodes[::16], t.G_values[::16]):
            assert abs(t.inverse_growth(g_node) - s_node) <= 1e-10


class TestSurvival:
    def test_constant_age_rate(self):
        t = table_for(const(1.0), mu1=const(0.7), mu2=const(0.0))
        assert t.survival_ratio(0.9, 0.9, 0.4) == pytest.approx(
            np.exp(-0.7 * 0.4), rel=1e-13)

    def test_zero_elapsed(self):
        t = table_for(const(1.0), mu1=const(0.3), mu2=const(0.2))
        assert t.survival_ratio(0.5, 0.5, 0.0) == 1.0

    def test_affine_age_rate_closed_form(self):
        # mu1(a) = a integrates to a^2/2; Gauss panels are exact for affine
        t = table_for(const(1.0), mu1=lambda a: np.asarray(a, dtype=float),
                      mu2=const(0.0))
        expected = np.exp(-(0.8**2 - 0.3**2) / 2.0)
        assert t.survival_ratio(0.8, 0.9, 0.5) == pytest.approx(expected, rel=1e-12)

    def test_multiplicative_over_segments(self, rng):
        t = table_for(lambda s: 1.0 + 0.5 * s,
                      mu1=lambda a: 0.2 + np.sin(np.asarray(a))**2,
                      mu2=lambda s: 0.1 + 0.3 * np.asarray(s))
        for _ in range(50):
            t1, t2 = rng.uniform(0.01, 0.2, size=2)
            a = rng.uniform(t1 + t2, 1.0)
            tau = rng.uniform(t1 + t2, t.G_max * 0.99)
            s = t.inverse_growth(tau)
            full = t.survival_ratio(a, s, t1 + t2)
            s_mid = t.inverse_growth(tau - t1)
            split = t.survival_ratio(a, s, t1) * t.survival_ratio(a - t1, s_mid, t2)
            assert full == pytest.approx(split, rel=1e-12)

    def test_base_point_must_exist(self):
        t = table_for(const(1.0), mu1=const(0.1), mu2=const(0.1))
        with pytest.raises(OutOfRange):
            t.survival_ratio(0.2, 0.9, 0.5)   # age would go negative


class TestClassify:
    def setup_method(self):
        self.t = table_for(const(1.0), A=1.0)

    def test_interior(self):
        assert self.t.classify(0.2, 0.2, 0.5, max_age=1.0).tag == "A1"

    def test_age_exit(self):
        assert self.t.classify(0.7, 0.2, 0.5, max_age=1.0).tag == "A1p"

    def test_size_exit(self):
        assert self.t.classify(0.2, 0.7, 0.5, max_age=1.0).tag == "A2p"

    def test_tie_resolves_to_size_exit(self):
        region = self.t.classify(0.5, 0.5, 0.5, max_age=1.0)
        assert region.tie
        assert region.tag == "A2p"

    def test_agrees_with_argmax_formulation(self, rng):
        pts = rng.uniform(0.01, 0.99, size=(100_000, 3))
        A = 1.0
        d_age = pts[:, 2] - (A - pts[:, 0])
        d_size = pts[:, 2] - (1.0 - pts[:, 1])   # G = id for g = 1
        best = np.maximum(0.0, np.maximum(d_age, d_size))
        ties = ((np.abs(best - d_age) < 1e-9).astype(int)
                + (np.abs(best - d_size) < 1e-9).astype(int)
                + (np.abs(best) < 1e-9).astype(int)) > 1
        expect = np.where(d_size >= best, "A2p",
                          np.where(d_age >= best, "A1p", "A1"))
        sample = rng.choice(np.nonzero(~ties)[0], size=2000, replace=False)
        for i in sample:
            a, s, t = pts[i]
            assert self.t.classify(a, s, t, max_age=A).tag == expect[i]


class TestBackwardFoot:
    def setup_method(self):
        self.t = table_for(const(1.0), A=1.0)

    def test_identity_at_current_time(self):
        assert self.t.backward_foot(0.3, 0.4, 0.6, 0.6, max_age=1.0) == (0.3, 0.4)

    def test_linear_shift(self):
        age, size = self.t.backward_foot(0.1, 0.1, 0.5, 0.2, max_age=1.0)
        assert age == pytest.approx(0.4, abs=1e-13)
        assert size == pytest.approx(0.4, abs=1e-12)

    def test_lower_limit_matches_max_formula(self):
        assert self.t.lower_limit(0.7, 0.2, 0.5, max_age=1.0) == pytest.approx(0.2)

    def test_out_of_range_beyond_lower_limit(self):
        with pytest.raises(OutOfRange):
            self.t.backward_foot(0.7, 0.2, 0.5, 0.1, max_age=1.0)

    def test_invariants_along_characteristic(self, rng):
        t = table_for(lambda s: 1.0 + s, A=1.0)
        for _ in range(1000):
            a, s, tt = rng.uniform(0.05, 0.6, size=3)
            lam = rng.uniform(t.lower_limit(a, s, tt, max_age=1.0), tt)
            age, size = t.backward_foot(a, s, tt, lam, max_age=1.0)
            assert age - (tt - lam) == pytest.approx(a, abs=1e-12)
            assert t.growth_time(size) - (tt - lam) == pytest.approx(
                t.growth_time(s), abs=1e-10)


class TestStalledGrowthCap:
    def test_capped_table(self):
        # g vanishing at S with divergent travel time: cap the horizon
        g = lambda s: np.maximum(1.0 - np.asarray(s, dtype=float), 0.0)
        t = table_for(g, cap=5.0)
        assert t.G_max <= 5.0 + 1e-9
        s9 = t.inverse_growth(t.growth_time(0.9))
        assert s9 == pytest.approx(0.9, abs=1e-9)
        # sizes near S are never reached from below within the cap
        assert t.inverse_growth(t.G_max) <= 1.0


def test_csv_dump(tmp_path):
    t = table_for(const(1.0), n=64)
    path = tmp_path / "growth.csv"
    t.dump_csv(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (65, 2)
    assert data[-1, 1] == pytest.approx(t.G_max)
