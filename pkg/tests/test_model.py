import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from popctrl.errors import InvalidConfig, NonFiniteSample
from popctrl.model import (critical_sizes, minimal_time, spec_from_json,
                           spec_to_json, transit_times, validate)
from popctrl.rates import Bump, Constant, Poly, Table

from conftest import build_spec, degenerate_spec


class TestTransitTimes:
    def test_unit_growth(self):
        spec = build_spec(control=(0.3, 0.7, 0.1, 0.9, 0.2, 0.8))
        t = transit_times(spec)
        assert t.s1_star == pytest.approx(0.2, abs=1e-13)
        assert t.s2_star == pytest.approx(0.2, abs=1e-13)
        assert t.t0 == pytest.approx(0.2, abs=1e-13)
        assert t.t1 == pytest.approx(0.3, abs=1e-13)

    def test_t1_dominated_by_s1(self):
        spec = build_spec(control=(0.3, 0.7, 0.0, 1.0, 0.5, 0.9))
        t = transit_times(spec)
        assert t.t1 == pytest.approx(0.5, abs=1e-13)   # max{0.1, 0.5}

    def test_affine_growth_closed_form(self):
        # g(s) = 1 + s, S = e - 1: G(s) = ln(1 + s), G(S) = 1
        S = math.e - 1.0
        spec = build_spec(g=lambda s: 1.0 + np.asarray(s, dtype=float), S=S,
                          control=(0.3, 0.7, 0.1, 0.9, 0.2, S))
        t = transit_times(spec)
        assert t.s2_star == pytest.approx(0.0, abs=1e-10)
        assert t.s1_star == pytest.approx(math.log(1.2), abs=1e-10)
        assert t.t0 == pytest.approx(t.s1_star, abs=1e-10)


class TestCriticalSizes:
    def test_unit_growth_values(self):
        spec = build_spec()
        c = critical_sizes(spec)
        assert c.alpha_star == pytest.approx(0.7, abs=1e-12)
        assert c.beta_star == pytest.approx(0.1, abs=1e-12)

    def test_beta_star_absent(self):
        spec = build_spec(control=(0.3, 0.7, 0.3, 0.9, 0.2, 0.8))
        c = critical_sizes(spec)
        assert c.beta_star is None
        assert c.alpha_star == pytest.approx(0.5, abs=1e-12)

    def test_round_trip_against_growth_time(self):
        spec = build_spec(g=lambda s: 1.0 + np.asarray(s, dtype=float))
        table = spec.table(n_nodes=512)
        c = critical_sizes(spec, table=table)
        a1 = spec.control.a_lo
        assert abs(table.growth_time(spec.control.s_hi)
                   - table.growth_time(c.alpha_star) - a1) <= table.tolerance * 10
        assert c.alpha_star < spec.control.s_hi
        assert c.beta_star < spec.control.s_lo


class TestMinimalTime:
    def test_reference_arithmetic(self):
        spec = build_spec()
        assert minimal_time(spec, "probabilistic") == pytest.approx(0.6, abs=1e-12)
        assert minimal_time(spec, "local") == pytest.approx(0.6, abs=1e-12)

    def test_probabilistic_exceeds_local(self):
        spec = build_spec(control=(0.3, 0.7, 0.0, 1.0, 0.5, 0.9))
        assert minimal_time(spec, "probabilistic") == pytest.approx(1.0, abs=1e-12)
        assert minimal_time(spec, "local") == pytest.approx(0.6, abs=1e-12)

    def test_top_size_window_drops_s2_star(self):
        # s2 = S removes the upper transit: T1 collapses to S1* and the
        # threshold becomes A - a2 + S1* + T0
        spec = build_spec(control=(0.3, 0.7, 0.0, 0.9, 0.2, 1.0))
        t = transit_times(spec)
        assert t.s2_star == pytest.approx(0.0, abs=1e-12)
        assert t.t1 == pytest.approx(t.s1_star, abs=1e-12)
        assert minimal_time(spec, "probabilistic") == pytest.approx(
            1.0 - 0.9 + t.s1_star + t.t0, abs=1e-12)

    @given(a1=st.floats(0.0, 0.5), s1=st.floats(0.01, 0.45),
           gap2=st.floats(0.01, 0.45))
    @settings(max_examples=200, deadline=None)
    def test_kernel_gap_nonnegative(self, a1, s1, gap2):
        # minimal_time(prob) - minimal_time(local) >= 0 for all geometries
        s1_star, s2_star = s1, gap2        # g = 1
        gap = (max(a1 + s2_star, s1_star) + max(s1_star, s2_star)
               - (a1 + s1_star + s2_star))
        assert gap >= -1e-15

    def test_kernel_gap_matches_solver(self):
        spec = build_spec(control=(0.3, 0.7, 0.05, 0.9, 0.3, 0.85))
        t = transit_times(spec)
        a1 = spec.control.a_lo
        gap = (max(a1 + t.s2_star, t.s1_star) + max(t.s1_star, t.s2_star)
               - (a1 + t.s1_star + t.s2_star))
        diff = minimal_time(spec, "probabilistic") - minimal_time(spec, "local")
        assert diff == pytest.approx(gap, abs=1e-12)
        assert diff >= -1e-15


class TestValidate:
    def test_zero_rates_pass_with_truncated_tails(self):
        spec = build_spec(mu1=0.0, mu2=0.0, beta_amp=0.0)
        rep = validate(spec)
        assert rep.structural_ok
        tails = [c for c in rep.checks if "tail" in c.name]
        assert len(tails) == 2
        assert all(c.passed is None for c in tails)
        assert all("truncated" in c.note for c in tails)

    def test_degenerate_inequalities_pass(self):
        # k(x) = x(1-x): x k' = x(1-2x) <= x(1-x) on (0,1) with M1 = 1
        rep = validate(degenerate_spec())
        assert rep.structural_ok
        names = {c.name: c for c in rep.checks}
        assert names["A2_degeneracy_exponent_m1"].passed
        assert names["A2_degeneracy_exponent_m2"].passed
        assert names["A2_k_vanishes_at_endpoint"].passed

    def test_table_growth_negative_sample_fails(self):
        xs = np.linspace(0.0, 1.0, 8)
        ys = np.ones(8)
        ys[5] = -0.25
        spec = build_spec(g=Table(xs, ys))
        rep = validate(spec)
        assert not rep.structural_ok
        bad = [c for c in rep.checks if c.name == "H3_table_samples_nonnegative"][0]
        assert bad.passed is False
        assert bad.witness["index"] == 5

    def test_non_finite_sample_raises(self):
        spec = build_spec(mu1=Constant(float("nan")))
        with pytest.raises(NonFiniteSample):
            validate(spec)

    def test_pure(self):
        spec = build_spec(mu1=0.1, mu2=0.2, beta_amp=1.0)
        assert validate(spec) == validate(spec)

    def test_hypothesis_vector_reports_violation(self):
        # shrink a2 so S2* > a2 - a1: reported, not enforced
        spec = build_spec(control=(0.3, 0.7, 0.1, 0.25, 0.2, 0.8))
        rep = validate(spec)
        assert rep.structural_ok            # structure fine
        assert rep.hypothesis["S2_star_bound"] is False


class TestSpecJson:
    def test_round_trip(self):
        spec = build_spec(mu1=0.1, mu2=0.2, beta_amp=2.0)
        doc = spec_to_json(spec)
        again = spec_from_json(json.loads(json.dumps(doc)))
        assert spec_to_json(again) == doc

    def test_degenerate_round_trip(self):
        spec = degenerate_spec(beta_amp=1.0)
        doc = spec_to_json(spec)
        again = spec_from_json(doc)
        assert again.diffusion.is_degenerate
        assert spec_to_json(again) == doc

    def test_missing_key_raises(self):
        with pytest.raises(InvalidConfig):
            spec_from_json({"growth": {"rate": {"kind": "constant", "value": 1.0},
                                       "max_size": 1.0}})

    def test_control_region_invariants(self):
        with pytest.raises(InvalidConfig):
            build_spec(control=(0.0, 0.7, 0.1, 0.9, 0.2, 0.8))  # omega touches 0
        with pytest.raises(InvalidConfig):
            build_spec(control=(0.3, 0.7, 0.9, 0.1, 0.2, 0.8))  # a1 > a2
