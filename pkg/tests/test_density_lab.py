import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import ndtr

from sgld_bounds.density_lab import (
    CHECKS,
    DriftSpec,
    LabSetup,
    Propagator,
    divergence,
    evolve_fokker_planck,
    fp_dt_limit,
    gaussian_pdf,
    lab_verify,
    make_grid,
    propagate,
)
from sgld_bounds.density_lab.grid import GridMismatch, SupportError
from sgld_bounds.problems import make_problem

HELLINGER_01 = 1.0 - math.exp(-1.0 / 8.0)


def _l1_to(p, values):
    return float(p.weights @ np.abs(p.values - values))


def _linear(slope):
    return DriftSpec.custom(lambda y: slope * y)


class TestMakeGrid:
    def test_gaussian_normalized(self):
        p = make_grid(-10.0, 10.0, 2048, ("gaussian", 0.0, 1.0))
        assert abs(p.integral() - 1.0) < 1e-9
        assert p.M == 2048 and p.mass_lost == 0.0

    def test_custom_constant_is_uniform(self):
        p = make_grid(-3.0, 5.0, 128, np.full(128, 7.0))
        np.testing.assert_allclose(p.values, 1.0 / 8.0, rtol=1e-14)

    def test_narrow_domain_rejected(self):
        tail = 2.0 * ndtr(-2.0)
        assert tail == pytest.approx(0.0455, abs=1e-4)
        with pytest.raises(ValueError, match="too narrow"):
            make_grid(-2.0, 2.0, 2048, ("gaussian", 0.0, 1.0))

    @pytest.mark.parametrize(
        "args",
        [(1.0, 1.0, 128), (0.0, 1.0, 63), (-10.0, 10.0, 128, np.ones(5)), (-10.0, 10.0, 128, np.zeros(128))],
    )
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            make_grid(*args)

    def test_values_are_read_only(self):
        p = make_grid(-10.0, 10.0, 128)
        with pytest.raises(ValueError):
            p.values[0] = 1.0


class TestDivergence:
    @pytest.mark.parametrize("kind", ["hellinger_sq", "kl", "l1"])
    def test_identity(self, kind):
        p = make_grid(-10.0, 10.0, 512, ("gaussian", 0.3, 1.2))
        assert divergence(p, p, kind) == 0.0

    def test_gaussian_hellinger_anchor(self):
        p = make_grid(-12.0, 13.0, 2048, ("gaussian", 0.0, 1.0))
        q = make_grid(-12.0, 13.0, 2048, ("gaussian", 1.0, 1.0))
        assert abs(divergence(p, q, "hellinger_sq") - HELLINGER_01) < 1e-6

    def test_gaussian_kl_anchor(self):
        p = make_grid(-12.0, 13.0, 2048, ("gaussian", 1.0, 1.0))
        q = make_grid(-12.0, 13.0, 2048, ("gaussian", 0.0, 1.0))
        assert abs(divergence(p, q, "kl") - 0.5) < 1e-6

    def test_gaussian_l1_anchor(self):
        p = make_grid(-12.0, 13.0, 2048, ("gaussian", 0.0, 1.0))
        q = make_grid(-12.0, 13.0, 2048, ("gaussian", 1.0, 1.0))
        exact = 2.0 * (2.0 * ndtr(0.5) - 1.0)
        # |p - q| has a kink at the midpoint, so the trapezoid rule is only O(dx^2) there
        assert abs(divergence(p, q, "l1") - exact) < p.dx**2 / 10

    def test_kl_with_unequal_variances(self):
        p = make_grid(-15.0, 15.0, 2048, ("gaussian", 0.5, 0.8))
        q = make_grid(-15.0, 15.0, 2048, ("gaussian", -0.2, 1.5))
        s1, s2, dm = 0.8, 1.5, 0.7
        exact = math.log(s2 / s1) + (s1**2 + dm**2) / (2 * s2**2) - 0.5
        assert abs(divergence(p, q, "kl") - exact) < 1e-6

    def test_grid_mismatch(self):
        p = make_grid(-10.0, 10.0, 256)
        q = make_grid(-10.0, 10.0, 257)
        with pytest.raises(GridMismatch):
            divergence(p, q)

    def test_kl_support(self):
        x = np.linspace(-1, 1, 64)
        p = make_grid(-1.0, 1.0, 64, np.ones(64))
        q = make_grid(-1.0, 1.0, 64, (x > 0).astype(float))
        with pytest.raises(SupportError):
            divergence(p, q, "kl")
        assert divergence(q, p, "kl") > 0

    def test_unknown_kind(self):
        p = make_grid(-10.0, 10.0, 128)
        with pytest.raises(ValueError, match="unknown divergence"):
            divergence(p, p, "tv")

    @given(
        st.lists(st.floats(0.0, 1.0), min_size=64, max_size=64),
        st.lists(st.floats(0.01, 1.0), min_size=64, max_size=64),
    )
    def test_property_ranges(self, a, b):
        a = np.asarray(a)
        if not a.sum() > 0:
            a[0] = 1.0
        p = make_grid(0.0, 1.0, 64, a)
        q = make_grid(0.0, 1.0, 64, np.asarray(b))
        assert 0.0 <= divergence(p, q, "hellinger_sq") <= 1.0 + 1e-12
        assert 0.0 <= divergence(p, q, "l1") <= 2.0 + 1e-12
        assert divergence(p, q, "kl") >= 0.0
        # Hellinger-L1 sandwich holds exactly for the discrete measures
        h2, l1 = divergence(p, q, "hellinger_sq"), divergence(p, q, "l1")
        assert h2 <= 0.5 * l1 + 1e-12
        assert l1 <= 2.0 * math.sqrt(2.0 * h2) + 1e-12


class TestPropagate:
    eta, beta = 0.05, 2.0

    def test_zero_drift_is_gaussian_convolution(self):
        p = make_grid(-12.0, 12.0, 2048, ("gaussian", 0.0, 1.0))
        out = propagate(p, _linear(0.0), self.eta, self.beta)
        exact = gaussian_pdf(p.x, 0.0, 1.0 + 2 * self.eta / self.beta)
        assert _l1_to(out, exact) < 1e-7

    @pytest.mark.parametrize("slope", [0.5, 2.0, -1.0])
    def test_affine_pushforward(self, slope):
        mu, sigma = 0.7, 0.9
        p = make_grid(-12.0, 12.0, 2048, ("gaussian", mu, sigma))
        out = propagate(p, _linear(slope), self.eta, self.beta)
        shrink = 1.0 - self.eta * slope
        var = shrink**2 * sigma**2 + 2 * self.eta / self.beta
        assert abs(out.mean() - shrink * mu) < 1e-6
        assert abs(out.var() - var) < 1e-6
        assert _l1_to(out, gaussian_pdf(p.x, shrink * mu, var)) < 1e-6

    @pytest.mark.parametrize("eta", [1e-8, 1e-12])
    def test_vanishing_step_is_identity(self, eta):
        p = make_grid(-12.0, 12.0, 2048, ("gaussian", 0.2, 1.0))
        out = propagate(p, DriftSpec.custom(np.sin), eta, self.beta)
        assert divergence(p, out, "l1") < 1e-6

    def test_mass_conserved_before_renormalization(self):
        p = make_grid(-12.0, 12.0, 2048, ("gaussian", 0.0, 1.0))
        step = Propagator(p, DriftSpec.custom(np.sin), self.eta, self.beta)
        out = step(p)
        raw_mass = float(p.weights @ (step.K @ p.probabilities()))
        assert abs(raw_mass - 1.0) < 1e-9
        assert out.mass_lost < 1e-9
        assert abs(out.integral() - 1.0) < 1e-12

    def test_mixture_averages_per_example_steps(self):
        problem = make_problem("double_well_1d", 4, 1, 0)
        p = make_grid(-8.0, 8.0, 256, ("gaussian", 0.0, 0.5))
        full = DriftSpec.full(problem, 0.1)
        mixed = propagate(p, full, self.eta, self.beta, "sgld_mixture")
        parts = [propagate(p, c, self.eta, self.beta).values for c in full.components()]
        np.testing.assert_allclose(mixed.values, np.mean(parts, axis=0), rtol=1e-12, atol=1e-15)

    def test_domain_too_small(self):
        p = make_grid(-7.0, 7.0, 256, ("gaussian", 0.0, 1.0))
        with pytest.raises(ValueError, match="widen the domain"):
            propagate(p, _linear(-40.0), 0.2, 0.1)

    def test_rejects_other_grid(self):
        p = make_grid(-10.0, 10.0, 128)
        q = make_grid(-10.0, 10.0, 129)
        with pytest.raises(ValueError, match="different grid"):
            Propagator(p, _linear(0.0), 0.1, 1.0)(q)

    @pytest.mark.parametrize("kw", [dict(eta=0.0), dict(beta=-1.0), dict(mode="splitting")])
    def test_invalid_arguments(self, kw):
        p = make_grid(-10.0, 10.0, 128)
        args = dict(eta=0.1, beta=1.0, mode="deterministic_map") | kw
        with pytest.raises(ValueError):
            Propagator(p, _linear(0.0), **args)

    def test_multi_dimensional_problem_rejected(self):
        with pytest.raises(ValueError, match="one-dimensional"):
            DriftSpec.full(make_problem("quadratic_regression", 5, 2, 0))

    def test_neighbor_delta_drift(self):
        from sgld_bounds.density_lab import lab_pair

        problem, pair = lab_pair(LabSetup())
        x = np.linspace(-3, 3, 50)
        gap = DriftSpec.neighbor_delta(pair)(x)
        assert np.max(np.abs(gap)) <= problem.L / problem.n + 1e-12

    @given(
        st.floats(0.01, 0.3),
        st.floats(0.3, 4.0),
        st.floats(-2.0, 2.0),
        st.floats(0.5, 1.5),
        st.floats(-1.5, 1.5),
    )
    def test_property_data_processing(self, eta, beta, shift, sigma, amp):
        p = make_grid(-12.0, 12.0, 256, ("gaussian", 0.0, 1.0))
        q = make_grid(-12.0, 12.0, 256, ("gaussian", shift, sigma))
        step = Propagator(p, DriftSpec.custom(lambda y: amp * np.tanh(y)), eta, beta)
        p1, q1 = step(p), step(q)
        for kind in ("hellinger_sq", "kl", "l1"):
            assert divergence(p1, q1, kind) <= divergence(p, q, kind) + 1e-12


class TestFokkerPlanck:
    def test_heat_equation_variance(self):
        beta, sigma = 2.0, 0.8
        p = make_grid(-12.0, 12.0, 1024, ("gaussian", 0.0, sigma))
        dt = fp_dt_limit(p.dx, beta)
        steps = 2000
        out = evolve_fokker_planck(p, np.zeros(p.M), beta, dt, steps)
        t = dt * steps
        growth = out.var() - p.var()
        assert growth == pytest.approx(2.0 * t / beta, rel=0.01)
        assert abs(out.mean()) < 1e-12

    def test_quadratic_gibbs_is_stationary(self):
        beta = 2.0
        x = np.linspace(-12.0, 12.0, 2048)
        F = 0.5 * 1.7 * (x - 0.4) ** 2
        gibbs = make_grid(-12.0, 12.0, 2048, np.exp(-beta * F))
        dt = fp_dt_limit(gibbs.dx, beta)
        out = evolve_fokker_planck(gibbs, 1.7 * (x - 0.4), beta, dt, 1000)
        assert divergence(out, gibbs, "l1") < 1e-4

    def test_drift_spec_accepted(self):
        p = make_grid(-12.0, 12.0, 512, ("gaussian", 0.0, 1.0))
        dt = fp_dt_limit(p.dx, 1.0)
        a = evolve_fokker_planck(p, _linear(1.0), 1.0, dt, 10)
        b = evolve_fokker_planck(p, p.x.copy(), 1.0, dt, 10)
        np.testing.assert_array_equal(a.values, b.values)
        assert a.log and "fokker_planck" in a.log[-1]

    def test_unstable_step_rejected(self):
        p = make_grid(-12.0, 12.0, 512, ("gaussian", 0.0, 1.0))
        limit = fp_dt_limit(p.dx, 2.0)
        assert limit == pytest.approx(0.4 * p.dx**2)
        with pytest.raises(ValueError, match="stability"):
            evolve_fokker_planck(p, np.zeros(p.M), 2.0, 1.01 * limit, 1)
        with pytest.raises(ValueError):
            evolve_fokker_planck(p, np.zeros(p.M), 2.0, 0.0, 1)

    def test_stays_normalized(self):
        p = make_grid(-12.0, 12.0, 512, ("gaussian", 1.0, 1.0))
        dt = fp_dt_limit(p.dx, 1.0)
        out = evolve_fokker_planck(p, np.sin(p.x), 1.0, dt, 300)
        assert abs(out.integral() - 1.0) < 1e-12
        assert np.all(out.values >= 0)


def _quadratic_run_eta(beta=2.0):
    L = make_problem("quadratic_regression", 10, 1, 0).L
    return 0.9 * math.log(2.0) / (beta * L * L)


class TestLabChecks:
    @pytest.mark.parametrize("kind", ["double_well_1d", "quadratic_regression"])
    @pytest.mark.parametrize("check", [c for c in CHECKS if c not in ("nonexpansive", "ratio_8lemma")])
    def test_passes_on_both_problems(self, kind, check):
        eta = _quadratic_run_eta() if (kind, check) == ("quadratic_regression", "hellinger_run_improved") else 0.05
        report = lab_verify(check, LabSetup(kind=kind, eta=eta))
        assert report.passed, report.summary_dict()
        assert report.measured.shape == report.cap.shape

    def test_nonexpansive(self):
        report = lab_verify("nonexpansive", LabSetup(M=512, trials=20))
        assert report.passed
        assert report.measured.size == 20
        assert all(v <= 1e-6 for v in report.summary["increase_by_divergence"].values())

    def test_ratio_functional(self):
        report = lab_verify("ratio_8lemma", LabSetup(beta=1.0, sigma0=0.5, L_drift=1.0))
        assert report.passed
        # the constant-drift case has a closed form exp(6 (L t)^2 / s^2)
        assert report.measured[-1] == pytest.approx(report.summary["closed_form_final"], rel=1e-3)

    def test_succinct_step_example(self):
        report = lab_verify("hellinger_step_succinct", LabSetup(eta=0.05, beta=2.0))
        L = make_problem("double_well_1d", 10, 1, 0).L
        np.testing.assert_allclose(report.cap, 2.0 * L * L * 0.05 / 8.0)
        assert report.measured.size == 50
        assert np.all(report.measured <= report.cap + 1e-4)

    def test_l1_example(self):
        report = lab_verify("l1_steps", LabSetup(n=10, steps=5))
        assert report.cap[-1] == pytest.approx(1.0)
        assert report.measured[-1] <= 1.0 + 1e-4

    def test_run_improved_reports_both_margins(self):
        report = lab_verify("hellinger_run_improved", LabSetup())
        s = report.summary
        assert s["final_pass"] and s["final_sqrt_dh"] <= s["final_cap"] + 1e-3
        assert s["margin_loose_constant"] >= s["margin_tight_constant"]
        assert "gradient-gap" in s["note"]

    def test_run_improved_step_assumption(self):
        with pytest.raises(ValueError, match="ln 2"):
            lab_verify("hellinger_run_improved", LabSetup(kind="quadratic_regression", eta=0.05))

    @pytest.mark.parametrize("factor", [0.0, 0.5, 2.0])
    def test_kl_onestep_each_case(self, factor):
        beta, sigma0 = 2.0, 0.5
        lam = factor / (beta * sigma0**2)
        report = lab_verify("kl_onestep", LabSetup(beta=beta, sigma0=sigma0, lam=lam))
        assert report.passed
        assert report.summary["regime"] == (1 if factor == 0 else 2 if factor <= 1 else 3)

    def test_kl_onestep_step_assumption(self):
        with pytest.raises(ValueError, match="eta \\* lambda < 0.5"):
            lab_verify("kl_onestep", LabSetup(eta=0.1, lam=5.0))

    def test_continuous_drift_gap(self):
        report = lab_verify("continuous_dH", LabSetup())
        assert report.summary["drift_gap_max"] <= report.summary["drift_gap_cap"] + 1e-12

    def test_identical_pair_is_zero(self):
        p = make_grid(-10.0, 10.0, 512, ("gaussian", 0.0, 1.0))
        step = Propagator(p, DriftSpec.custom(np.sin), 0.1, 1.0)
        for kind in ("hellinger_sq", "kl", "l1"):
            assert divergence(step(p), step(p), kind) == 0.0

    def test_unknown_check(self):
        with pytest.raises(ValueError, match="unknown check"):
            lab_verify("wasserstein")

    def test_setup_validation(self):
        with pytest.raises(ValueError):
            LabSetup(i_star=10, n=10)
        with pytest.raises(ValueError):
            LabSetup(M=32)

    def test_failure_is_reported(self):
        report = lab_verify("l1_steps", LabSetup(steps=3, slack=0.0))
        report.cap[:] = 0.0
        assert not report.passed
        assert report.worst_margin() < 0


class TestRefinement:
    def test_gaussian_anchor_converges(self):
        vals = []
        for M in (1025, 2049):
            p = make_grid(-12.0, 13.0, M, ("gaussian", 0.0, 1.0))
            q = make_grid(-12.0, 13.0, M, ("gaussian", 1.0, 1.0))
            vals.append(divergence(p, q, "hellinger_sq"))
        assert abs(vals[0] - vals[1]) < 10 * 1e-6

    @pytest.mark.parametrize("check", ["hellinger_step_succinct", "l1_steps"])
    def test_lab_measurements_converge(self, check):
        coarse = lab_verify(check, LabSetup(M=1025, steps=10))
        fine = lab_verify(check, LabSetup(M=2049, steps=10))
        assert np.max(np.abs(coarse.measured - fine.measured)) < 10 * 1e-4


class TestFormats:
    def test_report_csv(self, tmp_path):
        report = lab_verify("l1_steps", LabSetup(steps=4))
        path = tmp_path / "lab.csv"
        report.to_csv(path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["step", "measured", "cap", "slack", "pass"]
        assert [int(r[0]) for r in rows[1:]] == [1, 2, 3, 4]
        np.testing.assert_array_equal([float(r[1]) for r in rows[1:]], report.measured)
        assert {r[4] for r in rows[1:]} == {"true"}

    def test_report_json(self):
        report = lab_verify("l1_steps", LabSetup(steps=4))
        doc = json.loads(report.to_json())
        assert doc["check"] == "l1_steps" and doc["passed"] is True
        assert doc["steps"] == 4 and doc["slack"] == 1e-4
        assert doc["setup"]["n"] == 10

    def test_density_csv(self, tmp_path):
        p = make_grid(-10.0, 10.0, 128, ("gaussian", 0.0, 1.0))
        path = tmp_path / "p.csv"
        p.to_csv(path)
        data = np.genfromtxt(path, delimiter=",", names=True)
        assert data.dtype.names == ("x", "px")
        np.testing.assert_array_equal(data["x"], p.x)
        np.testing.assert_array_equal(data["px"], p.values)
