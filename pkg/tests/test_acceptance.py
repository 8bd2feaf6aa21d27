"""Acceptance criteria, one test per criterion.

Each criterion is a function returning ``(passed, detail)``; the wall-clock
budget of the criterion is part of ``passed``.  Under pytest every verdict is
printed as a single ``criterion N: PASS|FAIL ...`` line and repeated in the
terminal summary.  Running this file directly prints the same lines.
"""
import math
import time

import mpmath
import numpy as np
import pytest

from sgld_bounds.certificates import (
    PacBayesConfig,
    all_certificates,
    case3_envelope,
    decay_table,
    ideal_bounds,
    k0,
    lambda_case,
    prior_sequence,
    stability_certificate,
)
from sgld_bounds.density_lab import LabSetup, divergence, lab_verify, make_grid
from sgld_bounds.experiments import FenceConfig, data_averaged_gap, fence_demo
from sgld_bounds.langevin import SgldConfig, ou_exact_step, sgld_step, transform_step
from sgld_bounds.problems import make_problem
from sgld_bounds.schedule import StepSchedule

SEED = 20240601


def _timed(budget, fn):
    start = time.perf_counter()
    ok, detail = fn()
    elapsed = time.perf_counter() - start
    within = elapsed < budget
    return ok and within, f"{detail}; {elapsed:.2f}s of {budget:g}s" + ("" if within else " (over budget)")


# ---------------------------------------------------------------------------
# 1


def criterion_1():
    """Matched-noise OU step equals the regularized SGLD step.

    The error is measured relative to the size of the summands of the SGLD
    update, |w| + eta |g + lam w| + sqrt(2 eta / beta) |xi|, because the
    output itself can cancel to near zero.
    """
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(20):
        eta = 10 ** rng.uniform(-4, 0)
        lam = rng.uniform(1e-6, 0.5) / eta
        beta = 10 ** rng.uniform(-1, 2)
        w, g, xi = rng.normal(size=(3, 10_000))
        t = transform_step(eta, lam, beta)
        ou = ou_exact_step(w, t.tau, t.beta_prime, lam, g, xi)
        sg = sgld_step(w, eta, beta, g + lam * w, xi)
        scale = np.abs(w) + eta * np.abs(g + lam * w) + math.sqrt(2 * eta / beta) * np.abs(xi)
        worst = max(worst, float(np.max(np.abs(ou - sg) / scale)))
    return worst < 1e-12, f"max relative error {worst:.2e} (< 1e-12)"


# ---------------------------------------------------------------------------
# 2


def criterion_2():
    p0 = make_grid(-12.0, 13.0, 2048, ("gaussian", 0.0, 1.0))
    p1 = make_grid(-12.0, 13.0, 2048, ("gaussian", 1.0, 1.0))
    h = divergence(p0, p1, "hellinger_sq")
    kl = divergence(p1, p0, "kl")
    eh, ek = abs(h - (1 - math.exp(-1 / 8))), abs(kl - 0.5)
    return eh <= 1e-6 and ek <= 1e-6, f"hellinger error {eh:.1e}, kl error {ek:.1e} (<= 1e-6)"


# ---------------------------------------------------------------------------
# 3-9: grid checks


def _lab(check, setup, cap_label):
    report = lab_verify(check, setup)
    return report.passed, f"{report.measured.size} steps, worst margin {report.worst_margin():.3g} against {cap_label}"


def criterion_3():
    report = lab_verify("nonexpansive", LabSetup(trials=50))
    inc = report.summary["increase_by_divergence"]
    detail = ", ".join(f"{k} {v:.1e}" for k, v in sorted(inc.items()))
    return report.passed and report.slack == 1e-6, f"50 pairs, largest increases: {detail} (<= 1e-6)"


def criterion_4():
    return _lab("hellinger_step_succinct", LabSetup(beta=2.0, eta=0.05, steps=50, slack=1e-4), "beta L^2 eta / 8 + 1e-4")


def criterion_5():
    setup = LabSetup(n=10, steps=50)
    L = make_problem(setup.kind, setup.n, 1, setup.seed).L
    assert setup.eta <= math.log(2) / (setup.beta * L * L)
    report = lab_verify("hellinger_run_improved", setup)
    s = report.summary
    return s["final_pass"], (
        f"final sqrt(D_H) {s['final_sqrt_dh']:.4g} vs cap {s['final_cap']:.4g} + 1e-3; "
        f"per-step margin {s['margin_loose_constant']:.3g} (loose), {s['margin_tight_constant']:.3g} (tight)"
    )


def criterion_6():
    return _lab("l1_steps", LabSetup(n=10, steps=20, slack=1e-4), "2k/n + 1e-4")


def criterion_7():
    beta, sigma0 = 2.0, 0.5
    parts, ok = [], True
    for lam in (0.0, 1 / (2 * beta * sigma0**2), 2 / (beta * sigma0**2)):
        report = lab_verify("kl_onestep", LabSetup(beta=beta, sigma0=sigma0, lam=lam, steps=30, slack=1e-3))
        ok &= report.passed
        parts.append(f"lambda={lam:g} margin {report.worst_margin():.3g}")
    return ok, "; ".join(parts)


def criterion_8():
    report = lab_verify("ratio_8lemma", LabSetup(beta=1.0, sigma0=0.5, L_drift=1.0, slack=0.1))
    return report.passed, f"max functional {float(report.measured.max()):.4g} up to t = {report.summary['t_max']:.4g} (<= 8.1)"


def criterion_9():
    cont = lab_verify("continuous_dH", LabSetup())
    gibbs = lab_verify("gibbs_stationary", LabSetup(kind="quadratic_regression", steps=1000, slack=1e-4))
    gap_ok = cont.summary["drift_gap_max"] <= cont.summary["drift_gap_cap"] + 1e-12
    return cont.passed and gap_ok and gibbs.passed, (
        f"dD_H/dt margin {cont.worst_margin():.3g}; Gibbs L1 drift {float(gibbs.measured.max()):.2e} "
        f"over {gibbs.summary['total_steps']} steps (< 1e-4)"
    )


# ---------------------------------------------------------------------------
# 10


def criterion_10():
    mpmath.mp.dps = 50
    eta, N, n, beta = mpmath.mpf("0.01"), 100, 100, mpmath.mpf(2)
    total = mpmath.fsum([eta] * N)
    oracle_improved = mpmath.sqrt(beta) / n * mpmath.sqrt(total)
    oracle_succinct = mpmath.sqrt(beta * total / (8 * n))
    oracle_ideal = mpmath.sqrt(beta * 1) / (mpmath.sqrt(2) * n)
    # values pinned from the oracle above
    assert abs(oracle_improved - mpmath.mpf("0.014142135623730950488")) < mpmath.mpf("1e-20")
    assert abs(oracle_succinct - mpmath.mpf("0.05")) < mpmath.mpf("1e-40")
    assert abs(oracle_ideal - mpmath.mpf("0.01")) < mpmath.mpf("1e-40")

    sched = StepSchedule.constant(0.01, N)
    improved = stability_certificate(1.0, 1.0, 2.0, sched, n, N, "sgld_improved")
    succinct = stability_certificate(1.0, 1.0, 2.0, sched, n, N, "sgld_succinct").bound
    ideal = ideal_bounds(1.0, 1.0, 1.0, 2.0, n)["stability"]
    errs = (abs(improved.bound - 0.0141421), abs(succinct - 0.05), abs(ideal - 0.01))
    ok = errs[0] <= 1e-6 and errs[1] <= 1e-9 and errs[2] <= 1e-12 and k0(sched, 2.0, 1.0) == 0
    ok &= abs(improved.bound - float(oracle_improved)) <= 1e-15
    return ok, f"sgld_improved {improved.bound:.10g}, sgld_succinct {succinct:.12g}, ideal {ideal:.15g}, k0=0"


# ---------------------------------------------------------------------------
# 11


def _random_config(rng, case):
    beta = 10 ** rng.uniform(-1, 1)
    sigma0 = 10 ** rng.uniform(-1, 0.5)
    unit = 1.0 / (beta * sigma0**2)
    lam = {1: 0.0, 2: rng.uniform(0.01, 1.0) * unit, 3: rng.uniform(1.001, 20.0) * unit}[case]
    N = int(rng.integers(1, 301))
    eta_cap = 0.5 / lam if lam > 0 else 1.0
    c = rng.uniform(0.01, 0.99) * min(eta_cap, 1.0)
    if rng.random() < 0.5:
        sched = StepSchedule.constant(c, N)
    else:
        sched = StepSchedule.polynomial(c, rng.uniform(0, 1), N)
    return SgldConfig(beta, lam, sigma0, sched)


def criterion_11():
    rng = np.random.default_rng(SEED)
    failures = {"case2_sigma": 0, "case3_envelope": 0, "R_monotone": 0, "R_NN": 0}
    worst_case2 = 0.0
    for case in (1, 2, 3):
        for _ in range(100):
            config = _random_config(rng, case)
            assert lambda_case(config.lam, config.beta, config.sigma0) == case
            R = decay_table(config)
            if np.any(np.diff(R) > 1e-12 * max(1.0, float(R.max()))):
                failures["R_monotone"] += 1
            if case in (1, 2) and R[-1] != 0.0:
                failures["R_NN"] += 1
            sigma_sq = prior_sequence(config).sigma_sq
            if case == 2:
                cap = 1.0 / (config.lam * config.beta)
                excess = float(np.max(sigma_sq / cap)) - 1.0
                worst_case2 = max(worst_case2, excess)
                if excess > 1e-12:
                    failures["case2_sigma"] += 1
            if case == 3 and np.any(sigma_sq > case3_envelope(config) * (1 + 1e-12)):
                failures["case3_envelope"] += 1
    ok = not any(failures.values())
    detail = ", ".join(f"{k} violated in {v}" for k, v in failures.items())
    return ok, f"{detail} (of 100 configs per case); worst case-2 relative excess {worst_case2:.3g}"


# ---------------------------------------------------------------------------
# 12

END_TO_END = {
    "quadratic_regression": (2, SgldConfig(5.0, 1.0, 0.5, StepSchedule.constant(0.003, 500), seed=1)),
    "double_well_1d": (1, SgldConfig(2.0, 0.1, 1.0, StepSchedule.constant(0.05, 500), seed=1)),
}


def criterion_12():
    parts, ok = [], True
    for kind, (d, config) in END_TO_END.items():
        est = data_averaged_gap(kind, 200, d, config, 200, range(10), test_size=10_000)
        problem = make_problem(kind, 200, d, 0)
        certs = all_certificates(est.grad_sq, config, 200, problem.L, problem.C, PacBayesConfig())
        low = est.mean_gap - 2 * est.std_error
        imp, pb = certs["sgld_improved"].bound, certs["pac_bayes"].bound
        ok &= low <= imp and low <= pb
        parts.append(f"{kind}: gap-2SE {low:.3g} vs improved {imp:.3g}, pac_bayes {pb:.3g}")
    return ok, "; ".join(parts)


# ---------------------------------------------------------------------------
# 13


def criterion_13():
    r = fence_demo(FenceConfig(replicas=500))
    sym = abs(r.sgld_right_frequency - 0.5) <= 3 * r.sgld_frequency_se
    det = r.gd_right_frequency in (0.0, 1.0)
    ratio = r.gd_probe / r.sgld_probe if r.sgld_probe > 0 else math.inf
    return sym and det and ratio >= 5, (
        f"SGLD right frequency {r.sgld_right_frequency:.3f} +- {3 * r.sgld_frequency_se:.3f}, "
        f"GD {r.gd_right_frequency:g}, probe ratio GD/SGLD {ratio:.1f} (>= 5)"
    )


CRITERIA = {
    1: (criterion_1, 1),
    2: (criterion_2, 1),
    3: (criterion_3, 30),
    4: (criterion_4, 120),
    5: (criterion_5, 600),
    6: (criterion_6, 240),
    7: (criterion_7, 600),
    8: (criterion_8, 120),
    9: (criterion_9, 300),
    10: (criterion_10, 1),
    11: (criterion_11, 5),
    12: (criterion_12, 600),
    13: (criterion_13, 120),
}


def verdict(number):
    fn, budget = CRITERIA[number]
    ok, detail = _timed(budget, fn)
    return ok, f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, acceptance_line):
    ok, line = verdict(number)
    acceptance_line(line)
    assert ok, line


if __name__ == "__main__":
    for number in sorted(CRITERIA):
        print(verdict(number)[1], flush=True)
