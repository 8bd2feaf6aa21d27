"""Grid verifications of the divergence inequalities behind the certificates.

Each check builds the relevant pair of densities on a grid, evolves them
exactly (one SGLD step is a quadrature integral) or with the explicit
Fokker-Planck solver, and compares a measured divergence quantity with its
theoretical cap at every step.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..certificates import prior_sequence
from ..langevin import SgldConfig, transform_step
from ..problems import DataPoint, draw_points, make_problem, neighbor_of
from ..schedule import StepSchedule
from .grid import DIVERGENCES, DensityGrid, divergence, gaussian_pdf, make_grid
from .propagate import (
    DriftSpec,
    Propagator,
    evolve_fokker_planck,
    example_kernel,
    fp_dt_limit,
)

CHECKS = (
    "nonexpansive",
    "hellinger_step_succinct",
    "hellinger_run_improved",
    "l1_steps",
    "kl_onestep",
    "ratio_8lemma",
    "continuous_dH",
    "gibbs_stationary",
)

DEFAULT_STEPS = {
    "nonexpansive": 50,
    "hellinger_step_succinct": 50,
    "hellinger_run_improved": 50,
    "l1_steps": 20,
    "kl_onestep": 30,
    "ratio_8lemma": 20,
    "continuous_dH": 20,
    "gibbs_stationary": 1000,
}

DEFAULT_SLACK = {
    "nonexpansive": 1e-6,
    "hellinger_step_succinct": 1e-4,
    "hellinger_run_improved": 1e-4,
    "l1_steps": 1e-4,
    "kl_onestep": 1e-3,
    "ratio_8lemma": 0.1,
    "continuous_dH": 1e-5,
    "gibbs_stationary": 1e-4,
}


@dataclass
class LabSetup:
    """Inputs shared by the grid checks.

    ``steps`` and ``slack`` default per check.  ``horizon`` is the
    continuous time covered by the Fokker-Planck checks.
    """

    kind: str = "double_well_1d"
    n: int = 10
    seed: int = 0
    eta: float = 0.05
    beta: float = 2.0
    sigma0: float = 0.5
    lam: float = 0.0
    M: int = 2048
    steps: int | None = None
    slack: float | None = None
    i_star: int = 0
    L_drift: float = 1.0
    horizon: float = 1.0
    trials: int = 50
    family: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need n >= 2")
        if not (self.eta > 0 and self.beta > 0 and self.sigma0 > 0 and self.lam >= 0):
            raise ValueError("eta, beta, sigma0 must be positive and lam non-negative")
        if self.M < 64:
            raise ValueError("need M >= 64")
        if not 0 <= self.i_star < self.n:
            raise ValueError("i_star out of range")

    def resolved(self, check: str) -> tuple[int, float]:
        steps = DEFAULT_STEPS[check] if self.steps is None else self.steps
        slack = DEFAULT_SLACK[check] if self.slack is None else self.slack
        return steps, slack


@dataclass
class LabReport:
    check: str
    measured: np.ndarray
    cap: np.ndarray
    slack: float
    summary: dict = field(default_factory=dict)
    extra_pass: bool = True

    @property
    def passed_steps(self) -> np.ndarray:
        return self.measured <= self.cap + self.slack

    @property
    def passed(self) -> bool:
        return bool(np.all(self.passed_steps)) and self.extra_pass

    def worst_margin(self) -> float:
        """Smallest cap + slack - measured over the steps (negative on failure)."""
        return float(np.min(self.cap + self.slack - self.measured)) if self.measured.size else math.inf

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "measured", "cap", "slack", "pass"])
            for k, (m, c, ok) in enumerate(zip(self.measured, self.cap, self.passed_steps), start=1):
                writer.writerow([k, repr(float(m)), repr(float(c)), repr(float(self.slack)), str(bool(ok)).lower()])

    def summary_dict(self) -> dict:
        return {
            "check": self.check,
            "passed": self.passed,
            "steps": int(self.measured.size),
            "slack": self.slack,
            "worst_margin": self.worst_margin(),
            "max_measured": float(np.max(self.measured)) if self.measured.size else None,
            **self.summary,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary_dict(), indent=2, sort_keys=True, default=_plain) + "\n"


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(type(obj).__name__)


# ---------------------------------------------------------------------------
# shared scaffolding


def lab_pair(setup: LabSetup):
    """Problem and neighbor pair used by the checks.

    For ``double_well_1d`` the replacement point sits at the opposite end of
    the data range from ``z_{i*}``, so the per-example gradient gap is close
    to ``L``.
    """
    problem = make_problem(setup.kind, setup.n, 1, setup.seed, **setup.family)
    i = setup.i_star
    if setup.kind == "double_well_1d":
        z = problem.dataset.X[i, 0]
        replacement = DataPoint([-math.copysign(problem.family.delta, z)], 0.0)
    else:
        replacement = draw_points(problem, 1, setup.seed + 7919)[0]
    return problem, neighbor_of(problem, i, replacement)


def _outward_push(drifts, radius: float) -> float:
    x = np.linspace(-radius, radius, 4001)
    push = 0.0
    for d in drifts:
        g = d(x)
        push = max(push, float(np.max(np.maximum(0.0, -np.sign(x) * g))))
    return push


def lab_domain(setup: LabSetup, T: float, drifts=()) -> tuple[float, float]:
    """Symmetric domain of half-width 12 sigma_eff.

    sigma_eff = sigma0 + sqrt(2 T / beta) + T * (largest outward drift).
    """
    base = setup.sigma0 + math.sqrt(2.0 * T / setup.beta)
    push = _outward_push(drifts, 12.0 * base) if drifts else 0.0
    half = 12.0 * (base + T * push)
    return -half, half


def _initial(setup: LabSetup, lo: float, hi: float) -> DensityGrid:
    return make_grid(lo, hi, setup.M, ("gaussian", 0.0, setup.sigma0))


def _pair_propagators(grid, problem, pair, eta, beta, lam):
    """Mixture operators of both datasets plus the two differing-example operators."""
    base, variant = pair.problems
    i = pair.differing_index
    kernels = [example_kernel(grid, DriftSpec.per_example(base, j, lam), eta, beta) for j in range(base.n)]
    K_sum = sum(K for K, _ in kernels)
    loss_sum = sum(loss for _, loss in kernels)
    Kv, lv = example_kernel(grid, DriftSpec.per_example(variant, i, lam), eta, beta)
    Ki, li = kernels[i]
    n = base.n
    mix = Propagator.from_kernel(grid, K_sum / n, loss_sum / n, eta, beta)
    mix_v = Propagator.from_kernel(grid, (K_sum - Ki + Kv) / n, (loss_sum - li + lv) / n, eta, beta)
    single = Propagator.from_kernel(grid, Ki, li, eta, beta)
    single_v = Propagator.from_kernel(grid, Kv, lv, eta, beta)
    return mix, mix_v, single, single_v


# ---------------------------------------------------------------------------
# individual checks


def check_nonexpansive(setup: LabSetup) -> LabReport:
    """Random density pairs through a random bounded map and a Gaussian convolution.

    Measured: the largest increase among the three divergences.  Cap: 0.
    """
    trials, slack = setup.resolved("nonexpansive")
    trials = setup.trials if setup.steps is None else trials
    rng = np.random.default_rng([setup.seed, 0xD1])
    lo, hi = -10.0, 10.0
    x = np.linspace(lo, hi, setup.M)
    measured = np.zeros(trials)
    rows = []

    def random_density():
        k = rng.integers(1, 4)
        vals = np.zeros_like(x)
        for _ in range(k):
            vals += rng.uniform(0.2, 1.0) * gaussian_pdf(x, rng.uniform(-2, 2), rng.uniform(0.5, 1.5) ** 2)
        return make_grid(lo, hi, setup.M, vals)

    for t in range(trials):
        p, q = random_density(), random_density()
        amp, freq, phase = rng.uniform(0, 1, 3), rng.uniform(0.2, 3, 3), rng.uniform(0, 2 * np.pi, 3)

        def g(y, amp=amp, freq=freq, phase=phase):
            return np.sum(amp[:, None] * np.sin(freq[:, None] * y[None, :] + phase[:, None]), axis=0)

        eta = rng.uniform(0.01, 0.2)
        beta = rng.uniform(0.5, 4.0)
        step = Propagator(p, DriftSpec.custom(g), eta, beta)
        p1, q1 = step(p), step(q)
        inc = {k: divergence(p1, q1, k) - divergence(p, q, k) for k in DIVERGENCES}
        measured[t] = max(inc.values())
        rows.append(inc)
    summary = {
        "increase_by_divergence": {k: float(max(r[k] for r in rows)) for k in DIVERGENCES},
        "note": "cap is zero: the same Markov kernel applied to both densities",
    }
    return LabReport("nonexpansive", measured, np.zeros(trials), slack, summary)


def _mixture_run(setup: LabSetup, check: str):
    steps, slack = setup.resolved(check)
    problem, pair = lab_pair(setup)
    base, variant = pair.problems
    T = steps * setup.eta
    lo, hi = lab_domain(setup, T, [DriftSpec.full(base, setup.lam), DriftSpec.full(variant, setup.lam)])
    grid = _initial(setup, lo, hi)
    ops = _pair_propagators(grid, problem, pair, setup.eta, setup.beta, setup.lam)
    return steps, slack, problem, pair, grid, ops


def check_hellinger_step_succinct(setup: LabSetup) -> LabReport:
    """One propagation through the differing example raises D_H by at most beta L^2 eta / 8."""
    steps, slack, problem, pair, p, (mix, mix_v, single, single_v) = _mixture_run(setup, "hellinger_step_succinct")
    q = p
    L = problem.L
    cap = setup.beta * L * L * setup.eta / 8.0
    measured = np.zeros(steps)
    for k in range(steps):
        before = divergence(p, q, "hellinger_sq")
        measured[k] = divergence(single(p), single_v(q), "hellinger_sq") - before
        p, q = mix(p), mix_v(q)
    summary = {"L": L, "eta": setup.eta, "beta": setup.beta, "mass_lost": max(p.mass_lost, q.mass_lost)}
    return LabReport("hellinger_step_succinct", measured, np.full(steps, cap), slack, summary)


def check_hellinger_run_improved(setup: LabSetup) -> LabReport:
    """Per-step D_H increments of the full mixture run and the final sqrt(D_H) cap.

    The per-step cap is beta L^2 eta / n^2.  The final cap is
    (sqrt(beta) L / 2n) sqrt(sum eta) + 1e-3, which corresponds to the
    tighter per-step constant beta L^2 eta / (4 n^2); the margin against that
    constant is reported too.  The weighted gradient-gap average bound used
    in the derivation is not checked directly; its consequence is.
    """
    steps, slack, problem, pair, p, (mix, mix_v, _, _) = _mixture_run(setup, "hellinger_run_improved")
    L, n, beta, eta = problem.L, problem.n, setup.beta, setup.eta
    if eta * beta * L * L > math.log(2.0):
        raise ValueError("hellinger_run_improved needs eta <= ln 2 / (beta L^2)")
    q = p
    measured = np.zeros(steps)
    dh = 0.0
    for k in range(steps):
        p, q = mix(p), mix_v(q)
        new = divergence(p, q, "hellinger_sq")
        measured[k] = new - dh
        dh = new
    cap = beta * L * L * eta / n**2
    final_cap = math.sqrt(beta) * L / (2 * n) * math.sqrt(steps * eta)
    final_ok = math.sqrt(dh) <= final_cap + 1e-3
    summary = {
        "final_sqrt_dh": math.sqrt(dh),
        "final_cap": final_cap,
        "final_tolerance": 1e-3,
        "final_pass": final_ok,
        "margin_loose_constant": float(np.min(cap - measured)),
        "margin_tight_constant": float(np.min(cap / 4.0 - measured)),
        "note": "per-step consequence checked in place of the weighted gradient-gap lemma",
        "mass_lost": max(p.mass_lost, q.mass_lost),
    }
    return LabReport("hellinger_run_improved", measured, np.full(steps, cap), slack, summary, extra_pass=final_ok)


def check_l1_steps(setup: LabSetup) -> LabReport:
    """L1 distance after k mixture steps is at most 2k/n."""
    steps, slack, problem, pair, p, (mix, mix_v, _, _) = _mixture_run(setup, "l1_steps")
    q = p
    measured = np.zeros(steps)
    for k in range(steps):
        p, q = mix(p), mix_v(q)
        measured[k] = divergence(p, q, "l1")
    cap = 2.0 * np.arange(1, steps + 1) / problem.n
    return LabReport("l1_steps", measured, cap, slack, {"n": problem.n})


def check_kl_onestep(setup: LabSetup) -> LabReport:
    """KL to the evolving prior obeys the one-step contraction recursion.

    At each step the cap is exp(-tau/(2b)) KL(p_k || gamma_k) + (beta' tau / 2) E||g||^2
    where the expectation is the grid average of the mixture's squared
    per-example gradient norm under p_k.
    """
    steps, slack = setup.resolved("kl_onestep")
    if setup.eta * setup.lam >= 0.5:
        raise ValueError("kl_onestep needs eta * lambda < 0.5")
    problem = make_problem(setup.kind, setup.n, 1, setup.seed, **setup.family)
    drift = DriftSpec.full(problem, setup.lam)
    T = steps * setup.eta
    lo, hi = lab_domain(setup, T, [drift])
    p = _initial(setup, lo, hi)
    step = Propagator(p, drift, setup.eta, setup.beta, "sgld_mixture")
    config = SgldConfig(setup.beta, setup.lam, setup.sigma0, StepSchedule.constant(setup.eta, steps))
    prior = prior_sequence(config)
    ts = transform_step(setup.eta, setup.lam, setup.beta)
    gsq = drift.unregularized_sq(p.x)

    def gamma(k):
        return make_grid(lo, hi, setup.M, gaussian_pdf(p.x, 0.0, prior.sigma_sq[k]))

    measured = np.zeros(steps)
    cap = np.zeros(steps)
    kl = divergence(p, gamma(0), "kl")
    for k in range(steps):
        egsq = p.expect(gsq)
        p = step(p)
        new = divergence(p, gamma(k + 1), "kl")
        cap[k] = math.exp(-ts.tau / (2.0 * prior.b[k])) * kl + 0.5 * ts.beta_prime * ts.tau * egsq
        measured[k] = new
        kl = new
    summary = {
        "lambda": setup.lam,
        "regime": 1 if setup.lam == 0 else (2 if setup.lam * setup.beta * setup.sigma0**2 <= 1 else 3),
        "sigma_sq_final": float(prior.sigma_sq[-1]),
        "mass_lost": p.mass_lost,
    }
    return LabReport("kl_onestep", measured, cap, slack, summary)


def _ratio_functional(u: DensityGrid, v: DensityGrid) -> float:
    """Trapezoid value of int u^4 / v^3, evaluated in log space.

    Nodes where v underflows to zero are skipped as long as u carries less
    than 1e-12 of its mass there; otherwise the functional is infinite.
    """
    orphan = (u.values > 0) & (v.values <= 0)
    if float(u.weights[orphan] @ u.values[orphan]) > 1e-12:
        return math.inf
    mask = (u.values > 0) & (v.values > 0)
    log_ratio = 4.0 * np.log(u.values[mask]) - 3.0 * np.log(v.values[mask])
    return float(u.weights[mask] @ np.exp(log_ratio))


def check_ratio_8lemma(setup: LabSetup) -> LabReport:
    """int u^4 / v^3 stays below 8 up to t = ln 2 / (beta L^2).

    ``u`` evolves with a constant drift of magnitude ``L_drift`` and ``v``
    without drift, both from N(0, sigma0^2).
    """
    checkpoints, slack = setup.resolved("ratio_8lemma")
    L, beta = setup.L_drift, setup.beta
    t_max = math.log(2.0) / (beta * L * L)
    lo, hi = lab_domain(setup, t_max, [DriftSpec.custom(lambda x: np.full_like(x, L))])
    u = _initial(setup, lo, hi)
    v = u
    dt_lim = fp_dt_limit(u.dx, beta)
    per = max(1, math.ceil(t_max / checkpoints / dt_lim))
    dt = t_max / (checkpoints * per)
    g = np.full(setup.M, L)
    measured = np.zeros(checkpoints)
    for k in range(checkpoints):
        u = evolve_fokker_planck(u, g, beta, dt, per)
        v = evolve_fokker_planck(v, np.zeros(setup.M), beta, dt, per)
        measured[k] = _ratio_functional(u, v)
    t = dt * per * np.arange(1, checkpoints + 1)
    s2 = setup.sigma0**2 + 2.0 * t / beta
    summary = {
        "t_max": t_max,
        "closed_form_final": float(np.exp(6.0 * (L * t[-1]) ** 2 / s2[-1])),
        "dt": dt,
        "mass_lost": max(u.mass_lost, v.mass_lost),
    }
    return LabReport("ratio_8lemma", measured, np.full(checkpoints, 8.0), slack, summary)


def check_continuous_dH(setup: LabSetup) -> LabReport:
    """Co-evolve the Fokker-Planck equations of neighboring datasets.

    Measured per chunk: the finite-difference rate dD_H/dt.  Cap: beta L^2 / (8 n^2).
    The slack is stated in the same rate units.
    """
    chunks, slack = setup.resolved("continuous_dH")
    problem, pair = lab_pair(setup)
    base, variant = pair.problems
    da, db = DriftSpec.full(base, setup.lam), DriftSpec.full(variant, setup.lam)
    T = setup.horizon
    lo, hi = lab_domain(setup, T, [da, db])
    p = _initial(setup, lo, hi)
    q = p
    per = max(1, math.ceil(T / chunks / fp_dt_limit(p.dx, setup.beta)))
    dt = T / (chunks * per)
    ga, gb = da(p.x), db(p.x)
    gap = float(np.max(np.abs(ga - gb)))
    measured = np.zeros(chunks)
    prev = 0.0
    for k in range(chunks):
        p = evolve_fokker_planck(p, ga, setup.beta, dt, per)
        q = evolve_fokker_planck(q, gb, setup.beta, dt, per)
        dh = divergence(p, q, "hellinger_sq")
        measured[k] = (dh - prev) / (dt * per)
        prev = dh
    L, n = problem.L, problem.n
    cap = setup.beta * L * L / (8.0 * n * n)
    summary = {
        "drift_gap_max": gap,
        "drift_gap_cap": L / n,
        "final_dh": prev,
        "dt": dt,
        "mass_lost": max(p.mass_lost, q.mass_lost),
    }
    return LabReport("continuous_dH", measured, np.full(chunks, cap), slack, summary)


def check_gibbs_stationary(setup: LabSetup) -> LabReport:
    """The Gibbs density of the empirical risk is stationary under the Fokker-Planck solver.

    Measured every 10% of the run: L1 distance to the initial Gibbs density.
    """
    steps, slack = setup.resolved("gibbs_stationary")
    problem = make_problem(setup.kind, setup.n, 1, setup.seed, **setup.family)
    drift = DriftSpec.full(problem, setup.lam)
    lo, hi = -12.0, 12.0
    x = np.linspace(lo, hi, setup.M)
    data = problem.dataset
    F = problem.family.value(x[:, None, None], data.X[None, :, :], data.y[None, :]).mean(axis=1)
    F = F + 0.5 * setup.lam * x * x
    logp = -setup.beta * (F - F.min())
    gibbs = make_grid(lo, hi, setup.M, np.exp(logp))
    if gibbs.values[0] > 1e-12 * gibbs.values.max() or gibbs.values[-1] > 1e-12 * gibbs.values.max():
        raise ValueError("Gibbs density is not negligible at the domain edge")
    dt = fp_dt_limit(gibbs.dx, setup.beta)
    g = drift(x)
    chunks = 10
    per = max(1, steps // chunks)
    p = gibbs
    measured = np.zeros(chunks)
    for k in range(chunks):
        p = evolve_fokker_planck(p, g, setup.beta, dt, per)
        measured[k] = divergence(p, gibbs, "l1")
    summary = {"total_steps": per * chunks, "dt": dt, "mass_lost": p.mass_lost}
    return LabReport("gibbs_stationary", measured, np.zeros(chunks), slack, summary)


_DISPATCH = {
    "nonexpansive": check_nonexpansive,
    "hellinger_step_succinct": check_hellinger_step_succinct,
    "hellinger_run_improved": check_hellinger_run_improved,
    "l1_steps": check_l1_steps,
    "kl_onestep": check_kl_onestep,
    "ratio_8lemma": check_ratio_8lemma,
    "continuous_dH": check_continuous_dH,
    "gibbs_stationary": check_gibbs_stationary,
}


def lab_verify(check: str, setup: LabSetup | None = None) -> LabReport:
    """Run one grid check and return its per-step report."""
    setup = LabSetup() if setup is None else setup
    try:
        fn = _DISPATCH[check]
    except KeyError:
        raise ValueError(f"unknown check {check!r}; expected one of {CHECKS}") from None
    report = fn(setup)
    report.summary.setdefault("setup", asdict(setup))
    return report
