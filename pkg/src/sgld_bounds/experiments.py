"""Monte Carlo estimates of generalization gaps and stability, and bound-versus-gap sweeps."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtr

from .certificates import (
    GradSqEstimate,
    PacBayesConfig,
    all_certificates,
    stability_certificate,
)
from .langevin import SgldConfig, run_replicas
from .problems import (
    DataPoint,
    Dataset,
    NeighborPair,
    ProblemInstance,
    draw_dataset,
    draw_points,
    make_problem,
    neighbor_of,
)
from .schedule import StepSchedule

MAX_EXCLUDED_FRACTION = 0.10


class DivergenceQuotaError(RuntimeError):
    """More than 10% of the replicas produced non-finite parameters."""


def _check_quota(excluded: int, total: int) -> None:
    if excluded > MAX_EXCLUDED_FRACTION * total:
        raise DivergenceQuotaError(f"{excluded} of {total} replicas diverged (limit 10%)")


@dataclass(frozen=True)
class GapEstimate:
    mean_gap: float
    std_error: float
    replicas: int
    test_size: int
    excluded: int = 0
    left_domain: int = 0


def replica_gaps(problem: ProblemInstance, final_w: np.ndarray, test: Dataset) -> np.ndarray:
    """Per replica: mean clipped test loss minus mean clipped training loss."""
    return problem.empirical_loss(final_w, test) - problem.empirical_loss(final_w)


def estimate_gap(problem: ProblemInstance, config: SgldConfig, replicas: int, test: Dataset) -> GapEstimate:
    if replicas < 2:
        raise ValueError("need at least 2 replicas")
    batch = run_replicas(problem, config, replicas)
    ok = ~batch.diverged
    excluded = int(np.count_nonzero(~ok))
    _check_quota(excluded, replicas)
    gaps = replica_gaps(problem, batch.final_w[ok], test)
    kept = gaps.size
    return GapEstimate(
        mean_gap=float(gaps.mean()),
        std_error=float(gaps.std(ddof=1) / math.sqrt(kept)),
        replicas=kept,
        test_size=test.n,
        excluded=excluded,
        left_domain=int(np.count_nonzero(batch.left_domain & ok)),
    )


@dataclass(frozen=True)
class DataAveragedGap:
    """Gap averaged over independent training sets.

    ``std_error`` is the spread of the per-dataset means across datasets,
    which accounts for both algorithm and data randomness.
    """

    mean_gap: float
    std_error: float
    per_dataset: tuple
    grad_sq: GradSqEstimate

    @property
    def excluded(self) -> int:
        return sum(g.excluded for g in self.per_dataset)


def data_averaged_gap(
    kind: str,
    n: int,
    d: int,
    config: SgldConfig,
    replicas: int,
    dataset_seeds,
    test_size: int = 10_000,
    family: dict | None = None,
) -> DataAveragedGap:
    """Average ``estimate_gap`` over training sets drawn with ``dataset_seeds``.

    Also pools the per-step squared gradient norms of every replica on every
    dataset, which is the algorithm-and-data expectation the PAC-Bayes
    certificate consumes.
    """
    family = family or {}
    per, pooled = [], []
    for s in dataset_seeds:
        problem = make_problem(kind, n, d, int(s), **family)
        test = draw_dataset(problem, test_size, int(s) + 1_000_003)
        batch = run_replicas(problem, config, replicas)
        ok = ~batch.diverged
        excluded = int(np.count_nonzero(~ok))
        _check_quota(excluded, replicas)
        gaps = replica_gaps(problem, batch.final_w[ok], test)
        per.append(
            GapEstimate(
                float(gaps.mean()),
                float(gaps.std(ddof=1) / math.sqrt(gaps.size)),
                int(gaps.size),
                test.n,
                excluded,
                int(np.count_nonzero(batch.left_domain & ok)),
            )
        )
        pooled.append(batch.grad_sq[ok])
    means = np.array([g.mean_gap for g in per])
    se = float(means.std(ddof=1) / math.sqrt(means.size)) if means.size > 1 else per[0].std_error
    return DataAveragedGap(float(means.mean()), se, tuple(per), GradSqEstimate.from_samples(np.vstack(pooled)))


# ---------------------------------------------------------------------------
# exact oracle for quadratic regression with full gradients


def _clipped_half_square_mean(m: np.ndarray, s: np.ndarray, C: float) -> np.ndarray:
    """E[min(r^2 / 2, C)] for r ~ N(m, s^2), elementwise."""
    c = math.sqrt(2.0 * C)
    s = np.maximum(s, 1e-300)
    a, b = (-c - m) / s, (c - m) / s
    pa, pb = np.exp(-0.5 * a * a) / math.sqrt(2 * math.pi), np.exp(-0.5 * b * b) / math.sqrt(2 * math.pi)
    mass = ndtr(b) - ndtr(a)
    # E[r^2 ; a < (r - m)/s < b] with r = m + s u
    second = (m * m + s * s) * mass + 2.0 * m * s * (pa - pb) + s * s * (a * pa - b * pb)
    return 0.5 * second + C * (1.0 - mass)


def quadratic_lmc_moments(problem: ProblemInstance, config: SgldConfig, w0=None):
    """Exact mean and covariance of the final LMC iterate on quadratic regression."""
    if problem.kind != "quadratic_regression" or config.grad_mode != "full":
        raise ValueError("the exact oracle covers full-gradient runs on quadratic_regression")
    X, y = problem.dataset.X, problem.dataset.y
    n, d = X.shape
    A = X.T @ X / n
    b = X.T @ y / n
    mu = np.zeros(d) if w0 is None else np.asarray(w0, dtype=float)
    cov = np.zeros((d, d)) if w0 is not None else config.sigma0**2 * np.eye(d)
    for eta in config.etas:
        B = np.eye(d) - eta * (A + config.lam * np.eye(d))
        mu = B @ mu + eta * b
        cov = B @ cov @ B.T
        if config.noise:
            cov = cov + (2.0 * eta / config.beta) * np.eye(d)
    return mu, cov


def quadratic_gap_oracle(problem: ProblemInstance, config: SgldConfig, test: Dataset) -> float:
    """Expected clipped test-minus-train loss under the exact Gaussian law of the final iterate."""
    mu, cov = quadratic_lmc_moments(problem, config)
    C = problem.C

    def mean_loss(data: Dataset) -> float:
        m = data.X @ mu - data.y
        s = np.sqrt(np.einsum("ij,jk,ik->i", data.X, cov, data.X))
        return float(_clipped_half_square_mean(m, s, C).mean())

    return mean_loss(test) - mean_loss(problem.dataset)


# ---------------------------------------------------------------------------
# stability


@dataclass(frozen=True)
class ProbeResult:
    """Largest absolute paired loss difference over the probe points."""

    value: float
    std_error: float
    argmax: int
    differences: np.ndarray
    std_errors: np.ndarray
    excluded: int = 0


def default_probes(pair: NeighborPair, count: int = 64, seed: int = 0) -> list[DataPoint]:
    """``count`` fresh draws from the data generator plus both differing points."""
    i = pair.differing_index
    extra = [pair.base[i], pair.variant[i]]
    return draw_points(pair.problem, count, seed + 2_000_003) + extra


def stability_probe(
    pair: NeighborPair,
    config: SgldConfig,
    replicas: int,
    probes=None,
    w0=None,
) -> ProbeResult:
    """max_z |E l(w_S; z) - E l(w_S'; z)| from paired runs sharing all random draws."""
    if replicas < 2:
        raise ValueError("need at least 2 replicas")
    probes = default_probes(pair) if probes is None else list(probes)
    if not probes:
        raise ValueError("probe set is empty")
    base, variant = pair.problems
    a = run_replicas(base, config, replicas, w0=w0)
    b = run_replicas(variant, config, replicas, w0=w0)
    ok = ~(a.diverged | b.diverged)
    excluded = int(np.count_nonzero(~ok))
    _check_quota(excluded, replicas)
    Z = Dataset(np.array([p.features for p in probes]), np.array([p.label for p in probes])) if len(probes) > 1 else None
    if Z is None:
        Z = Dataset(np.vstack([probes[0].features] * 2), np.array([probes[0].label] * 2))
    fam = base.family
    la = np.minimum(fam.value(a.final_w[ok][:, None, :], Z.X[None], Z.y[None]), base.C)
    lb = np.minimum(fam.value(b.final_w[ok][:, None, :], Z.X[None], Z.y[None]), base.C)
    diff = la - lb
    k = diff.shape[0]
    means = diff.mean(axis=0)
    ses = diff.std(axis=0, ddof=1) / math.sqrt(k) if k > 1 else np.zeros_like(means)
    j = int(np.argmax(np.abs(means)))
    return ProbeResult(float(abs(means[j])), float(ses[j]), j, means, ses, excluded)


# ---------------------------------------------------------------------------
# fence-sitting demonstration


@dataclass
class FenceConfig:
    n: int = 10
    seed: int = 0
    eta: float = 0.05
    beta: float = 10.0
    N: int = 400
    replicas: int = 500
    epsilon: float = 1e-3
    grad_mode: str = "single"
    family: dict = field(default_factory=dict)


@dataclass
class FenceReport:
    sgld_right_frequency: float
    sgld_frequency_se: float
    gd_right_frequency: float
    gd_variant_right_frequency: float
    sgld_variant_right_frequency: float
    gd_probe: float
    sgld_probe: float
    sgld_probe_se: float
    inter_well_loss_gap: float
    ridge_shift: float
    config: dict

    def to_dict(self) -> dict:
        return asdict(self)


def symmetric_double_well(n: int, seed: int = 0, **family) -> ProblemInstance:
    """Double-well problem whose data scalars come in +-z pairs, so the ridge is exactly at 0."""
    if n % 2:
        raise ValueError("a symmetric dataset needs even n")
    half = make_problem("double_well_1d", max(n // 2, 2), 1, seed, **family)
    z = half.dataset.X[: n // 2, 0]
    X = np.concatenate([z, -z])[:, None]
    return half.with_dataset(Dataset(X, np.zeros(n)))


def ridge_shifting_pair(problem: ProblemInstance) -> NeighborPair:
    """Replace the most negative data scalar by +delta, tilting the ridge to the right."""
    z = problem.dataset.X[:, 0]
    i = int(np.argmin(z))
    return neighbor_of(problem, i, DataPoint([problem.family.delta], 0.0))


def fence_demo(cfg: FenceConfig | None = None) -> FenceReport:
    """Noiseless descent versus SGLD started on the ridge of a symmetric double well.

    GD starts ``epsilon`` to the right of the ridge and SGLD exactly on it.
    On the ridge-shifting neighbor GD flips basin, which makes its stability
    probe of the order of the loss gap between wells, while SGLD's basin
    choice is dominated by noise on both datasets.
    """
    cfg = FenceConfig() if cfg is None else cfg
    problem = symmetric_double_well(cfg.n, cfg.seed, **cfg.family)
    pair = ridge_shifting_pair(problem)
    base, variant = pair.problems
    sched = StepSchedule.constant(cfg.eta, cfg.N)
    sgld = SgldConfig(cfg.beta, 0.0, 1.0, sched, grad_mode=cfg.grad_mode, seed=cfg.seed)
    gd = SgldConfig(cfg.beta, 0.0, 1.0, sched, grad_mode="full", seed=cfg.seed, noise=False)
    ridge = np.zeros(1)
    R = cfg.replicas

    s_base = run_replicas(base, sgld, R, w0=ridge)
    s_var = run_replicas(variant, sgld, R, w0=ridge)
    g_base = run_replicas(base, gd, 2, w0=ridge + cfg.epsilon)
    g_var = run_replicas(variant, gd, 2, w0=ridge + cfg.epsilon)

    right = (s_base.final_w[:, 0] > 0).astype(float)
    freq = float(right.mean())
    probes = default_probes(pair, 64, cfg.seed)
    gd_probe = stability_probe(pair, gd, 2, probes, w0=ridge + cfg.epsilon)
    sg_probe = stability_probe(pair, sgld, R, probes, w0=ridge)

    fam = problem.family
    zs = np.array([p.features[0] for p in probes])
    wr, wl = g_base.final_w[0, 0], g_var.final_w[0, 0]
    gap = float(np.max(np.abs(np.minimum(fam.value(np.array([wr]), zs[:, None], 0), fam.C) - np.minimum(
        fam.value(np.array([wl]), zs[:, None], 0), fam.C))))
    zbar = variant.dataset.X[:, 0].mean()
    return FenceReport(
        sgld_right_frequency=freq,
        sgld_frequency_se=math.sqrt(max(freq * (1 - freq), 1e-12) / R),
        gd_right_frequency=float(np.mean(g_base.final_w[:, 0] > 0)),
        gd_variant_right_frequency=float(np.mean(g_var.final_w[:, 0] > 0)),
        sgld_variant_right_frequency=float(np.mean(s_var.final_w[:, 0] > 0)),
        gd_probe=gd_probe.value,
        sgld_probe=sg_probe.value,
        sgld_probe_se=sg_probe.std_error,
        inter_well_loss_gap=gap,
        ridge_shift=float(zbar),
        config=asdict(cfg),
    )


# ---------------------------------------------------------------------------
# sweeps


SWEEP_COLUMNS = [
    "row",
    "kind",
    "schedule",
    "N",
    "n",
    "lambda",
    "beta",
    "lmc_stability",
    "sgld_succinct",
    "sgld_improved",
    "pac_bayes",
    "gap_mean",
    "gap_se",
    "excluded",
    "grad_sq_mean",
    "failed",
    "error",
]


@dataclass
class SweepRow:
    row: int
    kind: str
    schedule: dict
    N: int
    n: int
    lam: float
    beta: float
    certificates: dict = field(default_factory=dict)
    gap_mean: float = math.nan
    gap_se: float = math.nan
    excluded: int = 0
    grad_sq_mean: float = math.nan
    failed: bool = False
    error: str = ""

    def csv_record(self) -> dict:
        sched = self.schedule
        desc = sched["kind"] + ":" + ",".join(f"{k}={v}" for k, v in sorted(sched.items()) if k not in ("kind", "values"))
        rec = {
            "row": self.row,
            "kind": self.kind,
            "schedule": desc,
            "N": self.N,
            "n": self.n,
            "lambda": self.lam,
            "beta": self.beta,
            "gap_mean": self.gap_mean,
            "gap_se": self.gap_se,
            "excluded": self.excluded,
            "grad_sq_mean": self.grad_sq_mean,
            "failed": str(self.failed).lower(),
            "error": self.error,
        }
        for v in ("lmc_stability", "sgld_succinct", "sgld_improved", "pac_bayes"):
            rec[v] = self.certificates.get(v, "")
        return rec


@dataclass(frozen=True)
class SweepPoint:
    schedule: dict
    N: int
    n: int
    lam: float
    beta: float


def _sweep_row(args) -> SweepRow:
    idx, point, kind, d, replicas, seed, sigma0, dataset_seeds, test_size, family, delta = args
    sched = StepSchedule.from_dict(point.schedule)
    row = SweepRow(idx, kind, point.schedule, point.N, point.n, point.lam, point.beta)
    try:
        config = SgldConfig(point.beta, point.lam, sigma0, sched, N=point.N, seed=seed)
        problem = make_problem(kind, point.n, d, dataset_seeds[0], **family)
        est = data_averaged_gap(kind, point.n, d, config, replicas, dataset_seeds, test_size, family)
        certs = all_certificates(est.grad_sq, config, point.n, problem.L, problem.C, PacBayesConfig(delta))
        row.certificates = {k: c.bound for k, c in certs.items()}
        row.gap_mean, row.gap_se = est.mean_gap, est.std_error
        row.excluded = est.excluded
        row.grad_sq_mean = float(est.grad_sq.mean.mean()) if point.N else 0.0
    except (ValueError, RuntimeError) as exc:
        row.failed, row.error = True, f"{type(exc).__name__}: {exc}"
    return row


def sweep_report(
    grid,
    kind: str,
    replicas: int,
    seed: int = 0,
    d: int = 1,
    sigma0: float = 1.0,
    dataset_seeds=(0,),
    test_size: int = 10_000,
    family: dict | None = None,
    delta: float = 0.05,
    jobs: int = 1,
) -> list[SweepRow]:
    """One row per grid point with every certificate and the data-averaged gap.

    Rows depend only on their inputs and ``seed``, so the result is the same
    for any ``jobs``.  A row whose computation fails is returned with
    ``failed`` set and the error message recorded.
    """
    points = [p if isinstance(p, SweepPoint) else SweepPoint(**p) for p in grid]
    if not points:
        raise ValueError("sweep grid is empty")
    args = [
        (i, p, kind, d, replicas, seed, sigma0, tuple(dataset_seeds), test_size, family or {}, delta)
        for i, p in enumerate(points)
    ]
    if jobs > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_row, args))
    return [_sweep_row(a) for a in args]


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for r in rows:
            rec = r.csv_record()
            writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in rec.items()})


# ---------------------------------------------------------------------------
# budget line for polynomial schedules


def budget_line(c: float, alpha: float, n: int, beta: float, L: float, C: float) -> dict:
    """Step budget N* = n^{2/(1-alpha)} for eta_k = c k^-alpha.

    The Hellinger part of the improved certificate is approximately
    (sqrt(beta) L C / n) sqrt(c N^{1-alpha} / (1-alpha)); ``level`` is the value
    of that expression at N = N*, so the certificate stays below ``level`` for
    N < N* and exceeds it once N is large enough past N*.
    """
    if not 0 <= alpha < 1:
        raise ValueError("the budget line needs alpha in [0, 1)")
    n_star = float(n) ** (2.0 / (1.0 - alpha))
    level = math.sqrt(beta) * L * C * math.sqrt(c / (1.0 - alpha))
    return {"N_star": n_star, "level": level}


def exact_crossing(c: float, alpha: float, n: int, beta: float, L: float, C: float, level: float, N_max: int) -> int:
    """Smallest N <= N_max whose improved certificate exceeds ``level`` (N_max + 1 if none)."""
    sched = StepSchedule.polynomial(c, alpha, N_max)

    def bound(N):
        return stability_certificate(L, C, beta, sched, n, N, "sgld_improved").bound

    if bound(N_max) <= level:
        return N_max + 1
    lo, hi = 0, N_max
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if bound(mid) > level:
            hi = mid
        else:
            lo = mid
    return hi
