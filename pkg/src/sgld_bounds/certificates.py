"""Generalization certificates for SGLD and LMC.

Stability certificates bound the expected generalization gap through the
Hellinger distance between the laws of runs on neighboring datasets.
The PAC-Bayes certificate bounds the KL divergence between the law of the
final iterate and a data-independent Gaussian prior that evolves with the
regularizer, and discounts the contribution of early steps by ``exp(-R_{k,N})``.

Every certificate carries its intermediates so the bound can be recomputed
from the record alone.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .langevin import SgldConfig, transform_arrays
from .schedule import StepSchedule, neumaier_cumsum

LN2 = math.log(2.0)
STABILITY_VARIANTS = ("lmc_stability", "sgld_succinct", "sgld_improved")
VARIANTS = STABILITY_VARIANTS + ("pac_bayes",)


def _tail_sums(values: np.ndarray) -> np.ndarray:
    """out[k] = sum_{j > k} values[j-1] for k = 0..len(values) (compensated)."""
    rev = neumaier_cumsum(np.asarray(values, dtype=float)[::-1])
    return np.concatenate([rev[::-1], [0.0]])


def _digest(payload) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, StepSchedule):
        return obj.to_dict()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# ---------------------------------------------------------------------------
# schedule arithmetic


def k0(schedule: StepSchedule, beta: float, L: float) -> int:
    """Split index for the improved stability bound.

    ``k0`` is the step right after the last one with ``eta_k beta L^2 >= ln 2``
    (0 when no step violates the threshold), so ``eta_{k0}`` and every later
    step are small.  On nonincreasing schedules this is the smallest ``k``
    with ``eta_k beta L^2 < ln 2``, and ``N_max + 1`` when no step is small.
    """
    if not (beta > 0 and L > 0):
        raise ValueError("beta and L must be positive")
    large = np.flatnonzero(schedule.etas() * beta * L * L >= LN2)
    return int(large[-1]) + 2 if large.size else 0


def lambda_case(lam: float, beta: float, sigma0: float) -> int:
    """1 for lam = 0, 2 for 0 < lam <= 1/(beta sigma0^2), 3 above that."""
    if lam == 0:
        return 1
    return 2 if lam * beta * sigma0**2 <= 1.0 else 3


def k1_threshold(lam: float, sigma0: float, beta: float) -> float:
    return math.log(1.5 * sigma0**2 * beta * lam) / (2.0 * lam)


def k1(schedule: StepSchedule, lam: float, sigma0: float, beta: float) -> int:
    """First step whose elapsed time exceeds the prior-shrinkage threshold (third lambda regime)."""
    if lambda_case(lam, beta, sigma0) != 3:
        raise ValueError("k1 is only defined when lambda > 1/(beta sigma0^2)")
    thr = k1_threshold(lam, sigma0, beta)
    hits = np.flatnonzero(schedule.T() > thr)
    return int(hits[0]) + 1 if hits.size else schedule.N_max + 1


# ---------------------------------------------------------------------------
# prior bookkeeping


@dataclass(frozen=True)
class PriorState:
    """Prior variances sigma_0^2..sigma_N^2 and the LSI constants b_1..b_N."""

    sigma_sq: np.ndarray
    b: np.ndarray
    tau: np.ndarray
    beta_prime: np.ndarray


def prior_sequence(config: SgldConfig, N: int | None = None) -> PriorState:
    """Chain the per-step prior variance update through the OU reparameterization.

    For lam > 0 each step maps sigma^2 to
    ``e^{-2 lam tau} sigma^2 + (1 - e^{-2 lam tau}) / (beta' lam)`` and
    ``b_k = max(sigma_{k-1}^2 beta'_k, 1/lam)``.  For lam = 0 the step adds
    the Brownian variance ``2 tau / beta'`` and ``b_k = sigma_{k-1}^2 beta'_k + 2 tau_k``.
    """
    N = config.N if N is None else N
    etas = config.schedule.etas(N)
    lam, beta = config.lam, config.beta
    tau, bp = transform_arrays(etas, lam, beta)
    sigma_sq = np.empty(N + 1)
    sigma_sq[0] = config.sigma0**2
    b = np.empty(N)
    for k in range(N):
        prev = sigma_sq[k]
        if lam > 0:
            b[k] = max(prev * bp[k], 1.0 / lam)
            keep = math.exp(-2.0 * lam * tau[k])
            sigma_sq[k + 1] = keep * prev + (-math.expm1(-2.0 * lam * tau[k])) / (bp[k] * lam)
        else:
            b[k] = prev * bp[k] + 2.0 * tau[k]
            sigma_sq[k + 1] = prev + 2.0 * tau[k] / bp[k]
    return PriorState(sigma_sq, b, tau, bp)


def case3_envelope(config: SgldConfig, N: int | None = None, transformed: bool = False) -> np.ndarray:
    """Upper envelope e^{-2 lam t_k} sigma0^2 + 4 (1 - e^{-2 lam t_k}) / (3 beta lam), k = 0..N.

    ``t_k`` is the elapsed step time T_k by default, or the transformed OU
    time tau_1 + ... + tau_k with ``transformed=True``.  Only the transformed
    version is guaranteed: tau_k exceeds eta_k, so near eta_k lam = 0.5 the
    prior can contract past the elapsed-time envelope.
    """
    N = config.N if N is None else N
    lam, beta = config.lam, config.beta
    if transformed:
        tau, _ = transform_arrays(config.schedule.etas(N), lam, beta)
        T = np.concatenate([[0.0], neumaier_cumsum(tau)])
    else:
        T = np.concatenate([[0.0], config.schedule.T(N)])
    return np.exp(-2 * lam * T) * config.sigma0**2 - 4.0 * np.expm1(-2 * lam * T) / (3.0 * beta * lam)


# ---------------------------------------------------------------------------
# KL recursion and decay factors


def kl_bound_recursive(grad_sq, config: SgldConfig, prior: PriorState | None = None) -> np.ndarray:
    """D_1..D_N from D_k = exp(-tau_k / (2 b_k)) D_{k-1} + (beta'_k tau_k / 2) E||g_k||^2, D_0 = 0."""
    N = config.N
    g = np.asarray(grad_sq, dtype=float)
    if g.shape[0] < N:
        raise ValueError(f"need {N} gradient estimates, got {g.shape[0]}")
    if np.any(g[:N] < 0):
        raise ValueError("squared gradient norms must be non-negative")
    prior = prior_sequence(config, N) if prior is None else prior
    decay = np.exp(-prior.tau / (2.0 * prior.b))
    gain = 0.5 * prior.beta_prime * prior.tau
    out = np.empty(N)
    D = 0.0
    for k in range(N):
        D = decay[k] * D + gain[k] * g[k]
        out[k] = D
    return out


def decay_table(config: SgldConfig, N: int | None = None, case: int | None = None) -> np.ndarray:
    """R_{k,N} for k = 1..N under the lambda regime of ``config``."""
    N = config.N if N is None else N
    lam, beta, s0 = config.lam, config.beta, config.sigma0
    actual = lambda_case(lam, beta, s0)
    if case is not None and case != actual:
        raise ValueError(f"lambda={lam} falls in regime {actual}, not {case}")
    etas = config.schedule.etas(N)
    if actual == 1:
        T = config.schedule.T(N)
        terms = etas / (2.0 * s0**2 * beta + 4.0 * T)
        return _tail_sums(terms)[1:]
    tail = _tail_sums(etas)[1:]  # T_N - T_k
    if actual == 2:
        return 0.5 * lam * tail
    kk = k1(config.schedule, lam, s0, beta)
    slow = 3.0 / (8.0 * beta * s0**2)
    if kk > N:
        return slow * tail
    R = 0.25 * lam * tail
    before = np.arange(1, N + 1) < kk
    # T_{k1} - T_k for k < k1
    gap = tail[before] - tail[kk - 1]
    R[before] = 0.25 * lam * tail[kk - 1] + slow * gap
    return R


def decay_factor(config: SgldConfig, k: int, N: int | None = None, case: int | None = None) -> float:
    N = config.N if N is None else N
    if not 1 <= k <= N:
        raise ValueError("need 1 <= k <= N")
    return float(decay_table(config, N, case)[k - 1])


def kl_closed_form(grad_sq, config: SgldConfig, N: int | None = None) -> float:
    """beta * sum_k eta_k e^{-R_{k,N}} E||g_k||^2 for the regime of ``config``."""
    N = config.N if N is None else N
    g = np.asarray(grad_sq, dtype=float)[:N]
    w = config.schedule.etas(N) * np.exp(-decay_table(config, N))
    return config.beta * math.fsum(w * g)


# ---------------------------------------------------------------------------
# certificates


@dataclass
class Certificate:
    variant: str
    bound: float
    intermediates: dict
    inputs: dict
    inputs_hash: str = ""

    def __post_init__(self):
        if not self.inputs_hash:
            self.inputs_hash = _digest({"variant": self.variant, **self.inputs})
        if not self.bound >= 0:
            raise ValueError("certificate bound must be non-negative")

    def to_dict(self) -> dict:
        return json.loads(
            json.dumps(
                {
                    "variant": self.variant,
                    "bound": self.bound,
                    "intermediates": self.intermediates,
                    "inputs": self.inputs,
                    "inputs_hash": self.inputs_hash,
                },
                default=_jsonable,
            )
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, default=_jsonable) + "\n"

    def table_rows(self) -> list[dict]:
        """One row per step with every per-k intermediate that applies."""
        im = self.intermediates
        eta = im.get("eta", [])
        cols = ("T", "sigma_sq", "b", "R", "D_kl")
        rows = []
        for k in range(len(eta)):
            row = {"k": k + 1, "eta": eta[k]}
            for c in cols:
                seq = im.get(c)
                if c == "sigma_sq" and seq is not None:
                    row[c] = seq[k + 1]
                else:
                    row[c] = "" if seq is None else seq[k]
            rows.append(row)
        return rows

    def write_table(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["k", "eta", "T", "sigma_sq", "b", "R", "D_kl"])
            writer.writeheader()
            for row in self.table_rows():
                writer.writerow({k: (repr(float(v)) if not isinstance(v, str) else v) for k, v in row.items()})


def stability_certificate(
    L: float,
    C: float,
    beta: float,
    schedule: StepSchedule,
    n: int,
    N: int | None = None,
    variant: str = "sgld_improved",
    grad_mode: str = "single",
) -> Certificate:
    """Uniform-stability bound on the expected generalization gap.

    lmc_stability:  (L C / n) sqrt(beta sum eta / 2)
    sgld_succinct:  L C sqrt(beta sum eta / (8 n))
    sgld_improved:  2 k0 / n + (sqrt(beta) L C / n) sqrt(sum_{k > k0} eta_k)
    """
    if variant not in STABILITY_VARIANTS:
        raise ValueError(f"unknown stability variant {variant!r}")
    if not (L > 0 and C > 0 and beta > 0 and n >= 1):
        raise ValueError("L, C, beta and n must be positive")
    N = schedule.N_max if N is None else N
    if not 0 <= N <= schedule.N_max:
        raise ValueError("N exceeds the schedule horizon")
    if variant == "sgld_improved" and grad_mode != "single":
        raise ValueError("the improved stability bound is only established for single-example SGLD")
    sched = schedule.truncated(N)
    etas = sched.etas()
    total = math.fsum(etas)
    inter = {"eta": etas.copy(), "T": sched.T().copy(), "sum_eta": total}
    if variant == "lmc_stability":
        bound = L * C / n * math.sqrt(beta * total / 2.0)
    elif variant == "sgld_succinct":
        bound = L * C * math.sqrt(beta * total / (8.0 * n))
    else:
        split = min(k0(sched, beta, L), N)
        suffix = sched.tail_sum(split, N)
        prefix_term = 2.0 * split / n
        suffix_term = math.sqrt(beta) * L * C / n * math.sqrt(suffix)
        bound = prefix_term + suffix_term
        inter.update(
            k0=split,
            k0_rule="first_small" if sched.nonincreasing else "after_last_violation",
            suffix_sum_eta=suffix,
            l1_prefix_term=prefix_term,
            hellinger_suffix_term=suffix_term,
        )
    inputs = {"L": L, "C": C, "beta": beta, "schedule": schedule.to_dict(), "n": n, "N": N, "grad_mode": grad_mode}
    return Certificate(variant, bound, inter, inputs)


@dataclass(frozen=True)
class GradSqEstimate:
    """Replica mean and standard error of E||g_k||^2 per step."""

    mean: np.ndarray
    se: np.ndarray
    replicas: int

    @classmethod
    def from_samples(cls, samples) -> "GradSqEstimate":
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        R = samples.shape[0]
        mean = samples.mean(axis=0)
        se = samples.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros_like(mean)
        return cls(mean, se, R)

    def value(self, conservative: bool = False, z: float = 2.0) -> np.ndarray:
        return self.mean + z * self.se if conservative else self.mean


@dataclass(frozen=True)
class PacBayesConfig:
    delta: float = 0.05
    M: float | None = None
    conservative: bool = False
    z: float = 2.0

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")


def pac_bayes_certificate(
    grad_sq,
    config: SgldConfig,
    pb: PacBayesConfig,
    n: int,
    s: float,
    L: float,
) -> Certificate:
    """s sqrt( beta/n sum_k eta_k e^{-R_{k,N}} E||g_k||^2 + (log(N/delta) + log log(N L)) / n )."""
    N = config.N
    if isinstance(grad_sq, GradSqEstimate):
        g = grad_sq.value(pb.conservative, pb.z)
        source = {"replicas": grad_sq.replicas, "conservative": pb.conservative, "z": pb.z}
    else:
        g = np.asarray(grad_sq, dtype=float)
        source = {"replicas": None, "conservative": False}
    if N == 0 or g.size == 0:
        raise ValueError("the PAC-Bayes certificate needs a non-empty gradient record")
    if g.shape[0] < N:
        raise ValueError(f"need {N} gradient estimates, got {g.shape[0]}")
    g = g[:N]
    if np.any(g < 0):
        raise ValueError("squared gradient norms must be non-negative")
    NL = N * L
    if not NL >= 3:
        raise ValueError("need N L >= 3 for log log(N L) to be positive")
    etas = config.schedule.etas(N)
    R = decay_table(config, N)
    weights = np.exp(-R)
    kl = config.beta * math.fsum(etas * weights * g)
    prior = prior_sequence(config, N)
    kl_rec = kl_bound_recursive(g, config, prior)
    data_term = kl / n
    conf_term = (math.log(N / pb.delta) + math.log(math.log(NL))) / n
    bound = s * math.sqrt(data_term + conf_term)
    case = lambda_case(config.lam, config.beta, config.sigma0)
    inter = {
        "case": case,
        "eta": etas.copy(),
        "T": config.schedule.T(N).copy(),
        "R": R,
        "weights": weights,
        "grad_sq": g,
        "sigma_sq": prior.sigma_sq,
        "b": prior.b,
        "D_kl": kl_rec,
        "kl_closed_form": kl,
        "data_term": data_term,
        "confidence_term": conf_term,
        "s": s,
        "delta": pb.delta,
        "M_recorded": pb.M,
        "M_effective": NL if pb.M is None else min(pb.M, NL),
        "grad_sq_source": source,
    }
    if case == 3:
        inter["k1"] = k1(config.schedule.truncated(N), config.lam, config.sigma0, config.beta)
    inputs = {"config": config.to_dict(), "grad_sq": g, "delta": pb.delta, "n": n, "s": s, "L": L}
    return Certificate("pac_bayes", bound, inter, inputs)


def ideal_bounds(
    T: float,
    L: float,
    C: float,
    beta: float,
    n: int,
    lam: float = 0.0,
    s: float | None = None,
    delta: float | None = None,
    M: float | None = None,
) -> dict:
    """Continuous-time reference bounds at horizon ``T``.

    ``stability`` is L C sqrt(beta T) / (sqrt(2) n).  ``pac_bayes_main`` is
    s L sqrt(beta (1 - e^{-lam T / 2}) / (lam n)), with its lam -> 0 limit
    s L sqrt(beta T / (2 n)).  The confidence term
    s sqrt((log(1/delta) + log log M) / n) is reported separately when
    ``delta`` and ``M`` are given.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    s = C / 2.0 if s is None else s
    stab = L * C * math.sqrt(beta * T) / (math.sqrt(2.0) * n)
    horizon = -math.expm1(-lam * T / 2.0) / lam if lam > 0 else T / 2.0
    out = {"stability": stab, "pac_bayes_main": s * L * math.sqrt(beta * horizon / n)}
    if delta is not None and M is not None:
        if not M > math.e:
            raise ValueError("M must exceed e for log log M > 0")
        out["pac_bayes_confidence"] = s * math.sqrt((math.log(1.0 / delta) + math.log(math.log(M))) / n)
    return out


def all_certificates(
    grad_sq,
    config: SgldConfig,
    n: int,
    L: float,
    C: float,
    pb: PacBayesConfig | None = None,
) -> dict[str, Certificate]:
    """Every certificate that applies to ``config``, keyed by variant."""
    pb = PacBayesConfig() if pb is None else pb
    out = {}
    for variant in STABILITY_VARIANTS:
        if variant == "sgld_improved" and config.grad_mode != "single":
            continue
        out[variant] = stability_certificate(L, C, config.beta, config.schedule, n, config.N, variant, config.grad_mode)
    if config.N > 0:
        out["pac_bayes"] = pac_bayes_certificate(grad_sq, config, pb, n, C / 2.0, L)
    return out
