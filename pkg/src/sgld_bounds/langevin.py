"""Discrete-time Langevin samplers.

SGLD iterates ``w <- w - eta_k (g_k(w) + lam w) + sqrt(2 eta_k / beta) xi_k`` where
``g_k`` is the full, single-example or minibatch gradient of the unregularized
empirical risk.  The full-gradient variant is LMC.  For ``lam > 0`` one such
step has exactly the law of an Ornstein-Uhlenbeck segment of duration ``tau``
at inverse temperature ``beta'`` with the drift frozen at the starting point;
``transform_step`` and ``ou_exact_step`` expose that representation.

All randomness is counter based (see :mod:`sgld_bounds.noise`), so replica
``r`` of a configuration always sees the same initialization, the same
sampled indices and the same Gaussian increments, whichever batch it runs in.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .noise import LANE_INDEX, LANE_INIT, LANE_NOISE, CounterRNG
from .problems import ProblemInstance
from .schedule import StepSchedule

GRAD_MODES = ("full", "single", "minibatch")


class DivergenceError(RuntimeError):
    """A parameter vector became non-finite during a run."""

    def __init__(self, step: int, replica: int | None = None):
        self.step = step
        self.replica = replica
        where = f" (replica {replica})" if replica is not None else ""
        super().__init__(f"non-finite parameters at step {step}{where}")


@dataclass(frozen=True)
class SgldConfig:
    beta: float
    lam: float
    sigma0: float
    schedule: StepSchedule
    N: int | None = None
    grad_mode: str = "single"
    batch_size: int = 1
    seed: int = 0
    snapshot_every: int = 0
    noise: bool = True

    def __post_init__(self):
        if self.N is None:
            object.__setattr__(self, "N", self.schedule.N_max)
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ValueError("beta must be positive and finite")
        if not (math.isfinite(self.sigma0) and self.sigma0 > 0):
            raise ValueError("sigma0 must be positive")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValueError("lambda must be non-negative")
        if not 0 <= self.N <= self.schedule.N_max:
            raise ValueError(f"N={self.N} exceeds the schedule horizon {self.schedule.N_max}")
        if self.grad_mode not in GRAD_MODES:
            raise ValueError(f"grad_mode must be one of {GRAD_MODES}")
        if self.grad_mode == "minibatch" and self.batch_size < 1:
            raise ValueError("minibatch mode needs batch_size >= 1")
        if self.snapshot_every < 0:
            raise ValueError("snapshot_every must be >= 0")
        if self.N > 0 and self.lam > 0:
            worst = float(np.max(self.schedule.etas(self.N))) * self.lam
            if not worst < 0.5:
                raise ValueError(
                    f"step-size assumption eta_k * lambda < 0.5 violated (max eta_k * lambda = {worst:.6g})"
                )

    @property
    def etas(self) -> np.ndarray:
        return self.schedule.etas(self.N)

    def to_dict(self) -> dict:
        return {
            "beta": float(self.beta),
            "lambda": float(self.lam),
            "sigma0": float(self.sigma0),
            "schedule": self.schedule.to_dict(),
            "N": int(self.N),
            "grad_mode": self.grad_mode,
            "batch_size": int(self.batch_size),
            "seed": int(self.seed),
            "snapshot_every": int(self.snapshot_every),
            "noise": bool(self.noise),
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "SgldConfig":
        return cls(
            beta=spec["beta"],
            lam=spec.get("lambda", 0.0),
            sigma0=spec["sigma0"],
            schedule=StepSchedule.from_dict(spec["schedule"]),
            N=spec.get("N"),
            grad_mode=spec.get("grad_mode", "single"),
            batch_size=spec.get("batch_size", 1),
            seed=spec.get("seed", 0),
            snapshot_every=spec.get("snapshot_every", 0),
            noise=spec.get("noise", True),
        )

    def with_(self, **changes) -> "SgldConfig":
        data = {f: getattr(self, f) for f in self.__dataclass_fields__}
        data.update(changes)
        return SgldConfig(**data)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TransformedStep:
    tau: float
    beta_prime: float


def transform_step(eta: float, lam: float, beta: float) -> TransformedStep:
    """OU duration ``tau`` and inverse temperature ``beta'`` matching one SGLD step."""
    if not (eta > 0 and beta > 0 and lam >= 0):
        raise ValueError("need eta > 0, beta > 0 and lambda >= 0")
    if not eta * lam < 0.5:
        raise ValueError("step-size assumption eta * lambda < 0.5 violated")
    if lam == 0:
        return TransformedStep(float(eta), float(beta))
    tau = -math.log1p(-eta * lam) / lam
    return TransformedStep(tau, (1.0 - 0.5 * lam * eta) * beta)


def transform_arrays(etas: np.ndarray, lam: float, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``transform_step`` over a schedule."""
    etas = np.asarray(etas, dtype=float)
    if lam == 0:
        return etas.copy(), np.full_like(etas, beta)
    if etas.size and not np.max(etas) * lam < 0.5:
        raise ValueError("step-size assumption eta * lambda < 0.5 violated")
    return -np.log1p(-etas * lam) / lam, (1.0 - 0.5 * lam * etas) * beta


def init_weights(d: int, sigma0: float, rng: np.random.Generator) -> np.ndarray:
    """Draw w_0 ~ N(0, sigma0^2 I_d)."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if not sigma0 > 0:
        raise ValueError("sigma0 must be positive; a point-mass start is not allowed")
    return sigma0 * rng.standard_normal(d)


def _noise_draw(xi, shape):
    if xi is None:
        return None
    if isinstance(xi, np.random.Generator):
        return xi.standard_normal(shape)
    return np.asarray(xi, dtype=float)


def sgld_step(w, eta: float, beta: float, g_hat, xi=None) -> np.ndarray:
    """One update ``w - eta g_hat + sqrt(2 eta / beta) xi``.

    ``xi`` is a standard-normal draw shaped like ``w``, a ``Generator`` to draw
    it from, or ``None`` for a noiseless gradient-descent step.
    """
    if not (eta > 0 and beta > 0):
        raise ValueError("need eta > 0 and beta > 0")
    w = np.asarray(w, dtype=float)
    g_hat = np.asarray(g_hat, dtype=float)
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(g_hat))):
        raise ValueError("non-finite input to sgld_step")
    out = w - eta * g_hat
    noise = _noise_draw(xi, w.shape)
    if noise is not None:
        out = out + math.sqrt(2.0 * eta / beta) * noise
    return out


def ou_exact_step(w0, tau: float, beta_prime: float, lam: float, g_value, xi=None) -> np.ndarray:
    """Exact OU segment of length ``tau`` with the drift ``g_value`` frozen at ``w0``.

    theta_tau = e^{-lam tau} w0 - (1 - e^{-lam tau}) / lam * g + N(0, (1 - e^{-2 lam tau}) / (beta' lam)).
    """
    if not lam > 0:
        raise ValueError("ou_exact_step needs lambda > 0; use sgld_step when lambda = 0")
    w0 = np.asarray(w0, dtype=float)
    g_value = np.asarray(g_value, dtype=float)
    decay = math.exp(-lam * tau)
    gain = -math.expm1(-lam * tau) / lam
    out = decay * w0 - gain * g_value
    noise = _noise_draw(xi, w0.shape)
    if noise is not None:
        var = -math.expm1(-2.0 * lam * tau) / (beta_prime * lam)
        out = out + math.sqrt(var) * noise
    return out


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class TrajectoryBatch:
    """Per-step records for a set of replicas run under one configuration.

    ``grad_sq[r, k-1]`` is ||g_k(w_{k-1})||^2 for replica ``r``, evaluated at
    the pre-step iterate and without the regularizer.  ``sampled_index`` has
    shape ``(R, N, m)`` for the stochastic modes and is ``None`` for LMC.
    """

    config: SgldConfig
    replicas: np.ndarray
    eta: np.ndarray
    grad_sq: np.ndarray
    sampled_index: np.ndarray | None
    init_w: np.ndarray
    final_w: np.ndarray
    snapshot_steps: np.ndarray
    snapshots: np.ndarray | None
    diverged_at: np.ndarray
    left_domain: np.ndarray

    @property
    def diverged(self) -> np.ndarray:
        return self.diverged_at > 0

    @property
    def config_hash(self) -> str:
        return self.config.digest()

    def __len__(self):
        return len(self.replicas)

    def trajectory(self, r: int) -> "Trajectory":
        return Trajectory(
            config=self.config,
            replica=int(self.replicas[r]),
            eta=self.eta,
            grad_sq=self.grad_sq[r],
            sampled_index=None if self.sampled_index is None else self.sampled_index[r],
            init_w=self.init_w[r],
            final_w=self.final_w[r],
            snapshot_steps=self.snapshot_steps,
            snapshots=None if self.snapshots is None else self.snapshots[r],
            left_domain=bool(self.left_domain[r]),
        )

    def grad_sq_estimate(self):
        """Replica mean and standard error of ||g_k||^2 per step, ignoring diverged replicas."""
        from .certificates import GradSqEstimate

        ok = ~self.diverged
        return GradSqEstimate.from_samples(self.grad_sq[ok])


@dataclass
class Trajectory:
    config: SgldConfig
    eta: np.ndarray
    grad_sq: np.ndarray
    final_w: np.ndarray
    replica: int = 0
    sampled_index: np.ndarray | None = None
    init_w: np.ndarray | None = None
    snapshot_steps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    snapshots: np.ndarray | None = None
    left_domain: bool = False

    def __len__(self):
        return len(self.eta)

    @property
    def config_hash(self) -> str:
        return self.config.digest()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "eta", "grad_sq_norm", "sampled_index"])
            for k in range(len(self)):
                if self.sampled_index is None:
                    idx = ""
                else:
                    idx = ";".join(str(int(i)) for i in np.atleast_1d(self.sampled_index[k]))
                writer.writerow([k + 1, repr(float(self.eta[k])), repr(float(self.grad_sq[k])), idx])

    def snapshots_to_csv(self, path) -> None:
        if self.snapshots is None:
            raise ValueError("trajectory has no snapshots")
        d = self.snapshots.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k"] + [f"w_{j}" for j in range(d)])
            for k, w in zip(self.snapshot_steps, self.snapshots):
                writer.writerow([int(k), *map(repr, w.tolist())])

    @staticmethod
    def read_csv(path) -> tuple[np.ndarray, np.ndarray, list]:
        """Read back (eta, grad_sq, sampled_index) columns from a trajectory CSV."""
        eta, grad_sq, idx = [], [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                eta.append(float(row["eta"]))
                grad_sq.append(float(row["grad_sq_norm"]))
                cell = row["sampled_index"]
                idx.append([int(v) for v in cell.split(";")] if cell else None)
        return np.array(eta), np.array(grad_sq), idx


def _stochastic_grad(problem: ProblemInstance, config: SgldConfig, w, rng: CounterRNG, k: int):
    n = problem.n
    if config.grad_mode == "full":
        return problem.full_grad(w), None
    m = 1 if config.grad_mode == "single" else config.batch_size
    idx = rng.integers(k, n, size=m, lane=LANE_INDEX)
    g = problem.per_example_grads(w, idx).mean(axis=1)
    return g, idx


def run_replicas(
    problem: ProblemInstance,
    config: SgldConfig,
    replicas=1,
    w0=None,
) -> TrajectoryBatch:
    """Run independent replicas side by side.

    ``replicas`` is a count (ids ``0..R-1``) or an explicit sequence of ids.
    ``w0`` overrides the Gaussian initialization; it may be a single vector
    or one row per replica.  Replicas that hit non-finite values are frozen
    and flagged in ``diverged_at`` (1-based step index, 0 if finite).
    """
    ids = np.arange(replicas) if np.isscalar(replicas) else np.asarray(replicas, dtype=np.int64)
    R, d, N = len(ids), problem.d, config.N
    rng = CounterRNG(config.seed, ids)
    if w0 is None:
        w = config.sigma0 * rng.normal(0, d, lane=LANE_INIT)
    else:
        w = np.broadcast_to(np.asarray(w0, dtype=float).reshape(-1, d), (R, d)).copy()
    init_w = w.copy()
    etas = config.etas
    lam, beta = config.lam, config.beta
    grad_sq = np.zeros((R, N))
    m = {"full": 0, "single": 1, "minibatch": config.batch_size}[config.grad_mode]
    sampled = np.zeros((R, N, m), dtype=np.int64) if m else None
    every = config.snapshot_every
    snap_steps = np.arange(0, N + 1, every) if every else np.zeros(0, dtype=int)
    snaps = np.zeros((R, len(snap_steps), d)) if every else None
    if every:
        snaps[:, 0] = w
    diverged_at = np.zeros(R, dtype=np.int64)
    alive = np.ones(R, dtype=bool)
    in_domain = problem.family.in_domain
    left = ~in_domain(w)

    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, N + 1):
            eta = float(etas[k - 1])
            g, idx = _stochastic_grad(problem, config, w, rng, k)
            grad_sq[:, k - 1] = np.einsum("ij,ij->i", g, g)
            if sampled is not None:
                sampled[:, k - 1] = idx
            step = w - eta * (g + lam * w)
            if config.noise:
                step += math.sqrt(2.0 * eta / beta) * rng.normal(k, d, lane=LANE_NOISE)
            bad = alive & ~np.all(np.isfinite(step), axis=1)
            if bad.any():
                diverged_at[bad] = k
                alive &= ~bad
            w = np.where(alive[:, None], step, w)
            left |= ~in_domain(w)
            if every and k % every == 0:
                snaps[:, k // every] = w

    return TrajectoryBatch(
        config=config,
        replicas=ids,
        eta=np.array(etas),
        grad_sq=grad_sq,
        sampled_index=sampled,
        init_w=init_w,
        final_w=w,
        snapshot_steps=snap_steps,
        snapshots=snaps,
        diverged_at=diverged_at,
        left_domain=left,
    )


def run(problem: ProblemInstance, config: SgldConfig, replica: int = 0, w0=None) -> Trajectory:
    """Single trajectory; raises :class:`DivergenceError` on non-finite iterates."""
    batch = run_replicas(problem, config, [replica], w0=w0)
    if batch.diverged_at[0]:
        raise DivergenceError(int(batch.diverged_at[0]), replica)
    traj = batch.trajectory(0)
    if traj.sampled_index is not None and config.grad_mode == "single":
        traj.sampled_index = traj.sampled_index[:, 0]
    return traj
