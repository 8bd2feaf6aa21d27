"""Exact grid propagation of discrete Langevin steps and explicit Fokker-Planck evolution."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtr

from ..problems import NeighborPair, ProblemInstance
from .grid import DensityGrid

MAX_STEP_LOSS = 1e-6
FP_SAFETY = 0.4


@dataclass(frozen=True)
class DriftSpec:
    """Drift field g(w) + lam w on the real line.

    ``per_example`` uses one example's gradient, ``full`` the mean over the
    dataset, ``neighbor_delta`` the difference of the two full gradients of
    a neighbor pair (base minus variant), and ``custom`` an arbitrary
    vectorized callable.
    """

    kind: str
    problem: ProblemInstance | None = None
    index: int | None = None
    pair: NeighborPair | None = None
    func: Callable | None = field(default=None, compare=False)
    lam: float = 0.0

    @classmethod
    def per_example(cls, problem, index, lam=0.0):
        if problem.d != 1:
            raise ValueError("grid drifts need a one-dimensional problem")
        return cls("per_example", problem=problem, index=index, lam=lam)

    @classmethod
    def full(cls, problem, lam=0.0):
        if problem.d != 1:
            raise ValueError("grid drifts need a one-dimensional problem")
        return cls("full", problem=problem, lam=lam)

    @classmethod
    def neighbor_delta(cls, pair):
        return cls("neighbor_delta", pair=pair)

    @classmethod
    def custom(cls, func, lam=0.0):
        return cls("custom", func=func, lam=lam)

    def _example_grad(self, problem, i, x):
        X = problem.dataset.X[i]
        return problem.family.grad(x[:, None], X, problem.dataset.y[i])[:, 0]

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "per_example":
            g = self._example_grad(self.problem, self.index, x)
        elif self.kind == "full":
            g = self.problem.full_grad(x[:, None])[:, 0]
        elif self.kind == "neighbor_delta":
            base, variant = self.pair.problems
            return base.full_grad(x[:, None])[:, 0] - variant.full_grad(x[:, None])[:, 0]
        elif self.kind == "custom":
            g = np.broadcast_to(np.asarray(self.func(x), dtype=float), x.shape)
        else:
            raise ValueError(f"unknown drift kind {self.kind!r}")
        return g + self.lam * x

    def components(self) -> list["DriftSpec"]:
        """Per-example drifts whose uniform mixture is one SGLD step."""
        if self.kind == "full":
            return [DriftSpec.per_example(self.problem, i, self.lam) for i in range(self.problem.n)]
        return [self]

    def unregularized_sq(self, x) -> np.ndarray:
        """Mixture average of ||g_i(x)||^2 without the regularizer."""
        x = np.asarray(x, dtype=float)
        parts = [c.with_lam(0.0)(x) ** 2 for c in self.components()]
        return np.mean(parts, axis=0)

    def with_lam(self, lam: float) -> "DriftSpec":
        return DriftSpec(self.kind, self.problem, self.index, self.pair, self.func, lam)


def step_kernel(x: np.ndarray, drift_values: np.ndarray, eta: float, beta: float, lo: float, hi: float):
    """Transition matrix of y -> y - eta g(y) + sqrt(2 eta / beta) xi on the grid.

    Column ``j`` holds the density of the image of node ``j``, scaled so its
    trapezoid mass equals the exact Gaussian mass that stays inside the
    domain.  Returns the matrix and the per-column lost mass.
    """
    M = x.size
    dx = x[1] - x[0]
    s = math.sqrt(2.0 * eta / beta)
    m = x - eta * drift_values
    diff = x[:, None] - m[None, :]
    if s >= dx:
        K = np.exp(-0.5 * (diff / s) ** 2) / (s * math.sqrt(2.0 * math.pi))
    else:
        # narrow kernel: average the Gaussian over each node's cell
        K = (ndtr((diff + 0.5 * dx) / s) - ndtr((diff - 0.5 * dx) / s)) / dx
    inside = ndtr((hi - m) / s) - ndtr((lo - m) / s)
    w = np.full(M, dx)
    w[0] = w[-1] = 0.5 * dx
    col_mass = w @ K
    scale = np.divide(inside, col_mass, out=np.zeros(M), where=col_mass > 0)
    K *= scale[None, :]
    return K, 1.0 - inside


def example_kernel(grid: DensityGrid, drift: DriftSpec, eta: float, beta: float):
    g = drift(grid.x)
    if not np.all(np.isfinite(g)):
        raise ValueError("drift is not finite on the grid")
    return step_kernel(grid.x, g, eta, beta, grid.lo, grid.hi)


class Propagator:
    """Cached one-step propagation operator for a fixed drift and step size."""

    def __init__(self, grid: DensityGrid, drift: DriftSpec, eta: float, beta: float, mode: str = "deterministic_map"):
        if not (eta > 0 and beta > 0):
            raise ValueError("need eta > 0 and beta > 0")
        if mode not in ("deterministic_map", "sgld_mixture"):
            raise ValueError(f"unknown propagation mode {mode!r}")
        parts = drift.components() if mode == "sgld_mixture" else [drift]
        kernels = [example_kernel(grid, part, eta, beta) for part in parts]
        self.K = sum(K for K, _ in kernels) / len(parts)
        self.column_loss = sum(loss for _, loss in kernels) / len(parts)
        self.grid = grid
        self.eta, self.beta, self.mode = eta, beta, mode

    @classmethod
    def from_kernel(cls, grid: DensityGrid, K: np.ndarray, column_loss: np.ndarray, eta: float, beta: float):
        self = cls.__new__(cls)
        self.K, self.column_loss, self.grid = K, column_loss, grid
        self.eta, self.beta, self.mode = eta, beta, "sgld_mixture"
        return self

    def __call__(self, p: DensityGrid) -> DensityGrid:
        if not p.same_grid(self.grid):
            raise ValueError("density lives on a different grid")
        P = p.probabilities()
        lost = float(self.column_loss @ P) / p.integral()
        if lost > MAX_STEP_LOSS:
            raise ValueError(f"one step lost {lost:.3g} of the mass; widen the domain")
        raw = self.K @ P
        return p.with_values(raw / (p.weights @ raw), lost)


def propagate(p: DensityGrid, drift: DriftSpec, eta: float, beta: float, mode: str = "deterministic_map") -> DensityGrid:
    """One SGLD step applied to a grid density.

    ``deterministic_map`` pushes ``p`` through y -> y - eta g(y) and convolves
    with N(0, 2 eta / beta).  ``sgld_mixture`` averages that operation over
    the per-example drifts of a ``full`` drift spec, which is the law of one
    single-example SGLD step with a uniformly drawn index.
    """
    return Propagator(p, drift, eta, beta, mode)(p)


def fp_dt_limit(dx: float, beta: float) -> float:
    return FP_SAFETY * dx * dx * beta / 2.0


def evolve_fokker_planck(p: DensityGrid, drift, beta: float, dt: float, steps: int) -> DensityGrid:
    """Explicit conservative central-difference solve of dp/dt = (1/beta) p'' + (g p)'.

    ``drift`` is a :class:`DriftSpec` or an array of drift values at the
    nodes.  The boundary nodes are held at zero; the mass that leaves
    through them is added to ``mass_lost`` and the density is renormalized
    after every step.  Negative undershoots below -1e-12 are clipped and
    counted in the grid log.
    """
    limit = fp_dt_limit(p.dx, beta)
    if not 0 < dt <= limit * (1 + 1e-12):
        raise ValueError(f"dt={dt:.3g} violates the explicit stability limit {limit:.3g}")
    g = drift(p.x) if callable(drift) else np.asarray(drift, dtype=float)
    dx = p.dx
    w = p.weights
    a = dt / (beta * dx * dx)
    c = dt / (2.0 * dx)
    v = np.array(p.values, dtype=float)
    v[0] = v[-1] = 0.0
    lost = 0.0
    clipped = 0
    total = float(w @ v)
    v /= total
    for _ in range(steps):
        gv = g * v
        nxt = v.copy()
        nxt[1:-1] += a * (v[2:] - 2.0 * v[1:-1] + v[:-2]) + c * (gv[2:] - gv[:-2])
        nxt[0] = nxt[-1] = 0.0
        neg = nxt < 0
        if neg.any():
            clipped += int(np.count_nonzero(nxt < -1e-12))
            nxt[neg] = 0.0
        mass = float(w @ nxt)
        lost += max(0.0, 1.0 - mass)
        v = nxt / mass
    note = f"fokker_planck: {steps} steps, dt={dt:.6g}, clipped_negative={clipped}"
    return p.with_values(v, lost, note)
