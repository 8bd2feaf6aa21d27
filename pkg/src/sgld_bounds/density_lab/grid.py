"""One-dimensional densities on uniform grids and the divergences between them.

Integrals use the trapezoid rule.  Because the trapezoid weights turn a grid
density into a discrete probability vector, every divergence computed here
is exactly the corresponding divergence of those discrete measures; this is
what makes data-processing checks on the grid meaningful.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr

DIVERGENCES = ("hellinger_sq", "kl", "l1")
TAIL_LIMIT = 1e-10


class GridMismatch(ValueError):
    pass


class SupportError(ValueError):
    """KL(p||q) is infinite: q vanishes where p carries mass."""


def trapezoid_weights(M: int, dx: float) -> np.ndarray:
    w = np.full(M, dx)
    w[0] = w[-1] = 0.5 * dx
    return w


@dataclass(frozen=True, eq=False)
class DensityGrid:
    lo: float
    hi: float
    values: np.ndarray
    mass_lost: float = 0.0
    log: tuple = field(default_factory=tuple)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 2:
            raise ValueError("values must be a 1-D array")
        if not self.lo < self.hi:
            raise ValueError("need lo < hi")
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError("density values must be finite and non-negative")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def M(self) -> int:
        return self.values.size

    @property
    def dx(self) -> float:
        return (self.hi - self.lo) / (self.M - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.M)

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.M, self.dx)

    def integral(self) -> float:
        return float(self.weights @ self.values)

    def probabilities(self) -> np.ndarray:
        """Discrete masses w_i p_i."""
        return self.weights * self.values

    def mean(self) -> float:
        return float(self.probabilities() @ self.x) / self.integral()

    def var(self) -> float:
        mu = self.mean()
        return float(self.probabilities() @ (self.x - mu) ** 2) / self.integral()

    def expect(self, f_values) -> float:
        return float(self.probabilities() @ np.asarray(f_values, dtype=float))

    def with_values(self, values, lost: float = 0.0, note: str | None = None) -> "DensityGrid":
        log = self.log + ((note,) if note else ())
        return replace(self, values=values, mass_lost=self.mass_lost + lost, log=log)

    def normalized(self) -> "DensityGrid":
        return replace(self, values=self.values / self.integral())

    def same_grid(self, other: "DensityGrid") -> bool:
        return self.M == other.M and self.lo == other.lo and self.hi == other.hi

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "p(x)"])
            for xi, pi in zip(self.x, self.values):
                writer.writerow([repr(float(xi)), repr(float(pi))])


def gaussian_tail_mass(lo: float, hi: float, mu: float, sigma: float) -> float:
    return float(ndtr((lo - mu) / sigma) + ndtr(-(hi - mu) / sigma))


def gaussian_pdf(x, mu: float, var: float) -> np.ndarray:
    return np.exp(-0.5 * (x - mu) ** 2 / var) / np.sqrt(2.0 * np.pi * var)


def make_grid(lo: float, hi: float, M: int, init=("gaussian", 0.0, 1.0)) -> DensityGrid:
    """Normalized density on ``M`` uniform nodes spanning ``[lo, hi]``.

    ``init`` is ``("gaussian", mu, sigma)`` or an array of custom values.
    A Gaussian whose tails outside the domain reach 1e-10 is rejected.
    """
    if not lo < hi:
        raise ValueError("need lo < hi")
    if M < 64:
        raise ValueError("need at least 64 grid points")
    x = np.linspace(lo, hi, M)
    if isinstance(init, tuple) and init and init[0] == "gaussian":
        _, mu, sigma = init
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        tail = gaussian_tail_mass(lo, hi, mu, sigma)
        if tail >= TAIL_LIMIT:
            raise ValueError(f"domain too narrow: Gaussian tail mass {tail:.3g} outside [lo, hi]")
        values = gaussian_pdf(x, mu, sigma**2)
    else:
        values = np.asarray(init, dtype=float)
        if values.shape != (M,):
            raise ValueError("custom values must have length M")
    grid = DensityGrid(lo, hi, values)
    total = grid.integral()
    if not total > 0:
        raise ValueError("density has zero mass")
    return grid.normalized()


def divergence(p: DensityGrid, q: DensityGrid, kind: str = "hellinger_sq") -> float:
    """Trapezoid-rule divergence between two densities on the same grid.

    ``hellinger_sq`` is (1/2) int (sqrt p - sqrt q)^2, ``kl`` is
    int p log(p/q) and ``l1`` is int |p - q|.
    """
    if not p.same_grid(q):
        raise GridMismatch("densities live on different grids")
    w = p.weights
    a, b = p.values, q.values
    if kind == "hellinger_sq":
        return float(0.5 * (w @ (np.sqrt(a) - np.sqrt(b)) ** 2))
    if kind == "l1":
        return float(w @ np.abs(a - b))
    if kind == "kl":
        support = a > 0
        if np.any(support & (b <= 0)):
            raise SupportError("KL is infinite: q vanishes where p is positive")
        ratio = np.log(a[support] / b[support])
        # exact for the discrete measures, so it is non-negative up to rounding
        return max(float(w[support] @ (a[support] * ratio - a[support] + b[support])), 0.0) + float(
            w[~support] @ b[~support]
        )
    raise ValueError(f"unknown divergence {kind!r}; expected one of {DIVERGENCES}")
