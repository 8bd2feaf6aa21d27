"""Synthetic empirical-risk problems with analytic gradients and exact constants.

Three loss families are provided.  Each one knows its per-example objective
``f(w; z)`` and analytic gradient, the clip level ``C`` that turns ``f`` into
the measured loss ``min(f, C)``, and the Lipschitz-gap constant
``L = sup ||grad f(w; z) - grad f(w; z')||``.

All family methods broadcast: ``w`` has shape ``(..., d)``, features ``x``
shape ``(..., d)`` and labels ``y`` shape ``(...)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

KINDS = ("quadratic_regression", "double_well_1d", "gaussian_mixture_nll")


@dataclass(frozen=True)
class DataPoint:
    features: np.ndarray
    label: float = 0.0

    def __post_init__(self):
        feats = np.atleast_1d(np.asarray(self.features, dtype=float))
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "label", float(self.label))
        if not (np.all(np.isfinite(feats)) and math.isfinite(self.label)):
            raise ValueError("data point coordinates must be finite")


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float, ndmin=2)
        y = np.array(self.y, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise ValueError("features and labels disagree on n")
        if X.shape[0] < 2:
            raise ValueError("a dataset needs n >= 2 points")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.n

    def __getitem__(self, i: int) -> DataPoint:
        return DataPoint(self.X[i].copy(), self.y[i])

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return np.array_equal(self.X, other.X) and np.array_equal(self.y, other.y)

    def with_point(self, index: int, point: DataPoint) -> "Dataset":
        X = self.X.copy()
        y = self.y.copy()
        X[index] = point.features
        y[index] = point.label
        return Dataset(X, y)

    def to_csv(self, path) -> None:
        header = ["index"] + [f"feature_{j}" for j in range(self.d)] + ["label"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(self.n):
                writer.writerow([i, *map(repr, self.X[i].tolist()), repr(float(self.y[i]))])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        d = sum(1 for key in rows[0] if key.startswith("feature_"))
        X = [[float(r[f"feature_{j}"]) for j in range(d)] for r in rows]
        y = [float(r["label"]) for r in rows]
        return cls(np.array(X), np.array(y))


# ---------------------------------------------------------------------------
# loss families


@dataclass(frozen=True)
class QuadraticRegression:
    """f(w; x, y) = (<x, w> - y)^2 / 2 with features in a ball of radius B.

    ``W`` is the parameter clamp radius used only to make ``L`` finite:
    on ``||w|| <= W`` the gradient gap is at most ``2 B (B W + Y)``.
    """

    B: float = 1.0
    Y: float = 1.0
    W: float = 2.0
    noise_std: float = 0.1
    C: float = 1.0
    task_seed: int = 0

    kind = "quadratic_regression"

    def value(self, w, x, y):
        r = np.sum(x * w, axis=-1) - y
        return 0.5 * r * r

    def grad(self, w, x, y):
        r = np.sum(x * w, axis=-1) - y
        return r[..., None] * x

    @property
    def lipschitz_gap(self) -> float:
        return 2.0 * self.B * (self.B * self.W + self.Y)

    def in_domain(self, w) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(w), axis=-1) <= self.W

    def point_in_domain(self, point: DataPoint) -> bool:
        return bool(np.linalg.norm(point.features) <= self.B * (1 + 1e-12) and abs(point.label) <= self.Y)

    def truth(self, d: int) -> np.ndarray:
        rng = np.random.default_rng([self.task_seed, 0x5155])
        u = rng.standard_normal(d)
        return 0.5 * min(self.W, self.Y / self.B) * u / np.linalg.norm(u)

    def sample(self, rng: np.random.Generator, m: int, d: int):
        u = rng.standard_normal((m, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        radius = self.B * rng.uniform(size=(m, 1)) ** (1.0 / d)
        X = u * radius
        y = X @ self.truth(d) + self.noise_std * rng.standard_normal(m)
        return X, np.clip(y, -self.Y, self.Y)


@dataclass(frozen=True)
class DoubleWell1D:
    """Smoothed minimum of two quadratic wells at +-a, tilted by the data.

    f(w; z) = softmin_temp(c (w-a)^2 / 2, c (w+a)^2 / 2) + z w + offset, with the
    data scalar ``z`` (stored as the single feature) in ``[-delta, delta]``.
    The tilt shifts every per-example gradient by ``z``, so the gradient gap
    is exactly ``|z - z'| <= 2 delta``.  ``offset`` makes ``f >= 0``.
    """

    a: float = 1.0
    c: float = 1.0
    temp: float = 0.25
    delta: float = 0.2
    C: float = 1.0
    task_seed: int = 0

    kind = "double_well_1d"

    @property
    def offset(self) -> float:
        return self.temp * math.log(2.0) + self.delta * self.a + self.delta**2 / (2.0 * self.c)

    def well(self, w):
        """Data-free double well h(w)."""
        u = self.a * self.c * w / self.temp
        au = np.abs(u)
        return 0.5 * self.c * (w * w + self.a**2) - self.temp * (au + np.log1p(np.exp(-2.0 * au)))

    def well_grad(self, w):
        return self.c * w - self.c * self.a * np.tanh(self.a * self.c * w / self.temp)

    def value(self, w, x, y):
        w1 = w[..., 0]
        return self.well(w1) + x[..., 0] * w1 + self.offset

    def grad(self, w, x, y):
        w1 = w[..., 0]
        return (self.well_grad(w1) + x[..., 0])[..., None]

    @property
    def lipschitz_gap(self) -> float:
        return 2.0 * self.delta

    def in_domain(self, w) -> np.ndarray:
        return np.ones(np.atleast_2d(w).shape[:-1], dtype=bool)

    def point_in_domain(self, point: DataPoint) -> bool:
        return point.features.shape == (1,) and abs(point.features[0]) <= self.delta

    def sample(self, rng: np.random.Generator, m: int, d: int):
        z = rng.uniform(-self.delta, self.delta, size=(m, 1))
        return z, np.zeros(m)


@dataclass(frozen=True)
class GaussianMixtureNLL:
    """Negative log-likelihood of the symmetric mixture N(m, s2 I)/2 + N(-m, s2 I)/2.

    The component mean is saturated, ``m = A tanh(w)``, and data live in a
    ball of radius ``B``.  Dropping the normalizing constant,
    f(w; x) = (||x||^2 + ||m||^2) / (2 s2) - log cosh(<x, m> / s2) >= 0.
    """

    A: float = 1.0
    s2: float = 1.0
    B: float = 3.0
    C: float = 1.0
    task_seed: int = 0

    kind = "gaussian_mixture_nll"

    def value(self, w, x, y):
        m = self.A * np.tanh(w)
        t = np.sum(x * m, axis=-1) / self.s2
        at = np.abs(t)
        logcosh = at + np.log1p(np.exp(-2.0 * at)) - math.log(2.0)
        return (np.sum(x * x, axis=-1) + np.sum(m * m, axis=-1)) / (2.0 * self.s2) - logcosh

    def grad(self, w, x, y):
        th = np.tanh(w)
        m = self.A * th
        t = np.sum(x * m, axis=-1) / self.s2
        dm = (m - np.tanh(t)[..., None] * x) / self.s2
        return self.A * (1.0 - th * th) * dm

    @property
    def lipschitz_gap(self) -> float:
        # |d m/d w| <= A and the data-dependent part of d f/d m is at most B/s2 in norm
        return 2.0 * self.A * self.B / self.s2

    def in_domain(self, w) -> np.ndarray:
        return np.ones(np.atleast_2d(w).shape[:-1], dtype=bool)

    def point_in_domain(self, point: DataPoint) -> bool:
        return bool(np.linalg.norm(point.features) <= self.B * (1 + 1e-12))

    def truth(self, d: int) -> np.ndarray:
        rng = np.random.default_rng([self.task_seed, 0x6A11])
        return 0.6 * self.A * np.sign(rng.standard_normal(d)) / math.sqrt(d)

    def sample(self, rng: np.random.Generator, m: int, d: int):
        signs = rng.choice([-1.0, 1.0], size=(m, 1))
        X = signs * self.truth(d) + math.sqrt(self.s2) * rng.standard_normal((m, d))
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        X = X * np.minimum(1.0, self.B / np.maximum(norms, 1e-300))
        return X, np.zeros(m)


_FAMILIES = {
    "quadratic_regression": QuadraticRegression,
    "double_well_1d": DoubleWell1D,
    "gaussian_mixture_nll": GaussianMixtureNLL,
}


def make_family(kind: str, **params):
    try:
        cls = _FAMILIES[kind]
    except KeyError:
        raise ValueError(f"unsupported loss kind {kind!r}; expected one of {KINDS}") from None
    family = cls(**params)
    if not family.C > 0:
        raise ValueError("clip level C must be positive")
    return family


# ---------------------------------------------------------------------------
# problem instances


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    dataset: Dataset
    family: object
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.family.kind

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def d(self) -> int:
        return self.dataset.d

    @property
    def L(self) -> float:
        return self.family.lipschitz_gap

    @property
    def C(self) -> float:
        return self.family.C

    @property
    def s(self) -> float:
        return self.C / 2.0

    def with_dataset(self, dataset: Dataset) -> "ProblemInstance":
        return replace(self, dataset=dataset)

    # batched evaluation used by the samplers
    def per_example_grads(self, w: np.ndarray, idx: np.ndarray) -> np.ndarray:
        """Rows of ``w`` paired with sampled indices: w (B, d), idx (B, m) -> (B, m, d)."""
        X = self.dataset.X[idx]
        y = self.dataset.y[idx]
        return self.family.grad(w[:, None, :], X, y)

    def full_grad(self, w: np.ndarray) -> np.ndarray:
        """Mean per-example gradient for each row of ``w`` (B, d)."""
        g = self.family.grad(w[:, None, :], self.dataset.X[None, :, :], self.dataset.y[None, :])
        return g.mean(axis=1)

    def empirical_loss(self, w: np.ndarray, dataset: Dataset | None = None) -> np.ndarray:
        """Mean clipped loss over ``dataset`` (default: training data), one value per row of w."""
        data = self.dataset if dataset is None else dataset
        w2 = np.atleast_2d(w)
        f = self.family.value(w2[:, None, :], data.X[None, :, :], data.y[None, :])
        return np.minimum(f, self.C).mean(axis=1)


def _data_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream,)))


def make_problem(kind: str, n: int, d: int = 1, seed: int = 0, **params) -> ProblemInstance:
    """Draw a dataset of size ``n`` from the generator of loss family ``kind``.

    The seed fully determines the dataset.  Family parameters (radii, clip
    level, well shape, ...) are passed as keyword arguments.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if d < 1:
        raise ValueError("d must be at least 1")
    if kind == "double_well_1d" and d != 1:
        raise ValueError("double_well_1d is one-dimensional; d must be 1")
    family = make_family(kind, **params)
    X, y = family.sample(_data_rng(seed, 0), n, d)
    return ProblemInstance(Dataset(X, y), family, seed=seed)


def draw_dataset(problem: ProblemInstance, m: int, seed: int) -> Dataset:
    """Fresh sample from the same data distribution, e.g. a held-out test set."""
    X, y = problem.family.sample(_data_rng(seed, 1), m, problem.d)
    return Dataset(X, y)


def draw_points(problem: ProblemInstance, m: int, seed: int) -> list[DataPoint]:
    data = draw_dataset(problem, max(m, 2), seed)
    return [data[i] for i in range(m)]


@dataclass(frozen=True, eq=False)
class NeighborPair:
    base: Dataset
    variant: Dataset
    differing_index: int
    problem: ProblemInstance

    def __post_init__(self):
        if self.base.n != self.variant.n:
            raise ValueError("neighboring datasets must have equal size")
        same = np.all(self.base.X == self.variant.X, axis=1) & (self.base.y == self.variant.y)
        same[self.differing_index] = True
        if not same.all():
            raise ValueError("datasets differ outside the differing index")

    @property
    def problems(self) -> tuple[ProblemInstance, ProblemInstance]:
        return self.problem.with_dataset(self.base), self.problem.with_dataset(self.variant)


def neighbor_of(problem: ProblemInstance, index: int, replacement: DataPoint) -> NeighborPair:
    if not 0 <= index < problem.n:
        raise IndexError(f"index {index} out of range for n={problem.n}")
    if replacement.features.shape != (problem.d,):
        raise ValueError("replacement has the wrong feature dimension")
    if not problem.family.point_in_domain(replacement):
        raise ValueError("replacement lies outside the family's data domain")
    variant = problem.dataset.with_point(index, replacement)
    return NeighborPair(problem.dataset, variant, index, problem)


def _check_w(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        raise ValueError("parameter vector must be finite")
    return w


def gradient(problem: ProblemInstance, w, selector="full", lam: float = 0.0) -> np.ndarray:
    """Regularized gradient at ``w``.

    ``selector`` is ``"full"`` (mean over the data), an integer ``i`` (the
    single example ``z_i``) or ``"regularizer_only"``.
    """
    w = _check_w(w).reshape(problem.d)
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if selector == "regularizer_only":
        return lam * w
    if selector == "full":
        return problem.full_grad(w[None, :])[0] + lam * w
    if isinstance(selector, (int, np.integer)) and not isinstance(selector, bool):
        i = int(selector)
        if not 0 <= i < problem.n:
            raise IndexError(f"example index {i} out of range")
        x = problem.dataset.X[i]
        return problem.family.grad(w, x, problem.dataset.y[i]) + lam * w
    raise ValueError(f"unknown selector {selector!r}")


def loss(problem: ProblemInstance, w, z: DataPoint) -> float:
    """Clipped per-example loss min(f(w; z), C)."""
    w = _check_w(w).reshape(problem.d)
    f = float(problem.family.value(w, z.features, z.label))
    return min(f, problem.C)


def unclipped_loss(problem: ProblemInstance, w, z: DataPoint) -> float:
    w = _check_w(w).reshape(problem.d)
    return float(problem.family.value(w, z.features, z.label))


def lipschitz_gap(problem: ProblemInstance) -> float:
    return problem.L


def sample_gradient_gaps(problem: ProblemInstance, count: int, seed: int = 0) -> np.ndarray:
    """Gradient gaps ||grad f(w; z) - grad f(w; z')|| at random (w, z, z') triples.

    Parameters are drawn from the clamp region for quadratic_regression and
    from a wide box otherwise; data points come from the family's domain,
    including its boundary.
    """
    rng = np.random.default_rng(seed)
    fam = problem.family
    d = problem.d
    if fam.kind == "quadratic_regression":
        u = rng.standard_normal((count, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        w = u * fam.W * rng.uniform(size=(count, 1)) ** (1.0 / d)
        w[: count // 10] = u[: count // 10] * fam.W

        def pts():
            v = rng.standard_normal((count, d))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            x = v * fam.B * rng.uniform(size=(count, 1)) ** (1.0 / d)
            x[: count // 10] = v[: count // 10] * fam.B
            yy = rng.uniform(-fam.Y, fam.Y, size=count)
            yy[: count // 20] = np.sign(yy[: count // 20]) * fam.Y
            return x, yy
    elif fam.kind == "double_well_1d":
        w = rng.uniform(-5.0, 5.0, size=(count, 1))

        def pts():
            z = rng.uniform(-fam.delta, fam.delta, size=(count, 1))
            z[: count // 20] = np.sign(z[: count // 20]) * fam.delta
            return z, np.zeros(count)
    else:
        w = rng.uniform(-4.0, 4.0, size=(count, d))

        def pts():
            v = rng.standard_normal((count, d))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            x = v * fam.B * rng.uniform(size=(count, 1)) ** (1.0 / d)
            x[: count // 10] = v[: count // 10] * fam.B
            return x, np.zeros(count)

    x1, y1 = pts()
    x2, y2 = pts()
    return np.linalg.norm(fam.grad(w, x1, y1) - fam.grad(w, x2, y2), axis=-1)


def dataset_points(dataset: Dataset) -> Sequence[DataPoint]:
    return [dataset[i] for i in range(dataset.n)]
