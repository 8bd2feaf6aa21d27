"""Step-size schedules and their compensated partial sums."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def neumaier_cumsum(values) -> np.ndarray:
    """Running sums with Neumaier compensation; result[k-1] = sum of first k values."""
    out = np.empty(len(values))
    total = 0.0
    comp = 0.0
    for i, v in enumerate(map(float, values)):
        t = total + v
        if abs(total) >= abs(v):
            comp += (total - t) + v
        else:
            comp += (v - t) + total
        total = t
        out[i] = total + comp
    return out


@dataclass(frozen=True)
class StepSchedule:
    """Positive step sizes eta_1, ..., eta_{N_max}.

    ``kind`` is ``"constant"`` (eta_k = c), ``"polynomial"`` (eta_k = c k^-alpha,
    alpha in [0, 1]) or ``"explicit"`` (a literal list).  Indices are 1-based to
    match the usual eta_k notation.
    """

    kind: str
    N_max: int
    c: float = 0.0
    alpha: float = 0.0
    values: tuple = ()
    _etas: np.ndarray = field(init=False, repr=False, compare=False)
    _T: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.N_max < 0:
            raise ValueError("N_max must be non-negative")
        k = np.arange(1, self.N_max + 1, dtype=float)
        if self.kind == "constant":
            etas = np.full(self.N_max, float(self.c))
        elif self.kind == "polynomial":
            if not 0.0 <= self.alpha <= 1.0:
                raise ValueError("polynomial schedules need alpha in [0, 1]")
            etas = float(self.c) * k ** (-float(self.alpha))
        elif self.kind == "explicit":
            vals = tuple(float(v) for v in self.values)
            object.__setattr__(self, "values", vals)
            if len(vals) != self.N_max:
                raise ValueError("explicit schedule length must equal N_max")
            etas = np.array(vals, dtype=float)
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not (np.all(np.isfinite(etas)) and np.all(etas > 0)):
            raise ValueError("step sizes must be finite and positive")
        etas.setflags(write=False)
        T = neumaier_cumsum(etas)
        T.setflags(write=False)
        object.__setattr__(self, "_etas", etas)
        object.__setattr__(self, "_T", T)

    @classmethod
    def constant(cls, c: float, N_max: int) -> "StepSchedule":
        return cls("constant", N_max, c=c)

    @classmethod
    def polynomial(cls, c: float, alpha: float, N_max: int) -> "StepSchedule":
        return cls("polynomial", N_max, c=c, alpha=alpha)

    @classmethod
    def explicit(cls, values) -> "StepSchedule":
        values = tuple(values)
        return cls("explicit", len(values), values=values)

    @classmethod
    def from_dict(cls, spec: dict) -> "StepSchedule":
        kind = spec["kind"]
        if kind == "explicit":
            return cls.explicit(spec["values"])
        if kind == "constant":
            return cls.constant(spec["c"], spec["N_max"])
        return cls.polynomial(spec["c"], spec["alpha"], spec["N_max"])

    def to_dict(self) -> dict:
        if self.kind == "explicit":
            return {"kind": "explicit", "values": list(self.values)}
        out = {"kind": self.kind, "c": float(self.c), "N_max": int(self.N_max)}
        if self.kind == "polynomial":
            out["alpha"] = float(self.alpha)
        return out

    def truncated(self, N: int) -> "StepSchedule":
        """Same step sizes, horizon cut to ``N``."""
        if not 0 <= N <= self.N_max:
            raise ValueError("N out of range")
        if self.kind == "explicit":
            return StepSchedule.explicit(self.values[:N])
        return StepSchedule(self.kind, N, c=self.c, alpha=self.alpha)

    @property
    def nonincreasing(self) -> bool:
        return bool(np.all(np.diff(self._etas) <= 0))

    def etas(self, N: int | None = None) -> np.ndarray:
        """eta_1..eta_N as a read-only array."""
        N = self.N_max if N is None else self._check_N(N)
        return self._etas[:N]

    def T(self, N: int | None = None) -> np.ndarray:
        """Partial sums T_1..T_N."""
        N = self.N_max if N is None else self._check_N(N)
        return self._T[:N]

    def eta(self, k: int) -> float:
        self._check_k(k)
        return float(self._etas[k - 1])

    def T_at(self, k: int) -> float:
        """T_k, with T_0 = 0."""
        if k == 0:
            return 0.0
        self._check_k(k)
        return float(self._T[k - 1])

    def tail_sum(self, k: int, N: int) -> float:
        """sum_{j=k+1}^{N} eta_j, exactly rounded."""
        self._check_N(N)
        if k >= N:
            return 0.0
        return math.fsum(self._etas[max(k, 0):N])

    def _check_k(self, k: int) -> None:
        if not 1 <= k <= self.N_max:
            raise IndexError(f"step index {k} outside 1..{self.N_max}")

    def _check_N(self, N: int) -> int:
        if not 0 <= N <= self.N_max:
            raise ValueError(f"horizon {N} outside 0..{self.N_max}")
        return int(N)


def eta_T(schedule: StepSchedule, k: int) -> tuple[float, float]:
    """(eta_k, T_k) for 1 <= k <= N_max."""
    return schedule.eta(k), schedule.T_at(k)
