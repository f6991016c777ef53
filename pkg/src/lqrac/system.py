"""Problem data: the plant (A, B, Q, R, noise levels) and feedback gains."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DimensionMismatch, UnstablePolicy
from .linalg import STABILITY_MARGIN, psd_sqrt, spectral_radius


def _as_matrix(value, rows: int | None, cols: int | None, name: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(value, dtype=float))
    if rows is not None and m.shape[0] != rows:
        raise DimensionMismatch(f"{name} must have {rows} rows, got shape {m.shape}")
    if cols is not None and m.shape[1] != cols:
        raise DimensionMismatch(f"{name} must have {cols} columns, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DimensionMismatch(f"{name} has non-finite entries")
    return m


def _check_spd(m: np.ndarray, name: str) -> None:
    if np.max(np.abs(m - m.T)) > 1e-9 * max(1.0, float(np.max(np.abs(m)))):
        raise DimensionMismatch(f"{name} must be symmetric")
    if np.min(np.linalg.eigvalsh(m)) <= 0.0:
        raise DimensionMismatch(f"{name} must be positive definite")


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Plant x' = A x + B u + w with quadratic stage cost x'Qx + u'Ru.

    Process noise w ~ N(0, Psi); the randomized feedback adds exploration
    noise v ~ N(0, sigma2 * I) to the control, so the effective state-noise
    covariance under feedback is ``Psi + sigma2 * B B^T``.

    Q, R, Psi must be symmetric positive definite and sigma2 > 0; these are
    checked at construction.
    """

    a: np.ndarray
    b: np.ndarray
    q: np.ndarray
    r: np.ndarray
    psi: np.ndarray
    sigma2: float

    def __post_init__(self):
        a = _as_matrix(self.a, None, None, "A")
        n = a.shape[0]
        if a.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got {a.shape}")
        b = _as_matrix(self.b, n, None, "B") if np.ndim(self.b) >= 2 else None
        if b is None:
            b = np.atleast_2d(np.asarray(self.b, dtype=float))
            if b.shape[0] != n:
                b = b.T
        k = b.shape[1]
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", _as_matrix(b, n, k, "B"))
        object.__setattr__(self, "q", _as_matrix(self.q, n, n, "Q"))
        object.__setattr__(self, "r", _as_matrix(self.r, k, k, "R"))
        object.__setattr__(self, "psi", _as_matrix(self.psi, n, n, "Psi"))
        object.__setattr__(self, "sigma2", float(self.sigma2))
        _check_spd(self.q, "Q")
        _check_spd(self.r, "R")
        _check_spd(self.psi, "Psi")
        if self.sigma2 <= 0.0:
            raise DimensionMismatch("sigma2 must be positive")

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def k(self) -> int:
        return self.b.shape[1]

    @cached_property
    def psi_sigma(self) -> np.ndarray:
        """Effective state-noise covariance Psi + sigma2 * B B^T."""
        return self.psi + self.sigma2 * self.b @ self.b.T

    @cached_property
    def psi_sqrt(self) -> np.ndarray:
        return psd_sqrt(self.psi)

    @cached_property
    def cost_block(self) -> np.ndarray:
        """blkdiag(Q, R), the stage cost as a quadratic form on (x, u)."""
        n, k = self.n, self.k
        m = np.zeros((n + k, n + k))
        m[:n, :n] = self.q
        m[n:, n:] = self.r
        return m

    def closed_loop(self, gain: np.ndarray) -> np.ndarray:
        return self.a - self.b @ gain

    def to_dict(self) -> dict:
        return {
            "A": self.a.tolist(),
            "B": self.b.tolist(),
            "Q": self.q.tolist(),
            "R": self.r.tolist(),
            "Psi": self.psi.tolist(),
            "sigma2": self.sigma2,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearSystem":
        return cls(d["A"], d["B"], d["Q"], d["R"], d["Psi"], d["sigma2"])


def scalar_benchmark_system() -> LinearSystem:
    """The scalar benchmark plant: A = B = 1, Q = R = 100, Psi = 0.01,
    sigma = 0.1.  Optimal gain 0.618..., optimal average cost 4.236..."""
    return LinearSystem(a=[[1.0]], b=[[1.0]], q=[[100.0]], r=[[100.0]],
                        psi=[[0.01]], sigma2=0.01)


@dataclass(frozen=True, eq=False)
class Policy:
    """Feedback gain K with its cached closed-loop spectral radius."""

    gain: np.ndarray
    rho: float = field(default=np.nan)

    @classmethod
    def for_system(cls, sys: LinearSystem, gain) -> "Policy":
        gain = _as_matrix(gain, sys.k, sys.n, "K")
        return cls(gain=gain, rho=spectral_radius(sys.closed_loop(gain)))

    @property
    def stable(self) -> bool:
        return self.rho < 1.0 - STABILITY_MARGIN


def as_policy(sys: LinearSystem, policy) -> Policy:
    """Coerce a raw gain array into a Policy (recomputing rho)."""
    if isinstance(policy, Policy):
        return policy
    return Policy.for_system(sys, policy)


def require_stable(sys: LinearSystem, policy) -> Policy:
    pol = as_policy(sys, policy)
    if not pol.stable:
        raise UnstablePolicy(f"rho(A - B K) = {pol.rho:.6g} >= 1")
    return pol
