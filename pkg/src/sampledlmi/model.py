"""System description, region geometry and certificate containers.

Everything here is an immutable value object. Matrices are stored as dense
``float64`` arrays with the write flag cleared.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

SYMMETRY_RTOL = 1e-10
# Boundary slack for region membership; both boundaries are inclusive.
BOUNDARY_TOL = 1e-12


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        arr = np.atleast_2d(arr) if ndim == 2 else np.atleast_1d(arr)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def symmetrize(M: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Return ``(M + M.T) / 2`` after rejecting gross asymmetry."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    scale = max(np.linalg.norm(M), 1.0)
    if np.linalg.norm(M - M.T) > SYMMETRY_RTOL * scale:
        raise ValueError(f"{name} is not symmetric")
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class LftSystem:
    """Nominal linear dynamics in feedback with sampled nonlinearities.

    ``dx' = A dx + B1 du + B2 w`` with ``w_i = Delta_i(v_i)`` and
    ``v_i = C[i] dx + D[i] du``.
    """

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C: tuple
    D: tuple
    x0: Optional[np.ndarray] = None
    u0: Optional[np.ndarray] = None

    def __post_init__(self):
        A = _frozen(self.A, 2, "A")
        B1 = _frozen(self.B1, 2, "B1")
        nx = A.shape[0]
        B2 = np.array(self.B2, dtype=float)
        if B2.size == 0:
            B2 = np.zeros((nx, 0))
        B2 = _frozen(B2, 2, "B2")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B1", B1)
        object.__setattr__(self, "B2", B2)
        object.__setattr__(self, "C", tuple(_frozen(c, 2, "C_i") for c in self.C))
        object.__setattr__(self, "D", tuple(_frozen(d, 2, "D_i") for d in self.D))
        x0 = np.zeros(nx) if self.x0 is None else self.x0
        u0 = np.zeros(B1.shape[1]) if self.u0 is None else self.u0
        object.__setattr__(self, "x0", _frozen(x0, 1, "x0"))
        object.__setattr__(self, "u0", _frozen(u0, 1, "u0"))

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def nu(self) -> int:
        return self.B1.shape[1]

    @property
    def nw(self) -> int:
        return self.B2.shape[1]

    def phi(self, i: int, K: np.ndarray) -> np.ndarray:
        """``C_i^T + K^T D_i^T``, shape ``(nx, nx + nu)``."""
        return self.C[i].T + np.asarray(K).T @ self.D[i].T

    def inputs_matter(self) -> bool:
        return any(np.any(d != 0) for d in self.D)

    def with_structure(self, B2, C, D) -> "LftSystem":
        return LftSystem(self.A, self.B1, B2, tuple(C), tuple(D), self.x0, self.u0)


def _is_selector(M: np.ndarray) -> Optional[str]:
    if not np.all((M == 0) | (M == 1)):
        return "entries must be 0 or 1"
    if np.any(np.count_nonzero(M, axis=1) > 1):
        rows = np.flatnonzero(np.count_nonzero(M, axis=1) > 1).tolist()
        return f"rows {rows} select more than one coordinate"
    return None


def validate_system(sys: LftSystem) -> List[str]:
    """List every violated structural invariant of ``sys`` (empty if valid)."""
    out = []
    nx, nu, nw = sys.nx, sys.nu, sys.nw
    if sys.A.shape != (nx, nx):
        out.append(f"A: expected shape {(nx, nx)}, got {sys.A.shape}")
    if sys.B1.shape[0] != nx:
        out.append(f"B1: expected {nx} rows, got {sys.B1.shape[0]}")
    if sys.B2.shape[0] != nx:
        out.append(f"B2: expected {nx} rows, got {sys.B2.shape[0]}")
    if len(sys.C) != nw:
        out.append(f"C: expected {nw} matrices, got {len(sys.C)}")
    if len(sys.D) != nw:
        out.append(f"D: expected {nw} matrices, got {len(sys.D)}")
    if sys.x0.shape != (nx,):
        out.append(f"x0: expected length {nx}, got {sys.x0.shape}")
    if sys.u0.shape != (nu,):
        out.append(f"u0: expected length {nu}, got {sys.u0.shape}")
    for j in range(nw):
        col = sys.B2[:, j]
        nz = np.flatnonzero(col)
        if len(nz) != 1 or col[nz[0]] != 1:
            out.append(f"B2 column {j}: must have exactly one nonzero entry equal to 1")
    for i, Ci in enumerate(sys.C):
        if Ci.shape != (nx + nu, nx):
            out.append(f"C[{i}]: expected shape {(nx + nu, nx)}, got {Ci.shape}")
            continue
        msg = _is_selector(Ci)
        if msg:
            out.append(f"C[{i}]: {msg}")
    for i, Di in enumerate(sys.D):
        if Di.shape != (nx + nu, nu):
            out.append(f"D[{i}]: expected shape {(nx + nu, nu)}, got {Di.shape}")
            continue
        msg = _is_selector(Di)
        if msg:
            out.append(f"D[{i}]: {msg}")
    return out


@dataclass(frozen=True)
class BoxRegion:
    """Axis-aligned box ``lower <= z <= upper`` containing the origin."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _frozen(self.lower, 1, "lower")
        hi = _frozen(self.upper, 1, "upper")
        if lo.shape != hi.shape:
            raise ValueError("lower and upper must have equal length")
        if not np.all(lo < 0) or not np.all(hi > 0):
            raise ValueError("box must contain the origin strictly in its interior")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def symmetric(cls, half_widths: Sequence[float]) -> "BoxRegion":
        h = np.asarray(half_widths, dtype=float)
        return cls(-h, h)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def inscribed_radius(self) -> float:
        """Radius of the largest origin-centred ball inside the box."""
        return float(min(np.min(-self.lower), np.min(self.upper)))

    def inscribed_scale(self, shape: np.ndarray) -> float:
        """Largest ``alpha`` with ``E(alpha * shape)`` inside the box."""
        shape = np.asarray(shape, dtype=float)
        row_norms = np.linalg.norm(shape, axis=1)
        half = np.minimum(-self.lower, self.upper)
        return float(np.min(half / row_norms))


@dataclass(frozen=True)
class EllipsoidBallRegion:
    """``D = E(W) x rB``: state ellipsoid ``||W^-1 dx|| <= 1`` and input ball.

    ``constrain_input`` is one of ``"auto"``, ``"on"``, ``"off"``; ``auto`` is
    resolved against a system with :meth:`resolved`.
    """

    W: np.ndarray
    r: float
    constrain_input: str = "on"

    def __post_init__(self):
        W = symmetrize(self.W, "W")
        if np.linalg.eigvalsh(W)[0] <= 0:
            raise ValueError("W must be positive definite")
        if not self.r > 0:
            raise ValueError("r must be positive")
        if self.constrain_input not in ("auto", "on", "off"):
            raise ValueError("constrain_input must be auto, on or off")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "r", float(self.r))

    @classmethod
    def scaled(cls, alpha: float, r: float, W0=None, nx: int = 2, constrain_input="on"):
        W0 = np.eye(nx) if W0 is None else np.asarray(W0, dtype=float)
        return cls(alpha * W0, r, constrain_input)

    @property
    def input_constrained(self) -> bool:
        if self.constrain_input == "auto":
            raise ValueError("constrain_input='auto' must be resolved against a system first")
        return self.constrain_input == "on"

    def resolved(self, sys: LftSystem) -> "EllipsoidBallRegion":
        if self.constrain_input != "auto":
            return self
        mode = "on" if sys.inputs_matter() else "off"
        return EllipsoidBallRegion(self.W, self.r, mode)

    @property
    def W_inv(self) -> np.ndarray:
        return inverse_spd(self.W, "W")


def inverse_spd(M: np.ndarray, name: str = "matrix", max_cond: float = 1e12) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix via eigendecomposition."""
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    if w[0] <= 0:
        raise ValueError(f"{name} is not positive definite")
    if w[-1] / w[0] > max_cond:
        raise ValueError(f"{name} is too ill-conditioned (cond={w[-1] / w[0]:.3g})")
    inv = (V / w) @ V.T
    return 0.5 * (inv + inv.T)


def region_membership(region: EllipsoidBallRegion, dx, du, constrain_input: Optional[bool] = None) -> bool:
    """True iff ``||W^-1 dx|| <= 1`` and (input unconstrained or ``||du|| <= r``)."""
    dx = np.asarray(dx, dtype=float).reshape(-1)
    du = np.asarray(du, dtype=float).reshape(-1)
    if dx.shape[0] != region.W.shape[0]:
        raise ValueError(f"dx has length {dx.shape[0]}, region expects {region.W.shape[0]}")
    if constrain_input is None:
        constrain_input = region.constrain_input != "off"
    inside = np.linalg.norm(np.linalg.solve(region.W, dx)) <= 1.0 + BOUNDARY_TOL
    if constrain_input:
        inside = inside and np.linalg.norm(du) <= region.r * (1.0 + BOUNDARY_TOL)
    return bool(inside)


def membership_mask(region: EllipsoidBallRegion, dx: np.ndarray, du: np.ndarray,
                    constrain_input: bool) -> np.ndarray:
    """Vectorised :func:`region_membership` over rows of ``dx`` and ``du``."""
    scaled = np.linalg.solve(region.W, np.asarray(dx, dtype=float).T).T
    mask = np.linalg.norm(scaled, axis=1) <= 1.0 + BOUNDARY_TOL
    if constrain_input:
        mask &= np.linalg.norm(np.asarray(du, dtype=float), axis=1) <= region.r * (1.0 + BOUNDARY_TOL)
    return mask


@dataclass(frozen=True)
class Certificate:
    """Lyapunov matrix, gain, multipliers and input bound for one region."""

    P: np.ndarray
    K: np.ndarray
    lam: np.ndarray
    tau: float
    region: EllipsoidBallRegion
    gamma: np.ndarray
    notes: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "P", _frozen(symmetrize(self.P, "P"), 2, "P"))
        object.__setattr__(self, "K", _frozen(self.K, 2, "K"))
        object.__setattr__(self, "lam", _frozen(self.lam, 1, "lam"))
        object.__setattr__(self, "gamma", _frozen(self.gamma, 1, "gamma"))
        object.__setattr__(self, "tau", float(self.tau))

    def to_dict(self) -> dict:
        return {
            "P": self.P.tolist(),
            "K": self.K.tolist(),
            "lambda": self.lam.tolist(),
            "tau": self.tau,
            "W": self.region.W.tolist(),
            "r": self.region.r,
            "constrain_input": self.region.constrain_input,
            "gamma": self.gamma.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Certificate":
        region = EllipsoidBallRegion(np.array(d["W"]), d["r"], d["constrain_input"])
        return cls(np.array(d["P"]), np.array(d["K"]), np.array(d["lambda"]), d["tau"],
                   region, np.array(d["gamma"]))
