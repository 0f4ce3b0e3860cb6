"""Independent checks of a certificate and closed-loop simulation audits.

Nothing here trusts the solver: the matrix inequalities are rebuilt from the
certificate and checked with a dense eigensolver, and trajectories are
integrated against the original nonlinearity rather than its LFT model.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import lmi
from .model import Certificate, LftSystem, inverse_spd
from .sampling import DeltaOracle, InferredStructure

CHECK_EPS = 1e-8
TAU_TOL = 1e-9
DIVERGENCE_NORM = 1e3
DEFAULT_DT = 1e-3
DEFAULT_T_FINAL = 30.0
LYAPUNOV_RTOL = 1e-9


@dataclass
class CertificateReport:
    stability_max_eig: float
    input_bound_min_eig: float
    tau: float
    r: float
    input_constrained: bool
    P_min_eig: float
    lambda_min: float
    eps: float = CHECK_EPS

    @property
    def stability_ok(self) -> bool:
        return self.stability_max_eig <= -self.eps

    @property
    def input_bound_ok(self) -> bool:
        return self.input_bound_min_eig >= -self.eps

    @property
    def radius_ok(self) -> bool:
        return (not self.input_constrained) or self.tau <= self.r + TAU_TOL

    @property
    def positivity_ok(self) -> bool:
        return self.P_min_eig > 0 and self.lambda_min > 0

    @property
    def ok(self) -> bool:
        return self.stability_ok and self.input_bound_ok and self.radius_ok and self.positivity_ok

    def summary(self) -> str:
        parts = [
            f"stability max eig {self.stability_max_eig:.3e} ({'ok' if self.stability_ok else 'FAIL'})",
            f"input bound min eig {self.input_bound_min_eig:.3e} ({'ok' if self.input_bound_ok else 'FAIL'})",
            f"tau {self.tau:.6g} vs r {self.r:.6g}"
            + ("" if self.input_constrained else " (unconstrained)")
            + f" ({'ok' if self.radius_ok else 'FAIL'})",
            f"min eig P {self.P_min_eig:.3e}, min lambda {self.lambda_min:.3e}"
            f" ({'ok' if self.positivity_ok else 'FAIL'})",
        ]
        return "; ".join(parts)

    def to_dict(self) -> dict:
        return {
            "stability_max_eig": self.stability_max_eig,
            "input_bound_min_eig": self.input_bound_min_eig,
            "tau": self.tau,
            "r": self.r,
            "input_constrained": self.input_constrained,
            "P_min_eig": self.P_min_eig,
            "lambda_min": self.lambda_min,
            "ok": self.ok,
        }


def check_certificate(cert: Certificate, sys: LftSystem, eps: float = CHECK_EPS) -> CertificateReport:
    """Re-evaluate the stability and input-bound inequalities at the certificate values."""
    stab = lmi.build_stability_lmi(sys, cert.K, cert.gamma, P=cert.P, lam=cert.lam, eps=0.0)
    smax = float(np.linalg.eigvalsh(stab.evaluate(np.zeros(0)))[-1])
    W = cert.region.W
    ib = lmi.build_input_bound_lmi(cert.K, W, tau2=cert.tau ** 2)
    imin = float(np.linalg.eigvalsh(ib.evaluate(np.zeros(0)))[0])
    lam = np.asarray(cert.lam, dtype=float).reshape(-1)
    return CertificateReport(
        stability_max_eig=smax,
        input_bound_min_eig=imin,
        tau=float(cert.tau),
        r=float(cert.region.r),
        input_constrained=cert.region.constrain_input != "off",
        P_min_eig=float(np.linalg.eigvalsh(cert.P)[0]),
        lambda_min=float(lam.min()) if lam.size else np.inf,
        eps=eps,
    )


class DivergenceError(RuntimeError):
    """Raised when a simulated state leaves the divergence ball; carries the partial run."""

    def __init__(self, trajectory: "Trajectory", message: str):
        self.trajectory = trajectory
        super().__init__(message)


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    V: np.ndarray

    @property
    def final_norm(self) -> float:
        return float(np.linalg.norm(self.x[-1]))

    def state_at(self, time: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.t - time)))
        return self.x[k]


def closed_loop_rhs(sys: LftSystem, K, oracle: DeltaOracle):
    Acl = sys.A + sys.B1 @ np.atleast_2d(K)
    K = np.atleast_2d(K)

    def f(x):
        return Acl @ x + np.asarray(oracle(x, K @ x), dtype=float).reshape(-1)

    return f


def simulate(oracle: DeltaOracle, sys: LftSystem, K, x_init, t_final: float = DEFAULT_T_FINAL,
             dt: float = DEFAULT_DT, P=None, divergence_norm: float = DIVERGENCE_NORM) -> Trajectory:
    """Fixed-step RK4 for ``dx' = (A + B1 K) dx + Delta(dx, K dx)``."""
    if dt <= 0 or t_final <= 0:
        raise ValueError("dt and t_final must be positive")
    K = np.atleast_2d(np.asarray(K, dtype=float))
    f = closed_loop_rhs(sys, K, oracle)
    n = int(round(t_final / dt))
    x = np.empty((n + 1, sys.nx))
    x[0] = np.asarray(x_init, dtype=float).reshape(-1)
    t = dt * np.arange(n + 1)
    last = n
    for k in range(n):
        xk = x[k]
        k1 = f(xk)
        k2 = f(xk + 0.5 * dt * k1)
        k3 = f(xk + 0.5 * dt * k2)
        k4 = f(xk + dt * k3)
        x[k + 1] = xk + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x[k + 1])) or np.linalg.norm(x[k + 1]) > divergence_norm:
            last = k + 1
            break
    traj = _pack(t[:last + 1], x[:last + 1], K, P)
    if last < n:
        raise DivergenceError(traj, f"trajectory from {x[0].tolist()} diverged at t = {t[last]:.4g}")
    return traj


def _pack(t, x, K, P) -> Trajectory:
    u = x @ K.T
    if P is None:
        V = np.full(len(t), np.nan)
    else:
        V = np.einsum("ij,jk,ik->i", x, np.asarray(P), x)
    return Trajectory(t, x, u, V)


def boundary_points(W, m: int) -> np.ndarray:
    """``m`` points on the boundary of ``{x : ||W^-1 x|| <= 1}`` (evenly spaced angles for two states)."""
    W = np.asarray(W, dtype=float)
    nx = W.shape[0]
    if nx == 2:
        th = 2 * np.pi * np.arange(m) / m
        return np.stack([np.cos(th), np.sin(th)], axis=1) @ W.T
    rng = np.random.default_rng(0)
    d = rng.standard_normal((m, nx))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d @ W.T


@dataclass
class AuditReport:
    n_checked: int
    exit_index: Optional[int]
    input_violations: List[int] = field(default_factory=list)
    bound_violations: List[tuple] = field(default_factory=list)
    lyapunov_violations: List[int] = field(default_factory=list)
    max_input: float = 0.0
    max_ratio: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def ok(self) -> bool:
        return not (self.input_violations or self.bound_violations or self.lyapunov_violations)

    def summary(self) -> str:
        out = f"{self.n_checked} steps checked"
        if self.exit_index is not None:
            out += f", left X_c at step {self.exit_index}"
        out += f"; max |u| {self.max_input:.4g}"
        out += f"; bound ratio/gamma {np.round(self.max_ratio, 6).tolist()}"
        if self.input_violations:
            out += f"; input bound fails at step {self.input_violations[0]}"
        if self.bound_violations:
            out += f"; norm bound fails at step {self.bound_violations[0][0]} channel {self.bound_violations[0][1]}"
        if self.lyapunov_violations:
            out += f"; V increases at step {self.lyapunov_violations[0]}"
        return out


def audit_trajectory(traj: Trajectory, cert: Certificate, structure: InferredStructure,
                     oracle: DeltaOracle, bound_rtol: float = 1e-12) -> AuditReport:
    """Check the input radius, the norm bounds and the decrease of ``V`` along a trajectory.

    Only the leading part of the trajectory inside the certified ellipsoid is
    audited. With the input unconstrained the radius test is skipped.
    """
    Wi = inverse_spd(cert.region.W, "W")
    inside = np.linalg.norm(traj.x @ Wi.T, axis=1) <= 1.0 + 1e-12
    out = np.flatnonzero(~inside)
    exit_index = int(out[0]) if out.size else None
    stop = exit_index if exit_index is not None else len(traj.t)
    x, u = traj.x[:stop], traj.u[:stop]
    constrained = cert.region.constrain_input != "off"
    unorm = np.linalg.norm(u, axis=1)
    rep = AuditReport(stop, exit_index, max_input=float(unorm.max(initial=0.0)))
    if constrained:
        rep.input_violations = [int(k) for k in np.flatnonzero(unorm > cert.region.r * (1 + 1e-12))]
    gamma = np.asarray(cert.gamma, dtype=float)
    ratios = np.zeros(structure.nw)
    for k in range(stop):
        d = np.asarray(oracle(x[k], u[k]), dtype=float).reshape(-1)
        for i, row in enumerate(structure.nonzero_rows):
            v = structure.C[i] @ x[k] + structure.D[i] @ u[k]
            vn = float(np.linalg.norm(v))
            w = abs(d[row])
            if w > gamma[i] * vn * (1 + bound_rtol) + 1e-15:
                rep.bound_violations.append((k, i))
            if vn > 0 and gamma[i] > 0:
                ratios[i] = max(ratios[i], w / (gamma[i] * vn))
    rep.max_ratio = ratios
    V = traj.V[:stop]
    if stop > 1 and np.all(np.isfinite(V)):
        dt = float(traj.t[1] - traj.t[0])
        tol = LYAPUNOV_RTOL * float(np.max(V)) * dt
        rep.lyapunov_violations = [int(k) + 1 for k in np.flatnonzero(np.diff(V) >= tol)]
    return rep


def save_trajectory_csv(traj: Trajectory, path) -> None:
    nx, nu = traj.x.shape[1], traj.u.shape[1]
    header = ["t"] + [f"x_{j + 1}" for j in range(nx)] + [f"u_{j + 1}" for j in range(nu)] + ["V"]
    data = np.column_stack([traj.t, traj.x, traj.u, traj.V])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in data:
            w.writerow([format(v, ".17g") for v in row])


def phase_portrait(sys: LftSystem, K, oracle: DeltaOracle, W, n: int = 21, extent: float = 1.0):
    """Closed-loop vector field on a grid covering the bounding box of the ellipsoid.

    Returns ``(X, dX)`` with one row per grid point.
    """
    W = np.asarray(W, dtype=float)
    half = extent * np.sqrt(np.sum(W ** 2, axis=1))
    axes = [np.linspace(-h, h, n) for h in half]
    pts = np.stack([m.reshape(-1) for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    f = closed_loop_rhs(sys, K, oracle)
    return pts, np.array([f(p) for p in pts])


def save_phase_portrait_csv(pts, vel, path) -> None:
    nx = pts.shape[1]
    if nx == 2:
        header = ["x1", "x2", "dx1", "dx2"]
    else:
        header = [f"x{j + 1}" for j in range(nx)] + [f"dx{j + 1}" for j in range(nx)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in np.hstack([pts, vel]):
            w.writerow([format(v, ".17g") for v in row])
