"""Dense primal-dual interior-point solver for small semidefinite programs.

Problems are ``minimize c^T x`` subject to a list of :class:`AffineBlock`
constraints. Internally every block is put in the form ``G x + s = h`` with
``s`` positive semidefinite, and the solver runs a Mehrotra predictor-corrector
path-following method on the homogeneous self-dual embedding with
Nesterov-Todd scaling. The Schur complement system is dense and factored by
Cholesky. The embedding gives infeasibility certificates for free: a dual
direction ``z >= 0`` with ``G^T z = 0`` and ``<h, z> < 0`` proves the
constraints cannot all hold.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import linalg

from .lmi import AffineBlock, DecisionSpace

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITERATIONS = "max_iterations"
NUMERICAL_FAILURE = "numerical_failure"

STEP = 0.99
TAU_FLOOR = 1e-100


@dataclass
class SdpProblem:
    space: DecisionSpace
    objective: np.ndarray
    blocks: List[AffineBlock]

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).reshape(-1)
        if self.objective.shape[0] != self.space.size:
            raise ValueError(f"objective has length {self.objective.shape[0]}, space has {self.space.size}")
        for b in self.blocks:
            if b.space is not self.space:
                raise ValueError(f"block {b.name} was built in a different decision space")
            bad = [k for k in b.expr.coef if not 0 <= k < self.space.size]
            if bad:
                raise ValueError(f"block {b.name} references unknown variables {bad}")

    @classmethod
    def minimize(cls, space: DecisionSpace, name: str, blocks) -> "SdpProblem":
        """Minimize the scalar variable ``name``."""
        c = np.zeros(space.size)
        c[space.index(name)] = 1.0
        return cls(space, c, list(blocks))

    def conic_data(self):
        """Per block: ``G`` of shape ``(n, m, m)`` and ``h`` of shape ``(m, m)``."""
        n = self.space.size
        data = []
        for b in self.blocks:
            F0, Fk = b.standard_form()
            G = np.zeros((n, b.size, b.size))
            for k, v in Fk.items():
                G[k] = -v
            data.append((G, F0))
        return data


@dataclass
class BlockCheck:
    name: str
    sense: str
    extreme_eigenvalue: float
    violation: float


@dataclass
class CheckReport:
    objective: float
    blocks: List[BlockCheck]
    tol: float

    @property
    def max_violation(self) -> float:
        return max((b.violation for b in self.blocks), default=-np.inf)

    @property
    def feasible(self) -> bool:
        return self.max_violation <= self.tol

    def __str__(self):
        lines = [f"objective = {self.objective:.10g}"]
        for b in self.blocks:
            kind = "max" if b.sense == "nsd" else "min"
            lines.append(f"  {b.name:<22s} {kind} eig {b.extreme_eigenvalue:+.3e}  violation {b.violation:+.3e}")
        return "\n".join(lines)


def check_solution(problem: SdpProblem, x, tol: float = 1e-8) -> CheckReport:
    """Evaluate every block at ``x`` directly; no solver state is used."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != problem.space.size:
        raise ValueError(f"x has length {x.shape[0]}, expected {problem.space.size}")
    checks = []
    for b in problem.blocks:
        e = b.extreme_eigenvalue(x)
        checks.append(BlockCheck(b.name, b.sense, e, e + b.eps if b.sense == "nsd" else -e))
    return CheckReport(float(problem.objective @ x), checks, tol)


@dataclass
class SdpSolution:
    status: str
    x: Optional[np.ndarray]
    objective_value: float
    max_block_violation: float
    iterations: int
    gap: float = np.nan
    primal_residual: float = np.nan
    dual_residual: float = np.nan
    certificate_residual: float = np.nan
    history: list = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def _inner(a, b) -> float:
    return float(sum(np.vdot(x, y) for x, y in zip(a, b)))


def _nt_scaling(S, Z):
    """Return ``(R, Rit, lam)`` with ``R^-1 S R^-T = R^T Z R = diag(lam)`` and ``Rit = R^-T``."""
    Ls = np.linalg.cholesky(S)
    Lz = np.linalg.cholesky(Z)
    U, lam, Vt = np.linalg.svd(Lz.T @ Ls)
    isq = 1.0 / np.sqrt(lam)
    R = (Ls @ Vt.T) * isq
    Rit = (Lz @ U) * isq
    return R, Rit, lam


def _lyap_div(lam, B):
    """Solve ``lam o X = B`` for the symmetrized product with diagonal ``lam``."""
    return 2.0 * B / (lam[:, None] + lam[None, :])


def _max_step(lam, D) -> float:
    """Largest ``t`` with ``diag(lam) + t D >= 0``."""
    isq = 1.0 / np.sqrt(lam)
    e = np.linalg.eigvalsh((D * isq[:, None]) * isq[None, :])[0]
    return np.inf if e >= 0 else -1.0 / e


def _sym(M):
    return 0.5 * (M + M.T)


def solve(problem: SdpProblem, tol: float = 1e-8, max_iter: int = 100) -> SdpSolution:
    """Minimize ``problem.objective @ x`` over the block constraints.

    Stopping rule: primal and dual residuals (relative to the data norms) below
    ``tol`` and either the absolute or the relative duality gap below ``tol``.
    """
    c = problem.objective
    n = c.shape[0]
    data = problem.conic_data()
    Gs = [G for G, _ in data]
    hs = [h for _, h in data]
    dims = [h.shape[0] for h in hs]
    degree = sum(dims)
    cnorm = max(1.0, np.linalg.norm(c))
    hnorm = max(1.0, np.sqrt(sum(np.sum(h * h) for h in hs)))

    def Gx(x):
        return [np.tensordot(x, G, axes=1) for G in Gs]

    def GTz(Zs):
        return sum(np.tensordot(G, Z, axes=([1, 2], [0, 1])) for G, Z in zip(Gs, Zs))

    def factor(H):
        try:
            return linalg.cho_factor(H, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError):
            reg = 1e-13 * max(1.0, np.trace(H) / max(n, 1))
            return linalg.cho_factor(H + reg * np.eye(n), lower=True, check_finite=True)

    # Least-squares start shifted into the cone interior by a multiple of I.
    try:
        H0 = sum(np.tensordot(G, G, axes=([1, 2], [1, 2])) for G in Gs) if n else np.zeros((0, 0))
        fac = factor(H0)
        x = linalg.cho_solve(fac, GTz(hs))
        Ss = [h - g for h, g in zip(hs, Gx(x))]
        Zs = Gx(-linalg.cho_solve(fac, c))
    except (linalg.LinAlgError, ValueError):
        return SdpSolution(NUMERICAL_FAILURE, None, np.nan, np.nan, 0)
    Ss = [_sym(S) for S in Ss]
    Zs = [_sym(Z) for Z in Zs]

    def shift(Ms):
        lo = min(np.linalg.eigvalsh(M)[0] for M in Ms)
        nrm = np.sqrt(sum(np.sum(M * M) for M in Ms))
        if lo < 1e-8 * max(1.0, nrm):
            t = 1.0 + max(0.0, -lo)
            Ms = [M + t * np.eye(M.shape[0]) for M in Ms]
        return Ms

    Ss, Zs = shift(Ss), shift(Zs)
    tau, kappa = 1.0, 1.0
    history = []
    status = MAX_ITERATIONS
    it = 0
    last = {}

    for it in range(max_iter + 1):
        gap_abs = _inner(Ss, Zs)
        mu = (gap_abs + tau * kappa) / (degree + 1)
        rx = GTz(Zs) + c * tau
        rz = [g + S - h * tau for g, S, h in zip(Gx(x), Ss, hs)]
        cx = float(c @ x)
        hz = _inner(hs, Zs)
        rt = kappa + cx + hz
        if not TAU_FLOOR < tau < np.inf:
            # tau collapsed without either infeasibility certificate converging
            status = NUMERICAL_FAILURE
            break
        pcost, dcost = cx / tau, -hz / tau
        pres = np.sqrt(sum(np.sum(r * r) for r in rz)) / hnorm / tau
        dres = np.linalg.norm(rx) / cnorm / tau
        gap = gap_abs / tau ** 2
        if pcost < 0:
            relgap = gap / -pcost
        elif dcost > 0:
            relgap = gap / dcost
        else:
            relgap = np.inf
        pinf = np.linalg.norm(GTz(Zs)) / cnorm / -hz if hz < 0 else np.inf
        dinf = (np.sqrt(sum(np.sum(m * m) for m in [g + S for g, S in zip(Gx(x), Ss)])) / hnorm / -cx
                if cx < 0 else np.inf)
        history.append(dict(it=it, pcost=pcost, dcost=dcost, gap=gap, pres=pres, dres=dres, tau=tau, kappa=kappa))
        last = dict(gap=gap, pres=pres, dres=dres, pinf=pinf, hz=hz)

        if pres <= tol and dres <= tol and (gap <= tol or relgap <= tol):
            status = OPTIMAL
            break
        if pinf <= tol:
            status = INFEASIBLE
            break
        if dinf <= tol:
            status = UNBOUNDED
            break
        if it == max_iter:
            status = MAX_ITERATIONS
            break

        try:
            scal = [_nt_scaling(S, Z) for S, Z in zip(Ss, Zs)]
        except np.linalg.LinAlgError:
            status = NUMERICAL_FAILURE
            break
        lams = [lam for _, _, lam in scal]
        Ghat = [np.einsum("ij,kjl,lm->kim", Rit.T, G, Rit) for (_, Rit, _), G in zip(scal, Gs)]
        hhat = [Rit.T @ h @ Rit for (_, Rit, _), h in zip(scal, hs)]
        H = sum(g.reshape(n, -1) @ g.reshape(n, -1).T for g in Ghat)
        try:
            fac = factor(H)
        except (linalg.LinAlgError, ValueError):
            status = NUMERICAL_FAILURE
            break
        gh = sum(np.tensordot(g, hh, axes=([1, 2], [0, 1])) for g, hh in zip(Ghat, hhat))
        hh2 = _inner(hhat, hhat)
        u2 = linalg.cho_solve(fac, c - gh)
        denom_base = float((c + gh) @ u2) + hh2

        def newton(bx, bz, bt, bs, bk):
            """Solve the scaled Newton system; ``bs`` lives in the scaled cone space."""
            Ys = [_lyap_div(lam, B) for lam, B in zip(lams, bs)]
            qs = [Rit.T @ b @ Rit - Y for (_, Rit, _), b, Y in zip(scal, bz, Ys)]
            rhs1 = bx + sum(np.tensordot(g, q, axes=([1, 2], [0, 1])) for g, q in zip(Ghat, qs))
            u1 = linalg.cho_solve(fac, rhs1)
            rhs3 = bt - bk / tau + _inner(hhat, qs)
            dtau = (float((c + gh) @ u1) - rhs3) / (denom_base + kappa / tau)
            dx = u1 - u2 * dtau
            dzs = [np.tensordot(dx, g, axes=1) - hh * dtau - q for g, hh, q in zip(Ghat, hhat, qs)]
            dss = [Y - dz for Y, dz in zip(Ys, dzs)]
            dkappa = (bk - kappa * dtau) / tau
            return dx, [_sym(d) for d in dss], [_sym(d) for d in dzs], dtau, dkappa

        def max_alpha(dss, dzs, dtau, dkappa):
            a = np.inf
            for lam, ds, dz in zip(lams, dss, dzs):
                a = min(a, _max_step(lam, ds), _max_step(lam, dz))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkappa < 0:
                a = min(a, -kappa / dkappa)
            return a

        lamsq = [np.diag(lam * lam) for lam in lams]
        try:
            aff = newton(-rx, [-r for r in rz], -rt, [-m for m in lamsq], -tau * kappa)
            a_aff = min(1.0, max_alpha(*aff[1:]))
            sigma = min(1.0, max(0.0, 1.0 - a_aff)) ** 3
            bs = []
            for lam, m, ds, dz in zip(lams, lamsq, aff[1], aff[2]):
                corr = 0.5 * (ds @ dz + dz @ ds)
                bs.append(-m + sigma * mu * np.eye(len(lam)) - corr)
            bk = -tau * kappa + sigma * mu - aff[3] * aff[4]
            f = 1.0 - sigma
            dx, dss, dzs, dtau, dkappa = newton(-f * rx, [-f * r for r in rz], -f * rt, bs, bk)
        except (linalg.LinAlgError, ValueError, FloatingPointError):
            status = NUMERICAL_FAILURE
            break
        alpha = min(1.0, STEP * max_alpha(dss, dzs, dtau, dkappa))
        if not np.isfinite(alpha) or alpha < 1e-12 or not np.all(np.isfinite(dx)):
            status = NUMERICAL_FAILURE
            break

        x = x + alpha * dx
        Ss = [_sym(R @ (np.diag(lam) + alpha * ds) @ R.T) for (R, _, lam), ds in zip(scal, dss)]
        Zs = [_sym(Rit @ (np.diag(lam) + alpha * dz) @ Rit.T) for (_, Rit, lam), dz in zip(scal, dzs)]
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa

    if status == INFEASIBLE:
        return SdpSolution(status, None, np.inf, np.nan, it, certificate_residual=last["pinf"],
                           history=history)
    if status == UNBOUNDED:
        return SdpSolution(status, None, -np.inf, np.nan, it, history=history)
    xs = x / tau if tau > TAU_FLOOR else np.full_like(x, np.nan)
    if not np.all(np.isfinite(xs)):
        return SdpSolution(NUMERICAL_FAILURE, None, np.nan, np.nan, it, history=history)
    report = check_solution(problem, xs, tol)
    return SdpSolution(status, xs, report.objective, report.max_violation, it, gap=last.get("gap", np.nan),
                       primal_residual=last.get("pres", np.nan), dual_residual=last.get("dres", np.nan),
                       history=history)


def dump_problem(problem: SdpProblem) -> str:
    """Plain-text problem description for cross-checking with other solvers.

    Layout::

        sdp 1
        vars <n>
        objective <c_1> ... <c_n>
        block <name> <m> <psd|nsd> <eps>
        F0 <row-major m*m values>
        F <k> <row-major m*m values>      (one line per nonzero coefficient)
        end
    """
    lines = ["sdp 1", f"vars {problem.space.size}",
             "objective " + " ".join(format(v, ".17g") for v in problem.objective)]
    for b in problem.blocks:
        lines.append(f"block {b.name} {b.size} {b.sense} {b.eps:.17g}")
        lines.append("F0 " + " ".join(format(v, ".17g") for v in b.expr.const.reshape(-1)))
        for k in sorted(b.expr.coef):
            lines.append(f"F {k} " + " ".join(format(v, ".17g") for v in b.expr.coef[k].reshape(-1)))
        lines.append("end")
    return "\n".join(lines) + "\n"


def parse_problem_dump(text: str):
    """Inverse of :func:`dump_problem`: ``(c, blocks)`` with blocks as dicts."""
    it = iter(text.strip().splitlines())
    header = next(it).split()
    if header[:2] != ["sdp", "1"]:
        raise ValueError("not an sdp dump")
    n = int(next(it).split()[1])
    c = np.array([float(v) for v in next(it).split()[1:]])
    blocks = []
    cur = None
    for line in it:
        tok = line.split()
        if tok[0] == "block":
            m = int(tok[2])
            cur = dict(name=tok[1], size=m, sense=tok[3], eps=float(tok[4]), coef={})
        elif tok[0] == "F0":
            cur["F0"] = np.array([float(v) for v in tok[1:]]).reshape(cur["size"], cur["size"])
        elif tok[0] == "F":
            cur["coef"][int(tok[1])] = np.array([float(v) for v in tok[2:]]).reshape(cur["size"], cur["size"])
        elif tok[0] == "end":
            blocks.append(cur)
    if c.shape[0] != n:
        raise ValueError("objective length does not match vars")
    return c, blocks
