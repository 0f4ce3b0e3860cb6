"""Matrix inequalities as symmetric block matrices affine in a decision vector.

:class:`Affine` is a small expression type: a constant matrix plus one
coefficient matrix per decision-vector index. It supports the handful of
operations needed to write the synthesis inequalities in block form
(sums, products with constant matrices, transposes and ``bmat``).

The ``build_*`` functions create or extend a :class:`DecisionSpace`; pass the
same space to several builders to assemble a joint problem. Any variable
argument may instead be given as a numeric array, in which case it enters the
block as a constant.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .model import SYMMETRY_RTOL, LftSystem, inverse_spd, symmetrize

log = logging.getLogger(__name__)

# Margin used for the strict inequalities (``< 0`` becomes ``<= -eps I``).
STRICT_EPS = 1e-6
MAX_COND_R0 = 1e10


class Affine:
    """Matrix-valued affine function ``const + sum_k x[k] * coef[k]``."""

    __array_ufunc__ = None  # let numpy defer ``ndarray @ Affine`` to us

    def __init__(self, const, coef: Optional[Dict[int, np.ndarray]] = None):
        self.const = np.atleast_2d(np.asarray(const, dtype=float))
        self.coef = {} if coef is None else coef

    @property
    def shape(self):
        return self.const.shape

    @property
    def T(self) -> "Affine":
        return Affine(self.const.T, {k: v.T for k, v in self.coef.items()})

    def _combine(self, other, sign: float) -> "Affine":
        if isinstance(other, Affine):
            if other.shape != self.shape:
                raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
            coef = dict(self.coef)
            for k, v in other.coef.items():
                coef[k] = coef[k] + sign * v if k in coef else sign * v
            return Affine(self.const + sign * other.const, coef)
        other = np.asarray(other, dtype=float)
        return Affine(self.const + sign * np.broadcast_to(other, self.shape), dict(self.coef))

    def __add__(self, other):
        return self._combine(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __rsub__(self, other):
        return (-self)._combine(other, 1.0)

    def __neg__(self):
        return Affine(-self.const, {k: -v for k, v in self.coef.items()})

    def __mul__(self, s):
        s = float(s)
        return Affine(s * self.const, {k: s * v for k, v in self.coef.items()})

    __rmul__ = __mul__

    def __matmul__(self, M):
        if isinstance(M, Affine):
            if M.coef and self.coef:
                raise TypeError("product of two non-constant affine expressions is not affine")
            if not self.coef:
                return self.const @ M
            M = M.const
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return Affine(self.const @ M, {k: v @ M for k, v in self.coef.items()})

    def __rmatmul__(self, M):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return Affine(M @ self.const, {k: M @ v for k, v in self.coef.items()})

    def scale(self, M) -> "Affine":
        """Scalar (1x1) expression times a constant matrix."""
        if self.shape != (1, 1):
            raise ValueError("scale() needs a 1x1 expression")
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return Affine(self.const[0, 0] * M, {k: v[0, 0] * M for k, v in self.coef.items()})

    def evaluate(self, x) -> np.ndarray:
        out = self.const.copy()
        for k, v in self.coef.items():
            out += x[k] * v
        return out

    def sym(self) -> "Affine":
        """``(E + E^T) / 2`` on every term."""
        return Affine(0.5 * (self.const + self.const.T),
                      {k: 0.5 * (v + v.T) for k, v in self.coef.items()})

    def is_symmetric(self) -> bool:
        return np.array_equal(self.const, self.const.T) and all(
            np.array_equal(v, v.T) for v in self.coef.values())

    @staticmethod
    def bmat(rows: Sequence[Sequence]) -> "Affine":
        """Assemble a block matrix; ``None`` entries are zero blocks."""
        heights = []
        for row in rows:
            h = [np.atleast_2d(np.asarray(e)).shape[0] if not isinstance(e, Affine) else e.shape[0]
                 for e in row if e is not None]
            if not h:
                raise ValueError("a block row needs at least one non-None entry")
            heights.append(h[0])
        widths = []
        for j in range(len(rows[0])):
            w = [rows[i][j].shape[1] if isinstance(rows[i][j], Affine)
                 else np.atleast_2d(np.asarray(rows[i][j])).shape[1]
                 for i in range(len(rows)) if rows[i][j] is not None]
            if not w:
                raise ValueError("a block column needs at least one non-None entry")
            widths.append(w[0])
        roff = np.concatenate([[0], np.cumsum(heights)]).astype(int)
        coff = np.concatenate([[0], np.cumsum(widths)]).astype(int)
        const = np.zeros((roff[-1], coff[-1]))
        coef: Dict[int, np.ndarray] = {}
        for i, row in enumerate(rows):
            for j, e in enumerate(row):
                if e is None or heights[i] == 0 or widths[j] == 0:
                    continue
                sl = (slice(roff[i], roff[i + 1]), slice(coff[j], coff[j + 1]))
                if isinstance(e, Affine):
                    const[sl] = e.const
                    for k, v in e.coef.items():
                        if k not in coef:
                            coef[k] = np.zeros_like(const)
                        coef[k][sl] = v
                else:
                    const[sl] = np.broadcast_to(np.asarray(e, dtype=float), (heights[i], widths[j]))
        return Affine(const, coef)


def _scalar_expr(v) -> Affine:
    return v if isinstance(v, Affine) else Affine(np.reshape(np.asarray(v, dtype=float), (1, 1)))


def as_affine(v) -> Affine:
    return v if isinstance(v, Affine) else Affine(v)


@dataclass
class _Var:
    kind: str
    shape: tuple
    start: int
    size: int


class DecisionSpace:
    """Named scalar, vector and matrix variables laid out in one flat vector.

    Symmetric matrices store their upper triangle only.
    """

    def __init__(self):
        self._vars: Dict[str, _Var] = {}
        self.size = 0

    def __contains__(self, name):
        return name in self._vars

    @property
    def names(self) -> List[str]:
        return list(self._vars)

    def _add(self, name, kind, shape, size) -> Affine:
        if name in self._vars:
            raise ValueError(f"variable {name!r} already defined")
        self._vars[name] = _Var(kind, shape, self.size, size)
        self.size += size
        return self.var(name)

    def scalar(self, name: str) -> Affine:
        return self.get(name) if name in self else self._add(name, "scalar", (1, 1), 1)

    def vector(self, name: str, n: int) -> Affine:
        """Column vector of ``n`` scalars; index it with :meth:`entries`."""
        return self.get(name) if name in self else self._add(name, "vector", (n, 1), n)

    def symmetric(self, name: str, n: int) -> Affine:
        return self.get(name) if name in self else self._add(name, "symmetric", (n, n), n * (n + 1) // 2)

    def full(self, name: str, rows: int, cols: int) -> Affine:
        return self.get(name) if name in self else self._add(name, "full", (rows, cols), rows * cols)

    def get(self, name: str) -> Affine:
        return self.var(name)

    def var(self, name: str) -> Affine:
        v = self._vars[name]
        coef = {}
        for off, E in enumerate(self._basis(v)):
            coef[v.start + off] = E
        return Affine(np.zeros(v.shape), coef)

    def entries(self, name: str) -> List[Affine]:
        """Scalar expressions for each entry of a vector variable."""
        v = self._vars[name]
        return [Affine([[0.0]], {v.start + i: np.ones((1, 1))}) for i in range(v.size)]

    def index(self, name: str) -> slice:
        v = self._vars[name]
        return slice(v.start, v.start + v.size)

    @staticmethod
    def _basis(v: _Var):
        if v.kind == "symmetric":
            n = v.shape[0]
            for i in range(n):
                for j in range(i, n):
                    E = np.zeros((n, n))
                    E[i, j] = E[j, i] = 1.0
                    yield E
        else:
            for flat in range(v.size):
                E = np.zeros(v.shape)
                E.flat[flat] = 1.0
                yield E

    def value(self, name: str, x) -> np.ndarray:
        v = self._vars[name]
        seg = np.asarray(x[v.start:v.start + v.size], dtype=float)
        if v.kind == "symmetric":
            n = v.shape[0]
            M = np.zeros((n, n))
            M[np.triu_indices(n)] = seg
            return M + np.triu(M, 1).T
        if v.kind == "scalar":
            return float(seg[0])
        if v.kind == "vector":
            return seg.copy()
        return seg.reshape(v.shape)

    def pack(self, values: Dict[str, object]) -> np.ndarray:
        x = np.zeros(self.size)
        for name, val in values.items():
            v = self._vars[name]
            val = np.asarray(val, dtype=float)
            if v.kind == "symmetric":
                x[v.start:v.start + v.size] = symmetrize(val, name)[np.triu_indices(v.shape[0])]
            else:
                x[v.start:v.start + v.size] = val.reshape(-1)
        return x

    def describe(self) -> str:
        return "\n".join(f"{n}: {v.kind} {v.shape} -> x[{v.start}:{v.start + v.size}]"
                         for n, v in self._vars.items())


@dataclass
class AffineBlock:
    """``expr >= 0`` (sense ``"psd"``) or ``expr <= -eps I`` (sense ``"nsd"``)."""

    name: str
    expr: Affine
    sense: str
    space: DecisionSpace
    eps: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sense not in ("psd", "nsd"):
            raise ValueError("sense must be 'psd' or 'nsd'")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        mats = [self.expr.const] + list(self.expr.coef.values())
        asym = max(np.linalg.norm(M - M.T) / max(1.0, np.linalg.norm(M)) for M in mats)
        assert asym <= SYMMETRY_RTOL, f"block {self.name} is not symmetric (relative asymmetry {asym:.3g})"
        self.expr = self.expr.sym()

    @property
    def size(self) -> int:
        return self.expr.shape[0]

    def evaluate(self, x) -> np.ndarray:
        return self.expr.evaluate(x)

    def standard_form(self):
        """``(F0, {k: Fk})`` with the constraint written as ``F0 + sum x_k Fk >= 0``."""
        if self.sense == "psd":
            return self.expr.const.copy(), {k: v.copy() for k, v in self.expr.coef.items()}
        return (-self.expr.const - self.eps * np.eye(self.size),
                {k: -v for k, v in self.expr.coef.items()})

    def extreme_eigenvalue(self, x) -> float:
        w = np.linalg.eigvalsh(self.evaluate(x))
        return float(w[-1] if self.sense == "nsd" else w[0])

    def violation(self, x) -> float:
        """Positive when the constraint (including its margin) fails."""
        e = self.extreme_eigenvalue(x)
        return e + self.eps if self.sense == "nsd" else -e

    def dump(self) -> str:
        lines = [f"block {self.name}: size {self.size}, sense {self.sense}, eps {self.eps:g}",
                 f"  constant |F0|_F = {np.linalg.norm(self.expr.const):.6g}"]
        names = {}
        for n in self.space.names:
            sl = self.space.index(n)
            for k in range(sl.start, sl.stop):
                names[k] = f"{n}[{k - sl.start}]"
        for k in sorted(self.expr.coef):
            lines.append(f"  {names.get(k, k)}: |F|_F = {np.linalg.norm(self.expr.coef[k]):.6g}")
        return "\n".join(lines)


def _check_gamma(gamma) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=float).reshape(-1)
    if np.any(gamma < 0) or not np.all(np.isfinite(gamma)):
        raise ValueError(f"gamma must be finite and nonnegative, got {gamma}")
    return gamma


def _active_channels(gamma: np.ndarray) -> List[int]:
    dropped = [i for i, g in enumerate(gamma) if g == 0]
    if dropped:
        log.warning("gamma is zero for channels %s; dropping their norm-bound terms", dropped)
    return [i for i, g in enumerate(gamma) if g > 0]


def _stability_block(sys: LftSystem, top_left, top_mid, lam_exprs, theta_cols, gamma):
    """Common 3x3 layout shared by the ``P``-form and ``R``-form inequalities."""
    nx, nw, nv = sys.nx, sys.nw, sys.nx + sys.nu
    if nw == 0:
        return as_affine(top_left)
    active = _active_channels(gamma)
    Lam = Affine.bmat([[(-lam_exprs[i]) if i == j else np.zeros((1, 1)) for j in range(nw)]
                       for i in range(nw)])
    if not active:
        return Affine.bmat([[top_left, top_mid], [as_affine(top_mid).T, Lam]])
    Theta = Affine.bmat([[theta_cols[i] for i in active]])
    Xi = Affine.bmat([[(-lam_exprs[i].scale(np.eye(nv) / gamma[i] ** 2)) if i == j else np.zeros((nv, nv))
                       for j in active] for i in active])
    return Affine.bmat([
        [top_left, top_mid, Theta],
        [as_affine(top_mid).T, Lam, np.zeros((nw, nv * len(active)))],
        [Theta.T, np.zeros((nv * len(active), nw)), Xi],
    ])


def build_stability_lmi(sys: LftSystem, K, gamma, space: Optional[DecisionSpace] = None,
                        P=None, lam=None, eps: float = STRICT_EPS) -> AffineBlock:
    """Closed-loop Lyapunov / S-procedure inequality in ``(P, lambda)`` for a fixed gain.

    Off-diagonal terms are ``P B2`` and ``Theta = [lam_i Phi_i]``; the lower
    diagonal blocks are ``-diag(lam)`` and ``-diag(lam_i / gamma_i^2 I)``.
    """
    gamma = _check_gamma(gamma)
    space = DecisionSpace() if space is None else space
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if P is None:
        P = space.symmetric("P", sys.nx)
    elif not isinstance(P, Affine):
        P = Affine(symmetrize(P, "P"))
    if lam is None:
        space.vector("lambda", sys.nw)
        lam_exprs = space.entries("lambda")
    else:
        lam_exprs = [Affine([[l]]) for l in np.asarray(lam, dtype=float).reshape(-1)]
    Acl = sys.A + sys.B1 @ K
    top_left = P @ Acl + Acl.T @ P
    top_mid = P @ sys.B2
    theta = [lam_exprs[i].scale(sys.phi(i, K)) for i in range(sys.nw)]
    expr = _stability_block(sys, top_left, top_mid, lam_exprs, theta, gamma)
    return AffineBlock("stability_P", expr, "nsd", space, eps)


def build_sdp3_stability(sys: LftSystem, lam, gamma, space: Optional[DecisionSpace] = None,
                         R=None, F=None, eps: float = STRICT_EPS) -> AffineBlock:
    """Congruence-transformed stability inequality in ``(R, F)`` for fixed multipliers."""
    gamma = _check_gamma(gamma)
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.shape[0] != sys.nw:
        raise ValueError(f"need {sys.nw} multipliers, got {lam.shape[0]}")
    if np.any(lam <= 0):
        raise ValueError(f"multipliers must be positive, got {lam}")
    space = DecisionSpace() if space is None else space
    R = space.symmetric("R", sys.nx) if R is None else as_affine(R)
    F = space.full("F", sys.nu, sys.nx) if F is None else as_affine(F)
    AR = sys.A @ R + sys.B1 @ F
    top_left = AR + AR.T
    lam_exprs = [Affine([[l]]) for l in lam]
    theta = [(R @ sys.C[i].T + F.T @ sys.D[i].T) * lam[i] for i in range(sys.nw)]
    expr = _stability_block(sys, top_left, sys.B2, lam_exprs, theta, gamma)
    return AffineBlock("stability_R", expr, "nsd", space, eps)


def build_sdp1_stability(sys: LftSystem, gamma, space: Optional[DecisionSpace] = None,
                         R=None, F=None, eps: float = STRICT_EPS) -> AffineBlock:
    """The ``(R, F)`` inequality with every multiplier absorbed (all equal to one)."""
    block = build_sdp3_stability(sys, np.ones(sys.nw), gamma, space, R, F, eps)
    block.name = "stability_R_unit"
    return block


def build_input_bound_lmi(K, W, space: Optional[DecisionSpace] = None, tau2=None) -> AffineBlock:
    """``[[tau^2 I, K], [K^T, W^-1 W^-1]] >= 0``, i.e. ``sigma_max(K W) <= tau``."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    Wi = inverse_spd(np.asarray(W, dtype=float), "W")
    space = DecisionSpace() if space is None else space
    t = space.scalar("tau2") if tau2 is None else _scalar_expr(tau2)
    nu = K.shape[0]
    expr = Affine.bmat([[t.scale(np.eye(nu)), K], [K.T, Wi @ Wi]])
    return AffineBlock("input_bound", expr, "psd", space)


def build_sdp1_gain_lmi(W, space: Optional[DecisionSpace] = None, beta=None, R=None, F=None,
                        nu: Optional[int] = None) -> AffineBlock:
    """Gain bound relaxed about the identity: ``[[beta I, F], [F^T, H + H^T - I]]`` with ``H = W^-1 R``."""
    W = np.asarray(W, dtype=float)
    nx = W.shape[0]
    Wi = inverse_spd(W, "W")
    space = DecisionSpace() if space is None else space
    if F is None:
        if nu is None:
            raise ValueError("nu is required when F is a decision variable")
        F = space.full("F", nu, nx)
    F = as_affine(F)
    nu = F.shape[0]
    beta = space.scalar("beta") if beta is None else _scalar_expr(beta)
    R = space.symmetric("R", nx) if R is None else as_affine(R)
    H = Wi @ R
    expr = Affine.bmat([[beta.scale(np.eye(nu)), F], [F.T, H + H.T - np.eye(nx)]])
    return AffineBlock("gain_young", expr, "psd", space)


def _check_R0(R0) -> np.ndarray:
    R0 = symmetrize(R0, "R0")
    w = np.linalg.eigvalsh(R0)
    if w[0] <= 0:
        raise ValueError("R0 must be positive definite")
    if w[-1] / w[0] > MAX_COND_R0:
        raise ValueError(f"R0 is too ill-conditioned (cond={w[-1] / w[0]:.3g})")
    return R0


def build_sdp3_gain_lmi(W, R0, space: Optional[DecisionSpace] = None, beta=None, R=None, F=None,
                        nu: Optional[int] = None) -> AffineBlock:
    """Gain bound linearised about ``R0``: lower-right block is
    ``H^T H0 + H0^T H - H0^T H0`` with ``H = W^-1 R`` and ``H0 = W^-1 R0``."""
    W = np.asarray(W, dtype=float)
    nx = W.shape[0]
    Wi = inverse_spd(W, "W")
    R0 = _check_R0(R0)
    space = DecisionSpace() if space is None else space
    if F is None:
        if nu is None:
            raise ValueError("nu is required when F is a decision variable")
        F = space.full("F", nu, nx)
    F = as_affine(F)
    nu = F.shape[0]
    beta = space.scalar("beta") if beta is None else _scalar_expr(beta)
    R = space.symmetric("R", nx) if R is None else as_affine(R)
    H = Wi @ R
    H0 = Wi @ R0
    T1 = H.T @ H0 + H0.T @ H - H0.T @ H0
    expr = Affine.bmat([[beta.scale(np.eye(nu)), F], [F.T, T1]])
    return AffineBlock("gain_overbound_R", expr, "psd", space)


def build_sdp2_gain_lmi(W, R0, space: Optional[DecisionSpace] = None, beta=None, K=None, P=None,
                        nu: Optional[int] = None) -> AffineBlock:
    """Gain bound in ``(beta, K, P)`` after the Schur step:

    ``[[beta I, K, 0], [K^T, T3, P], [0, P, R0^-1 W W R0^-1]] >= 0`` with
    ``T3 = W^-1 W^-1 R0 P + P R0 W^-1 W^-1``.
    """
    W = np.asarray(W, dtype=float)
    nx = W.shape[0]
    Wi = inverse_spd(W, "W")
    R0 = _check_R0(R0)
    R0i = np.linalg.inv(R0)
    space = DecisionSpace() if space is None else space
    if K is None:
        if nu is None:
            raise ValueError("nu is required when K is a decision variable")
        K = space.full("K", nu, nx)
    K = as_affine(K)
    nu = K.shape[0]
    beta = space.scalar("beta") if beta is None else _scalar_expr(beta)
    if P is None:
        P = space.symmetric("P", nx)
    elif not isinstance(P, Affine):
        P = Affine(symmetrize(P, "P"))
    M = Wi @ Wi @ R0
    T3 = M @ P + P @ M.T
    corner = R0i @ W @ W @ R0i
    corner = 0.5 * (corner + corner.T)
    expr = Affine.bmat([
        [beta.scale(np.eye(nu)), K, np.zeros((nu, nx))],
        [K.T, T3, P],
        [np.zeros((nx, nu)), P, corner],
    ])
    return AffineBlock("gain_overbound_P", expr, "psd", space)


def lower_bound_block(space: DecisionSpace, name: str, floor: float) -> List[AffineBlock]:
    """``v >= floor`` for a scalar/vector variable or ``V >= floor I`` for a symmetric one."""
    v = space._vars[name]
    if v.kind == "symmetric":
        return [AffineBlock(f"{name}_floor", space.var(name) - floor * np.eye(v.shape[0]), "psd", space)]
    if v.kind == "scalar":
        return [AffineBlock(f"{name}_floor", space.var(name) - floor, "psd", space)]
    return [AffineBlock(f"{name}[{i}]_floor", e - floor, "psd", space)
            for i, e in enumerate(space.entries(name))]


@dataclass
class SchurReport:
    block_psd: bool
    corner_pd: bool
    complement_psd: bool

    @property
    def agree(self) -> bool:
        return self.block_psd == (self.corner_pd and self.complement_psd)


def schur_complement_check(M, split: int, corner: str = "lower", tol: float = 1e-12) -> SchurReport:
    """Compare ``M >= 0`` with the corner/complement test for ``M = [[A, B], [B^T, C]]``.

    ``split`` is the size of the upper-left block ``A``. With ``corner="lower"``
    the test is ``C > 0`` and ``A - B C^-1 B^T >= 0``; ``"upper"`` swaps roles.
    """
    M = symmetrize(M, "M")
    A, B, C = M[:split, :split], M[:split, split:], M[split:, split:]
    if corner == "upper":
        A, B, C = C, B.T, A
    wc = np.linalg.eigvalsh(C)
    scale = max(1.0, np.max(np.abs(M)))
    if np.min(np.abs(wc)) <= tol * scale:
        raise np.linalg.LinAlgError("designated corner is singular")
    comp = A - B @ np.linalg.solve(C, B.T)
    return SchurReport(
        block_psd=bool(np.linalg.eigvalsh(M)[0] >= -tol * scale),
        corner_pd=bool(wc[0] > 0),
        complement_psd=bool(np.linalg.eigvalsh(0.5 * (comp + comp.T))[0] >= -tol * scale),
    )
