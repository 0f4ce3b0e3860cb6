"""Grid sampling of a black-box nonlinearity and empirical norm bounds.

The nonlinearity is only ever touched through :func:`sample_grid`; structure
inference and the per-region bounds work on the stored samples.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Tuple

import numpy as np

from .model import BoxRegion, EllipsoidBallRegion, LftSystem, membership_mask

DeltaOracle = Callable[[np.ndarray, np.ndarray], np.ndarray]

EQUILIBRIUM_TOL = 1e-12
DEFAULT_GRID = 31
DEFAULT_V_FLOOR = 1e-9
DEFAULT_ZERO_TOL = 1e-10


class SamplingError(RuntimeError):
    pass


class BoundViolation(SamplingError):
    """A sample with (numerically) zero ``v_i`` but nonzero ``w_i``."""

    def __init__(self, channel: int, dx, du, w):
        self.channel = channel
        self.dx = np.asarray(dx)
        self.du = np.asarray(du)
        self.w = float(w)
        super().__init__(
            f"channel {channel}: |w|={abs(w):.3g} with vanishing input at dx={self.dx.tolist()}, "
            f"du={self.du.tolist()} (unbounded ratio)")


@dataclass(frozen=True)
class SampleSet:
    """Full tensor grid of oracle evaluations over ``S = X x U``.

    Rows are in lexicographic grid order (first coordinate slowest).
    """

    dx: np.ndarray
    du: np.ndarray
    delta: np.ndarray
    axes: Tuple[np.ndarray, ...]

    def __post_init__(self):
        for a in (self.dx, self.du, self.delta):
            a.setflags(write=False)
        n = int(np.prod([len(a) for a in self.axes]))
        if not (self.dx.shape[0] == self.du.shape[0] == self.delta.shape[0] == n):
            raise ValueError("sample arrays do not match the grid size")

    @property
    def n(self) -> int:
        return self.dx.shape[0]

    @property
    def nx(self) -> int:
        return self.dx.shape[1]

    @property
    def nu(self) -> int:
        return self.du.shape[1]

    @property
    def grid_shape(self) -> Tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def points(self) -> np.ndarray:
        """Stacked ``[dx, du]`` rows, shape ``(N, nx + nu)``."""
        return np.hstack([self.dx, self.du])


@dataclass(frozen=True)
class InferredStructure:
    nonzero_rows: Tuple[int, ...]
    B2: np.ndarray
    C: Tuple[np.ndarray, ...]
    D: Tuple[np.ndarray, ...]
    dependence_mask: np.ndarray

    @property
    def nw(self) -> int:
        return len(self.nonzero_rows)

    def apply(self, sys: LftSystem) -> LftSystem:
        return sys.with_structure(self.B2, self.C, self.D)

    def summary(self, nx: int) -> str:
        names = [f"x{j + 1}" for j in range(nx)]
        names += [f"u{j + 1}" for j in range(self.dependence_mask.shape[1] - nx)]
        lines = [f"n_w = {self.nw}"]
        for i, row in enumerate(self.nonzero_rows):
            drivers = [names[c] for c in np.flatnonzero(self.dependence_mask[i])]
            lines.append(f"  Delta_{i + 1} -> state row x{row + 1}, drivers {{{', '.join(drivers)}}}")
        return "\n".join(lines)


@dataclass(frozen=True)
class NormBounds:
    gamma: np.ndarray
    region: EllipsoidBallRegion
    n_used: np.ndarray
    argmax: List[int] = field(default_factory=list, compare=False)


def _grid_axis(lo: float, hi: float, n: int) -> np.ndarray:
    ax = np.linspace(lo, hi, n)
    # Pin the middle node when the box is symmetric so the origin is hit exactly.
    if n % 2 == 1 and np.isclose(lo, -hi):
        ax[n // 2] = 0.0
    return ax


def sample_grid(oracle: DeltaOracle, X: BoxRegion, U: BoxRegion, grid: Sequence[int]) -> SampleSet:
    """Evaluate ``oracle`` on the tensor grid over ``X x U``.

    ``grid`` holds one odd count (at least 3) per state and input coordinate.
    """
    nx, nu = X.dim, U.dim
    grid = [int(g) for g in grid]
    if len(grid) != nx + nu:
        raise ValueError(f"grid needs {nx + nu} counts, got {len(grid)}")
    if any(g < 3 or g % 2 == 0 for g in grid):
        raise ValueError(f"grid counts must be odd and >= 3, got {grid}")
    lows = np.concatenate([X.lower, U.lower])
    highs = np.concatenate([X.upper, U.upper])
    axes = tuple(_grid_axis(lo, hi, g) for lo, hi, g in zip(lows, highs, grid))
    if not all(np.any(ax == 0.0) for ax in axes):
        raise ValueError("grid does not contain the origin; use a symmetric box or adjust counts")

    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    dx, du = pts[:, :nx].copy(), pts[:, nx:].copy()
    delta = np.empty((pts.shape[0], nx))
    for k in range(pts.shape[0]):
        try:
            val = np.asarray(oracle(dx[k], du[k]), dtype=float).reshape(-1)
        except Exception as exc:
            raise SamplingError(f"oracle failed at dx={dx[k].tolist()}, du={du[k].tolist()}: {exc}") from exc
        if val.shape != (nx,) or not np.all(np.isfinite(val)):
            raise SamplingError(
                f"oracle returned invalid value {val.tolist()} at dx={dx[k].tolist()}, du={du[k].tolist()}")
        delta[k] = val
    origin = np.asarray(oracle(np.zeros(nx), np.zeros(nu)), dtype=float)
    if np.max(np.abs(origin), initial=0.0) > EQUILIBRIUM_TOL:
        raise SamplingError(f"oracle is not zero at the equilibrium: {origin.tolist()}")
    return SampleSet(dx, du, delta, axes)


def infer_structure(samples: SampleSet, zero_tol: float = DEFAULT_ZERO_TOL) -> InferredStructure:
    """Find the nonzero rows of Delta and the coordinates driving each.

    ``zero_tol`` is relative to the largest ``|Delta|`` entry in the samples.
    """
    if samples.n == 0:
        raise ValueError("empty sample set")
    nx, nu = samples.nx, samples.nu
    scale = float(np.max(np.abs(samples.delta), initial=0.0))
    tol = zero_tol * scale
    if scale == 0.0:
        rows: Tuple[int, ...] = ()
    else:
        rows = tuple(int(r) for r in np.flatnonzero(np.max(np.abs(samples.delta), axis=0) > tol))
    nw = len(rows)
    shape = samples.grid_shape
    mask = np.zeros((nw, nx + nu), dtype=bool)
    for i, row in enumerate(rows):
        w = samples.delta[:, row].reshape(shape)
        for c in range(nx + nu):
            mask[i, c] = bool(np.any(np.abs(np.diff(w, axis=c)) > tol))
    B2 = np.zeros((nx, nw))
    C, D = [], []
    for i, row in enumerate(rows):
        B2[row, i] = 1.0
        Ci = np.zeros((nx + nu, nx))
        Di = np.zeros((nx + nu, nu))
        for c in np.flatnonzero(mask[i]):
            if c < nx:
                Ci[c, c] = 1.0
            else:
                Di[c, c - nx] = 1.0
        C.append(Ci)
        D.append(Di)
    return InferredStructure(rows, B2, tuple(C), tuple(D), mask)


def channel_data(samples: SampleSet, structure: InferredStructure, i: int):
    """``(v_i, w_i)`` for every sample, shapes ``(N, nx + nu)`` and ``(N,)``."""
    v = samples.dx @ structure.C[i].T + samples.du @ structure.D[i].T
    w = samples.delta[:, structure.nonzero_rows[i]]
    return v, w


def compute_gamma(samples: SampleSet, structure: InferredStructure, region: EllipsoidBallRegion,
                  v_floor: float = DEFAULT_V_FLOOR, constrain_input: bool = None) -> NormBounds:
    """Empirical bound ``gamma_i = max |w_i| / ||v_i||`` over samples in ``region``.

    When ``constrain_input`` is false the input ball is ignored and every
    sampled input is retained.
    """
    if constrain_input is None:
        constrain_input = region.constrain_input != "off"
    inside = membership_mask(region, samples.dx, samples.du, constrain_input)
    idx = np.flatnonzero(inside)
    gamma = np.zeros(structure.nw)
    n_used = np.zeros(structure.nw, dtype=int)
    argmax = []
    for i in range(structure.nw):
        v, w = channel_data(samples, structure, i)
        v, w = v[idx], w[idx]
        vn = np.linalg.norm(v, axis=1)
        small = vn < v_floor
        bad = np.flatnonzero(small & (np.abs(w) > v_floor))
        if bad.size:
            k = idx[bad[0]]
            raise BoundViolation(i, samples.dx[k], samples.du[k], samples.delta[k, structure.nonzero_rows[i]])
        keep = ~small
        if not np.any(keep):
            raise SamplingError(f"no samples retained for channel {i} in the region")
        ratios = np.abs(w[keep]) / vn[keep]
        j = int(np.argmax(ratios))
        gamma[i] = ratios[j]
        n_used[i] = int(np.count_nonzero(keep))
        argmax.append(int(idx[np.flatnonzero(keep)[j]]))
    gamma.setflags(write=False)
    return NormBounds(gamma, region, n_used, argmax)


def save_samples_csv(samples: SampleSet, path) -> None:
    nx, nu = samples.nx, samples.nu
    header = ([f"dx_{j + 1}" for j in range(nx)] + [f"du_{j + 1}" for j in range(nu)]
              + [f"delta_{j + 1}" for j in range(nx)])
    data = np.hstack([samples.dx, samples.du, samples.delta])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in data:
            writer.writerow([format(v, ".17g") for v in row])


def load_samples_csv(path) -> SampleSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader], dtype=float)
    nx = sum(h.startswith("dx_") for h in header)
    nu = sum(h.startswith("du_") for h in header)
    if len(header) != 2 * nx + nu:
        raise ValueError(f"{path}: unexpected header {header}")
    axes = tuple(np.unique(data[:, c]) for c in range(nx + nu))
    mesh = np.meshgrid(*axes, indexing="ij")
    expected = np.stack([m.reshape(-1) for m in mesh], axis=1)
    if expected.shape[0] != data.shape[0] or not np.array_equal(expected, data[:, :nx + nu]):
        raise ValueError(f"{path}: rows do not form a full grid in lexicographic order")
    return SampleSet(data[:, :nx].copy(), data[:, nx:nx + nu].copy(), data[:, nx + nu:].copy(), axes)


def grid_counts(spec: str, n: int) -> List[int]:
    """Parse ``"31,31,31"`` (or a single count broadcast to ``n``)."""
    parts = [int(p) for p in spec.split(",") if p.strip()]
    if len(parts) == 1:
        parts = parts * n
    return parts

