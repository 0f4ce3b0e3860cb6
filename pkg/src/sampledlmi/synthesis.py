"""Iterative controller synthesis over input-radius and ellipsoid-size grids.

Three convex subproblems are alternated:

* ``solve_sdp1`` -- multipliers absorbed into ``(R, F)``, gain bound relaxed
  about the identity. Gives the starting gain.
* ``solve_sdp2`` -- gain fixed, search ``(P, lambda)`` with the gain bound
  linearised about ``R0``.
* ``solve_sdp3`` -- multipliers fixed, search ``(R, F)`` with the gain bound
  linearised about ``R0``.

Each minimises ``beta``, an upper bound on ``sigma_max(K W)^2``.
:func:`synthesize_regions` wraps them in the radius loop and the
bracket-and-bisect search over ``W = alpha * W0``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import lmi, sdp
from .model import BoxRegion, Certificate, EllipsoidBallRegion, LftSystem, inverse_spd
from .sampling import InferredStructure, SampleSet, SamplingError, compute_gamma

log = logging.getLogger(__name__)

FLOOR = 1e-9
MAX_COND_R = 1e10
SOUNDNESS_TOL = 1e-6


def sigma_max(K, W) -> float:
    return float(np.linalg.norm(np.asarray(K) @ np.asarray(W), 2))


@dataclass
class SynthesisConfig:
    W0: Optional[np.ndarray] = None
    alpha0: Optional[float] = None
    r_grid: Sequence[float] = (0.5,)
    n_max: int = 20
    alpha_tol: float = 0.02
    growth: float = 1.3
    constrain_input: str = "auto"
    sdp1_only: bool = False
    max_shrink: int = 30
    tol: float = 1e-8
    max_iter: int = 100

    def __post_init__(self):
        self.r_grid = [float(r) for r in self.r_grid]
        if not self.r_grid or any(r <= 0 for r in self.r_grid):
            raise ValueError("r_grid must be nonempty and positive")
        if any(b <= a for a, b in zip(self.r_grid, self.r_grid[1:])):
            raise ValueError("r_grid must be strictly increasing")
        if self.alpha0 is not None and self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if self.n_max < 1:
            raise ValueError("n_max must be at least 1")
        if self.growth <= 1:
            raise ValueError("growth must exceed 1")
        if self.constrain_input not in ("auto", "on", "off"):
            raise ValueError("constrain_input must be auto, on or off")


@dataclass
class StageResult:
    """Outcome of one SDP; ``values`` holds the named decision matrices."""

    stage: str
    status: str
    beta: float = np.nan
    values: dict = field(default_factory=dict)
    K: Optional[np.ndarray] = None
    solution: Optional[sdp.SdpSolution] = None
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def soundness(self, W) -> Optional[tuple]:
        """``(sigma_max(F R^-1 W), sqrt(beta))`` for the ``(R, F)`` stages."""
        if not self.ok or "R" not in self.values:
            return None
        return sigma_max(self.K, W), float(np.sqrt(max(self.beta, 0.0)))


def _accept(problem: sdp.SdpProblem, sol: sdp.SdpSolution, tol: float) -> bool:
    if sol.x is None:
        return False
    if sol.status == sdp.OPTIMAL:
        return True
    # Stalled but feasible iterates are still usable; the objective is just not tight.
    return sol.status in (sdp.MAX_ITERATIONS, sdp.NUMERICAL_FAILURE) and \
        sdp.check_solution(problem, sol.x, tol).feasible


def _gain_from(R, F) -> np.ndarray:
    w = np.linalg.eigvalsh(R)
    if w[0] <= 0 or w[-1] / w[0] > MAX_COND_R:
        raise np.linalg.LinAlgError(f"R is not safely invertible (eigenvalues {w[0]:.3g}..{w[-1]:.3g})")
    return np.linalg.solve(R, F.T).T


def _run(stage: str, problem: sdp.SdpProblem, names, tol, max_iter) -> StageResult:
    sol = sdp.solve(problem, tol=tol, max_iter=max_iter)
    if not _accept(problem, sol, tol):
        return StageResult(stage, sol.status, solution=sol, message=f"{stage}: solver status {sol.status}")
    space = problem.space
    values = {n: space.value(n, sol.x) for n in names if n in space}
    res = StageResult(stage, "ok", float(space.value("beta", sol.x)), values, solution=sol)
    if "R" in values:
        try:
            res.K = _gain_from(values["R"], values["F"])
        except np.linalg.LinAlgError as exc:
            return StageResult(stage, "ill_conditioned", solution=sol, message=f"{stage}: {exc}")
    return res


def solve_sdp1(sys: LftSystem, W, gamma, tol: float = 1e-8, max_iter: int = 100) -> StageResult:
    """``min beta`` over ``(beta, R, F)`` with unit multipliers and the identity-based gain bound."""
    space = lmi.DecisionSpace()
    beta = space.scalar("beta")
    R = space.symmetric("R", sys.nx)
    F = space.full("F", sys.nu, sys.nx)
    blocks = [
        lmi.build_sdp1_stability(sys, gamma, space, R=R, F=F),
        lmi.build_sdp1_gain_lmi(W, space, beta=beta, R=R, F=F),
    ]
    blocks += lmi.lower_bound_block(space, "R", FLOOR) + lmi.lower_bound_block(space, "beta", FLOOR)
    return _run("sdp1", sdp.SdpProblem.minimize(space, "beta", blocks), ("R", "F"), tol, max_iter)


def solve_sdp2(sys: LftSystem, W, gamma, K, R0, tol: float = 1e-8, max_iter: int = 100) -> StageResult:
    """``min beta`` over ``(beta, P, lambda)`` for the fixed gain ``K``."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    space = lmi.DecisionSpace()
    beta = space.scalar("beta")
    P = space.symmetric("P", sys.nx)
    blocks = [
        lmi.build_stability_lmi(sys, K, gamma, space, P=P),
        lmi.build_sdp2_gain_lmi(W, R0, space, beta=beta, K=K, P=P),
    ]
    blocks += lmi.lower_bound_block(space, "P", FLOOR) + lmi.lower_bound_block(space, "beta", FLOOR)
    if sys.nw:
        blocks += lmi.lower_bound_block(space, "lambda", FLOOR)
    res = _run("sdp2", sdp.SdpProblem.minimize(space, "beta", blocks), ("P", "lambda"), tol, max_iter)
    if res.ok:
        res.K = K
        res.values.setdefault("lambda", np.zeros(0))
    return res


def solve_sdp3(sys: LftSystem, W, gamma, lam, R0, tol: float = 1e-8, max_iter: int = 100) -> StageResult:
    """``min beta`` over ``(beta, R, F)`` for fixed multipliers ``lam``."""
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if np.any(lam <= 0):
        raise ValueError(f"multipliers must be positive, got {lam}")
    space = lmi.DecisionSpace()
    beta = space.scalar("beta")
    R = space.symmetric("R", sys.nx)
    F = space.full("F", sys.nu, sys.nx)
    blocks = [
        lmi.build_sdp3_stability(sys, lam, gamma, space, R=R, F=F),
        lmi.build_sdp3_gain_lmi(W, R0, space, beta=beta, R=R, F=F),
    ]
    blocks += lmi.lower_bound_block(space, "R", FLOOR) + lmi.lower_bound_block(space, "beta", FLOOR)
    return _run("sdp3", sdp.SdpProblem.minimize(space, "beta", blocks), ("R", "F"), tol, max_iter)


@dataclass
class InnerResult:
    K: np.ndarray
    R0: np.ndarray
    iterations: int
    achieved: bool
    stages: List[StageResult]
    message: str = ""


def inner_iteration(sys: LftSystem, W, r: float, gamma, K_init, R0_init, n_max: int,
                    constrain_input: bool = True, tol: float = 1e-8, max_iter: int = 100,
                    on_stage: Optional[Callable[[StageResult, int], None]] = None) -> InnerResult:
    """Alternate the fixed-gain and fixed-multiplier problems to shrink ``sigma_max(K W)``.

    With the input unconstrained the loop always runs ``n_max`` rounds (the
    bound is then only used to reduce control effort).
    """
    K = np.atleast_2d(np.asarray(K_init, dtype=float))
    R0 = np.asarray(R0_init, dtype=float)
    stages: List[StageResult] = []
    c_t = 1
    message = ""
    while c_t <= n_max and (not constrain_input or sigma_max(K, W) >= r):
        try:
            s2 = solve_sdp2(sys, W, gamma, K, R0, tol, max_iter)
        except ValueError as exc:
            s2 = StageResult("sdp2", "error", message=f"sdp2: {exc}")
        stages.append(s2)
        if on_stage:
            on_stage(s2, c_t)
        if not s2.ok:
            message = s2.message
            break
        try:
            R0_next = inverse_spd(s2.values["P"], "P", max_cond=MAX_COND_R)
            s3 = solve_sdp3(sys, W, gamma, s2.values["lambda"], R0_next, tol, max_iter)
        except ValueError as exc:
            s3 = StageResult("sdp3", "error", message=f"sdp3: {exc}")
        stages.append(s3)
        if on_stage:
            on_stage(s3, c_t)
        if not s3.ok:
            message = s3.message
            break
        K, R0 = s3.K, s3.values["R"]
        c_t += 1
    if message and constrain_input:
        return InnerResult(K, R0, c_t - 1, False, stages, message)
    achieved = (not constrain_input) or sigma_max(K, W) <= r
    return InnerResult(K, R0, c_t - 1, achieved, stages, message)


def certify_gain(sys: LftSystem, region: EllipsoidBallRegion, gamma, K, R0, tol: float = 1e-8,
                 max_iter: int = 100):
    """Find ``(P, lambda)`` for a fixed gain and package the certificate, or ``None``."""
    s2 = solve_sdp2(sys, region.W, gamma, K, R0, tol, max_iter)
    if not s2.ok:
        return None, s2
    tau = sigma_max(K, region.W)
    cert = Certificate(s2.values["P"], K, s2.values["lambda"], tau, region, np.asarray(gamma))
    return cert, s2


@dataclass
class Attempt:
    alpha: float
    r: float
    certified: bool
    gamma: np.ndarray
    K: Optional[np.ndarray] = None
    certificate: Optional[Certificate] = None
    sigma: float = np.nan
    iterations: int = 0
    message: str = ""
    data_limited: bool = False


@dataclass
class SynthesisRecord:
    r: float
    alpha_certified: float
    K: Optional[np.ndarray]
    certificate: Optional[Certificate]
    gamma_used: Optional[np.ndarray]
    iterations_used: int
    status: str
    attempts: List[Attempt] = field(default_factory=list)
    bracket: tuple = (np.nan, np.nan)


@dataclass
class SynthesisOutcome:
    records: List[SynthesisRecord]
    best: Optional[int]
    constrain_input: bool
    alpha_cap: float
    log: List[dict] = field(default_factory=list)
    soundness: List[tuple] = field(default_factory=list)

    @property
    def best_record(self) -> Optional[SynthesisRecord]:
        return None if self.best is None else self.records[self.best]


class _Runner:
    """Holds the per-run context so the search helpers stay small."""

    def __init__(self, sys, samples, structure, config, constrain, sink):
        self.sys = sys
        self.samples = samples
        self.structure = structure
        self.config = config
        self.constrain = constrain
        self.sink = sink
        self.log: List[dict] = []
        self.soundness: List[tuple] = []
        self.W0 = np.eye(sys.nx) if config.W0 is None else np.asarray(config.W0, dtype=float)

    def emit(self, **rec):
        for k, v in list(rec.items()):
            if isinstance(v, np.ndarray):
                rec[k] = v.tolist()
            elif isinstance(v, (np.floating, np.integer)):
                rec[k] = v.item()
        self.log.append(rec)
        if self.sink:
            self.sink(rec)

    def attempt(self, alpha: float, r: float) -> Attempt:
        from .verify import check_certificate

        cfg = self.config
        W = alpha * self.W0
        region = EllipsoidBallRegion(W, r, "on" if self.constrain else "off")
        try:
            gamma = compute_gamma(self.samples, self.structure, region, constrain_input=self.constrain).gamma
        except SamplingError as exc:
            self.emit(r=r, alpha=alpha, phase="gamma", status="error", message=str(exc))
            return Attempt(alpha, r, False, np.full(self.sys.nw, np.nan), message=str(exc),
                           data_limited=True)

        def on_stage(st: StageResult, c_t: int):
            snd = st.soundness(W)
            if snd:
                self.soundness.append((st.stage, r, alpha) + snd)
            self.emit(r=r, alpha=alpha, phase=st.stage, status=st.status, beta=st.beta,
                      sigma_KW=sigma_max(st.K, W) if st.K is not None else None,
                      gamma=gamma, iteration=c_t)

        s1 = solve_sdp1(self.sys, W, gamma, cfg.tol, cfg.max_iter)
        on_stage(s1, 0)
        if not s1.ok:
            return Attempt(alpha, r, False, gamma, message=s1.message or "sdp1 infeasible")
        K, R0 = s1.K, s1.values["R"]
        iters = 0
        if not cfg.sdp1_only:
            inner = inner_iteration(self.sys, W, r, gamma, K, R0, cfg.n_max, self.constrain, cfg.tol,
                                    cfg.max_iter, on_stage)
            K, R0, iters = inner.K, inner.R0, inner.iterations
            if not inner.achieved:
                return Attempt(alpha, r, False, gamma, K, sigma=sigma_max(K, W), iterations=iters,
                               message=inner.message or "sigma_max(K W) > r after n_max rounds")
        elif self.constrain and sigma_max(K, W) > r:
            return Attempt(alpha, r, False, gamma, K, sigma=sigma_max(K, W), message="sigma_max(K W) > r")
        try:
            cert, s2 = certify_gain(self.sys, region, gamma, K, R0, cfg.tol, cfg.max_iter)
        except ValueError as exc:
            cert, s2 = None, StageResult("certify", "error", message=str(exc))
        self.emit(r=r, alpha=alpha, phase="certify", status=s2.status, beta=s2.beta,
                  sigma_KW=sigma_max(K, W), gamma=gamma, iteration=iters)
        if cert is None:
            return Attempt(alpha, r, False, gamma, K, sigma=sigma_max(K, W), iterations=iters,
                           message=s2.message or "certificate problem infeasible")
        report = check_certificate(cert, self.sys)
        if not report.ok:
            return Attempt(alpha, r, False, gamma, K, cert, sigma_max(K, W), iters,
                           message="certificate check failed: " + report.summary())
        return Attempt(alpha, r, True, gamma, K, cert, sigma_max(K, W), iters)

    def search(self, r: float, cap: float) -> SynthesisRecord:
        cfg = self.config
        attempts: List[Attempt] = []

        def test(alpha):
            a = self.attempt(alpha, r)
            attempts.append(a)
            self.emit(r=r, alpha=alpha, phase="attempt", status="certified" if a.certified else "failed",
                      sigma_KW=a.sigma, gamma=a.gamma, iteration=a.iterations, message=a.message)
            return a

        alpha0 = cfg.alpha0 if cfg.alpha0 is not None else 0.05 * cap
        alpha = min(alpha0, cap)
        good: Optional[Attempt] = None
        hi = np.nan
        a = test(alpha)
        # A region smaller than the sample spacing holds no data; only growing can help.
        while a.data_limited and a.alpha < cap:
            a = test(min(a.alpha * cfg.growth, cap))
        if a.certified:
            good = a
            while good.alpha < cap:
                a = test(min(good.alpha * cfg.growth, cap))
                if a.certified:
                    good = a
                else:
                    hi = a.alpha
                    break
        else:
            hi = a.alpha
            for _ in range(cfg.max_shrink):
                a = test(hi / cfg.growth)
                if a.certified:
                    good = a
                    break
                if a.data_limited:
                    break
                hi = a.alpha
        if good is None:
            return SynthesisRecord(r, 0.0, None, None, None, 0, "failed", attempts, (0.0, hi))
        while np.isfinite(hi) and (hi - good.alpha) > cfg.alpha_tol * good.alpha:
            a = test(0.5 * (good.alpha + hi))
            if a.certified:
                good = a
            else:
                hi = a.alpha
        return SynthesisRecord(r, good.alpha, good.K, good.certificate, good.gamma, good.iterations,
                               "certified", attempts, (good.alpha, hi))


def synthesize_regions(sys: LftSystem, samples: SampleSet, structure: InferredStructure, X: BoxRegion,
                   config: SynthesisConfig, U: Optional[BoxRegion] = None,
                   log_sink: Optional[Callable[[dict], None]] = None) -> SynthesisOutcome:
    """Largest certified ellipsoid for each input radius; best over the radius grid.

    ``sys`` carries the nominal ``A`` and ``B1``; the nonlinearity channels are
    taken from ``structure``. ``U``, when given, drops radii whose ball leaves it.
    """
    sys = structure.apply(sys)
    constrain = {"on": True, "off": False}.get(config.constrain_input, sys.inputs_matter())
    W0 = np.eye(sys.nx) if config.W0 is None else np.asarray(config.W0, dtype=float)
    cap = X.inscribed_scale(W0)
    runner = _Runner(sys, samples, structure, config, constrain, log_sink)
    radii = list(config.r_grid)
    if U is not None:
        r_m = U.inscribed_radius()
        radii = [r for r in radii if r <= r_m * (1 + 1e-12)]
        if not radii:
            raise ValueError(f"every radius in r_grid exceeds the input box (r_m = {r_m:g})")
    if not constrain and len(radii) > 1:
        # The radius only enters through the input ball, which is inactive here.
        radii = radii[-1:]
    records = [runner.search(r, cap) for r in radii]
    certified = [i for i, rec in enumerate(records) if rec.status == "certified"]
    best = max(certified, key=lambda i: (records[i].alpha_certified, -i)) if certified else None
    return SynthesisOutcome(records, best, constrain, cap, runner.log, runner.soundness)
