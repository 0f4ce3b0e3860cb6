"""Random-instance checks shared by the property tests and the acceptance suite.

Each ``*_margin`` function returns a number that must be nonnegative (up to
the floor the caller chooses) for the property to hold on that instance.
"""

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from sampledlmi import lmi, sdp
from sampledlmi.lmi import Affine, AffineBlock, DecisionSpace
from sampledlmi.model import LftSystem


def random_spd(rng, n, cond=1e2):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.exp(rng.uniform(0.0, np.log(cond), n))
    return (Q * w) @ Q.T


def young_margin(X, Y, S):
    """Smallest eigenvalue of ``X^T S^-1 X + Y^T S Y - X^T Y - Y^T X``."""
    M = X.T @ np.linalg.solve(S, X) + Y.T @ S @ Y - X.T @ Y - Y.T @ X
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


def special_young_margin(W, R, R0):
    """Gap between the exact gain block and the package block linearised about ``R0``.

    The exact lower-right block is ``H^T H`` with ``H = W^-1 R``.
    """
    n = W.shape[0]
    F = np.zeros((1, n))
    H = np.linalg.solve(W, R)
    exact = np.block([[np.zeros((1, 1)), F], [F.T, H.T @ H]])
    lin = lmi.build_sdp3_gain_lmi(W, R0, beta=0.0, R=R, F=F).evaluate(np.zeros(0))
    return float(np.linalg.eigvalsh(exact - lin)[0])


def identity_young_margin(W, R):
    """Gap between the exact gain block and the identity-relaxed block."""
    n = W.shape[0]
    F = np.zeros((1, n))
    H = np.linalg.solve(W, R)
    exact = np.block([[np.zeros((1, 1)), F], [F.T, H.T @ H]])
    rel = lmi.build_sdp1_gain_lmi(W, beta=0.0, R=R, F=F).evaluate(np.zeros(0))
    return float(np.linalg.eigvalsh(exact - rel)[0])


def random_symmetric_with_gap(rng, n, gap=1e-6):
    """Random symmetric matrix, roughly half PSD, with no eigenvalue within ``gap`` of zero."""
    while True:
        G = rng.standard_normal((n, n))
        M = G @ G.T - rng.uniform(0.0, 0.3) * np.trace(G @ G.T) / n * np.eye(n)
        if np.min(np.abs(np.linalg.eigvalsh(M))) > gap:
            return M


def schur_agrees(M, split, corner):
    """Package Schur test versus a direct eigensolver on the whole matrix."""
    rep = lmi.schur_complement_check(M, split, corner)
    direct = bool(np.linalg.eigvalsh(M)[0] >= 0)
    return rep.agree and rep.block_psd == direct


def two_channel_system(rng):
    """``nx = nu = 2``, two channels with random 0/1 selectors (each channel depends on something)."""
    A = rng.standard_normal((2, 2))
    B1 = rng.standard_normal((2, 2))
    B2 = np.eye(2)
    Cs, Ds = [], []
    for _ in range(2):
        while True:
            mask = rng.integers(0, 2, 4).astype(bool)
            if mask.any():
                break
        sel = np.diag(mask.astype(float))
        Cs.append(sel[:, :2])
        Ds.append(sel[:, 2:])
    return LftSystem(A, B1, B2, tuple(Cs), tuple(Ds))


def congruence_pair(rng):
    """Max eigenvalues of the P-form and R-form stability blocks at ``R = P^-1``, ``F = K P^-1``.

    Half of the tuples are built around a Lyapunov solution with multipliers
    and bounds scattered across the feasibility boundary, so both signs occur.
    """
    sys = two_channel_system(rng)
    K = rng.standard_normal((2, 2)) * rng.uniform(0.1, 3.0)
    if rng.random() < 0.5:
        Acl = sys.A + sys.B1 @ K
        shift = max(np.linalg.eigvals(Acl).real) + rng.uniform(0.1, 2.0)
        K = np.linalg.lstsq(sys.B1, Acl - shift * np.eye(2) - sys.A, rcond=None)[0]
        P = solve_continuous_lyapunov((sys.A + sys.B1 @ K).T, -np.eye(2))
        P = 0.5 * (P + P.T)
        lam = 4.0 * np.linalg.norm(P, 2) ** 2 * np.exp(rng.uniform(-0.5, 0.5, 2))
        phi = np.array([np.linalg.norm(sys.phi(i, K), 2) for i in range(2)])
        gamma = rng.uniform(0.1, 2.0, 2) / np.sqrt(4.0 * lam * phi ** 2)
    else:
        P = random_spd(rng, 2)
        lam = np.exp(rng.uniform(-2, 2, 2))
        gamma = np.exp(rng.uniform(-4, 1, 2))
    R = np.linalg.inv(P)
    R = 0.5 * (R + R.T)
    F = K @ R
    mp = lmi.build_stability_lmi(sys, K, gamma, P=P, lam=lam, eps=0.0).evaluate(np.zeros(0))
    mr = lmi.build_sdp3_stability(sys, lam, gamma, R=R, F=F, eps=0.0).evaluate(np.zeros(0))
    return float(np.linalg.eigvalsh(mp)[-1]), float(np.linalg.eigvalsh(mr)[-1])


def raw_problem(c, blocks):
    """``blocks`` is a list of ``(F0, [F_1..F_n], sense)``."""
    space = DecisionSpace()
    space.vector("x", len(c))
    out = []
    for j, (F0, Fs, sense) in enumerate(blocks):
        coef = {k: np.asarray(F, dtype=float) for k, F in enumerate(Fs) if np.any(F)}
        out.append(AffineBlock(f"b{j}", Affine(F0, coef), sense, space))
    return sdp.SdpProblem(space, c, out)


def infeasible_cases():
    space = DecisionSpace()
    p = space.scalar("p")
    a = sdp.SdpProblem(space, [0.0], [AffineBlock("floor", p - 1.0, "psd", space),
                                      AffineBlock("lyap", 2.0 * p + 1.0, "nsd", space)])
    b = raw_problem([1.0], [(np.diag([-1.0, -1.0]), [np.diag([1.0, -1.0])], "psd")])
    c = raw_problem([1.0], [(np.array([[0.0, 1.0], [1.0, 0.0]]), [np.eye(2)], "psd"),
                            (np.array([[0.5]]), [np.array([[-1.0]])], "psd")])
    return [a, b, c]


def diagonal_problem(rng, n):
    """Box-constrained linear objective written as rotated diagonal LMIs.

    ``a <= x <= b`` is imposed through ``Q^T diag(x - a) Q >= 0`` and
    ``diag(b - x) >= 0``; the optimum picks ``a_i`` where ``c_i > 0`` and
    ``b_i`` where ``c_i < 0``.
    """
    a = rng.uniform(-2.0, 2.0, n)
    b = a + rng.uniform(0.5, 3.0, n)
    c = rng.uniform(0.2, 2.0, n) * rng.choice([-1.0, 1.0], n)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    E = [np.diag(np.eye(n)[k]) for k in range(n)]
    lower = (-Q.T @ np.diag(a) @ Q, [Q.T @ Ek @ Q for Ek in E], "psd")
    upper = (np.diag(b), [-Ek for Ek in E], "psd")
    optimum = float(np.sum(np.where(c > 0, c * a, c * b)))
    return raw_problem(c, [lower, upper]), optimum
