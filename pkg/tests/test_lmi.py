import numpy as np
import pytest

from oracles import max_eig, min_eig, scalar_stability_matrix
from sampledlmi import lmi
from sampledlmi.lmi import Affine, AffineBlock, DecisionSpace
from sampledlmi.model import LftSystem

K_REFERENCE = np.array([[-0.7151, -0.6762]])


def scalar_system(A=-1.0, D1=0.0):
    return LftSystem([[A]], [[1.0]], [[1.0]], (np.array([[1.0], [0.0]]),), (np.array([[0.0], [D1]]),))


def two_state_system():
    sel = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    Du = np.array([[0.0], [0.0], [1.0]])
    return LftSystem([[-0.1, 1.0], [0.0, -0.1]], [[1.0], [1.0]], np.eye(2),
                     (sel, sel * [[1], [0], [0]]), (Du, Du))


def at(block, **values):
    return block.evaluate(block.space.pack(values))


def test_stability_block_scalar_hand_assembly():
    block = lmi.build_stability_lmi(scalar_system(), np.zeros((1, 1)), [0.1])
    M = at(block, P=[[1.0]], **{"lambda": [1.0]})
    assert np.array_equal(M, scalar_stability_matrix(1.0, 1.0, 0.1))
    assert np.allclose(M[:3, :3], [[-2, 1, 1], [1, -1, 0], [1, 0, -100]], rtol=1e-14, atol=0)
    assert max_eig(M) < 0
    assert block.size == 1 + 1 + 1 * 2


def test_stability_block_sizes_for_two_states():
    block = lmi.build_stability_lmi(two_state_system(), K_REFERENCE, [0.5, 0.5])
    assert block.size == 2 + 2 + 2 * 3
    assert block.sense == "nsd" and block.eps == lmi.STRICT_EPS


def test_zero_gamma_drops_channel():
    block = lmi.build_stability_lmi(scalar_system(), np.zeros((1, 1)), [0.0])
    M = at(block, P=[[3.0]], **{"lambda": [2.0]})
    assert np.array_equal(M, [[-6.0, 3.0], [3.0, -2.0]])


def test_negative_gamma_rejected():
    with pytest.raises(ValueError):
        lmi.build_stability_lmi(scalar_system(), np.zeros((1, 1)), [-0.1])


def test_asymmetric_block_is_an_assertion():
    with pytest.raises(AssertionError):
        AffineBlock("bad", Affine([[0.0, 1.0], [0.0, 0.0]]), "psd", DecisionSpace())


def test_assembled_blocks_are_exactly_symmetric():
    sys = two_state_system()
    W = 0.4 * np.eye(2)
    blocks = [
        lmi.build_stability_lmi(sys, K_REFERENCE, [0.5, 0.4]),
        lmi.build_sdp1_stability(sys, [0.5, 0.4]),
        lmi.build_sdp3_stability(sys, [2.0, 3.0], [0.5, 0.4]),
        lmi.build_sdp1_gain_lmi(W, nu=1),
        lmi.build_sdp3_gain_lmi(W, np.array([[0.5, 0.1], [0.1, 0.3]]), nu=1),
        lmi.build_sdp2_gain_lmi(W, np.array([[0.5, 0.1], [0.1, 0.3]]), K=K_REFERENCE),
        lmi.build_input_bound_lmi(K_REFERENCE, W),
    ]
    for b in blocks:
        assert b.expr.is_symmetric(), b.name


def test_input_bound_minimal_tau():
    W = 0.508 * np.eye(2)
    sigma = np.linalg.svd(K_REFERENCE @ W, compute_uv=False)[0]
    assert abs(sigma - 0.49996) < 1e-5
    assert min_eig(lmi.build_input_bound_lmi(K_REFERENCE, W, tau2=sigma ** 2).evaluate([])) > -1e-12
    assert min_eig(lmi.build_input_bound_lmi(K_REFERENCE, W, tau2=sigma ** 2 - 0.01).evaluate([])) < 0
    assert min_eig(lmi.build_input_bound_lmi(np.zeros((1, 2)), W, tau2=0.0).evaluate([])) >= 0


def test_input_bound_singular_w():
    with pytest.raises(ValueError):
        lmi.build_input_bound_lmi(K_REFERENCE, np.diag([1.0, 0.0]))


def test_input_bound_is_affine_in_tau2():
    block = lmi.build_input_bound_lmi(K_REFERENCE, np.eye(2))
    assert block.space.names == ["tau2"]
    M0, M1 = block.evaluate([0.0]), block.evaluate([1.0])
    assert np.allclose(block.evaluate([0.3]), M0 + 0.3 * (M1 - M0))


def test_sdp1_stability_scalar_hand_assembly():
    block = lmi.build_sdp1_stability(scalar_system(), [0.1])
    M = at(block, R=[[1.0]], F=[[0.0]])
    assert np.array_equal(M, scalar_stability_matrix(1.0, 1.0, 0.1))
    assert max_eig(M) < 0


def test_sdp1_stability_identity_R_gives_selectors():
    sys = two_state_system()
    block = lmi.build_sdp1_stability(sys, [1.0, 1.0])
    M = at(block, R=np.eye(2), F=np.zeros((1, 2)))
    assert np.array_equal(M[:2, 4:7], sys.C[0].T)
    assert np.array_equal(M[:2, 7:10], sys.C[1].T)


def test_sdp1_stability_unstable_plant_infeasible():
    block = lmi.build_sdp1_stability(scalar_system(A=1.0), [0.0])
    for R in (1e-3, 1.0, 10.0):
        assert max_eig(at(block, R=[[R]], F=[[0.0]])) > 0


def test_sdp1_gain_at_R_equal_W():
    W = np.array([[0.6, 0.1], [0.1, 0.4]])
    KW = K_REFERENCE @ W
    s2 = np.linalg.svd(KW, compute_uv=False)[0] ** 2
    block = lmi.build_sdp1_gain_lmi(W, nu=1)
    M = at(block, beta=s2, R=W, F=KW)
    assert np.allclose(M, np.block([[s2 * np.eye(1), KW], [KW.T, np.eye(2)]]))
    assert min_eig(at(block, beta=s2 * (1 + 1e-6), R=W, F=KW)) >= 0
    assert min_eig(at(block, beta=s2 * (1 - 1e-3), R=W, F=KW)) < 0
    assert min_eig(at(block, beta=0.0, R=W, F=np.zeros((1, 2)))) >= 0


def test_sdp1_gain_needs_positive_beta():
    W = np.eye(2)
    block = lmi.build_sdp1_gain_lmi(W, nu=1)
    assert min_eig(at(block, beta=0.0, R=0.4 * W, F=[[0.1, 0.0]])) < 0


def test_sdp3_stability_unit_multipliers_match_sdp1():
    sys = two_state_system()
    a = lmi.build_sdp3_stability(sys, [1.0, 1.0], [0.5, 0.3])
    b = lmi.build_sdp1_stability(sys, [0.5, 0.3])
    assert np.array_equal(a.expr.const, b.expr.const)
    assert a.expr.coef.keys() == b.expr.coef.keys()
    assert all(np.array_equal(a.expr.coef[k], b.expr.coef[k]) for k in a.expr.coef)


def test_sdp3_stability_scalar_lambda_two():
    block = lmi.build_sdp3_stability(scalar_system(), [2.0], [0.1])
    M = at(block, R=[[1.0]], F=[[0.0]])
    assert np.allclose(M[:3, :3], [[-2, 1, 2], [1, -2, 0], [2, 0, -200]], rtol=1e-14, atol=0)
    assert np.array_equal(M, scalar_stability_matrix(1.0, 2.0, 0.1))
    assert max_eig(M) < 0


def test_sdp3_stability_rejects_zero_multiplier():
    with pytest.raises(ValueError):
        lmi.build_sdp3_stability(scalar_system(), [0.0], [0.1])


def test_sdp3_gain_tight_at_linearisation_point():
    W = np.array([[0.6, 0.1], [0.1, 0.4]])
    R0 = np.array([[0.5, 0.2], [0.2, 0.7]])
    block = lmi.build_sdp3_gain_lmi(W, R0, nu=1)
    M = at(block, beta=0.0, R=R0, F=np.zeros((1, 2)))
    H0 = np.linalg.solve(W, R0)
    assert np.allclose(M[1:, 1:], H0.T @ H0, atol=1e-14)


def test_sdp3_gain_at_W():
    W = 0.5 * np.eye(2)
    KW = K_REFERENCE @ W
    s2 = np.linalg.svd(KW, compute_uv=False)[0] ** 2
    block = lmi.build_sdp3_gain_lmi(W, W, nu=1)
    assert min_eig(at(block, beta=s2 * (1 + 1e-6), R=W, F=KW)) >= 0
    assert min_eig(at(block, beta=s2 * (1 - 1e-3), R=W, F=KW)) < 0


def test_sdp3_gain_underestimates_quadratic(rng):
    W = np.diag([0.5, 0.8])
    Wi = np.linalg.inv(W)
    for _ in range(100):
        a, b = rng.standard_normal((2, 2, 2))
        R, R0 = a @ a.T + 0.1 * np.eye(2), b @ b.T + 0.1 * np.eye(2)
        M = at(lmi.build_sdp3_gain_lmi(W, R0, nu=1), beta=0.0, R=R, F=np.zeros((1, 2)))
        H = Wi @ R
        assert min_eig(H.T @ H - M[1:, 1:]) > -1e-9


def test_sdp3_gain_rejects_indefinite_R0():
    with pytest.raises(ValueError):
        lmi.build_sdp3_gain_lmi(np.eye(2), np.diag([1.0, -1.0]), nu=1)


def test_sdp2_gain_tight_at_inverse():
    W = 0.508 * np.eye(2)
    s2 = np.linalg.svd(K_REFERENCE @ W, compute_uv=False)[0] ** 2
    assert abs(s2 - 0.25) < 1e-3
    block = lmi.build_sdp2_gain_lmi(W, W, K=K_REFERENCE)
    P = np.linalg.inv(W)
    assert min_eig(at(block, beta=s2 * (1 + 1e-6), P=P)) >= 0
    assert min_eig(at(block, beta=s2 * (1 - 1e-3), P=P)) < 0


def test_sdp2_gain_zero_gain():
    W = 0.508 * np.eye(2)
    block = lmi.build_sdp2_gain_lmi(W, W, K=np.zeros((1, 2)))
    M = at(block, beta=0.0, P=np.linalg.inv(W))
    assert min_eig(M[1:, 1:]) >= -1e-12
    assert min_eig(M) >= -1e-12


def test_sdp2_gain_rejects_asymmetric_P():
    with pytest.raises(ValueError):
        lmi.build_sdp2_gain_lmi(np.eye(2), np.eye(2), K=K_REFERENCE, P=np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_sdp2_gain_rejects_singular_R0():
    with pytest.raises(ValueError):
        lmi.build_sdp2_gain_lmi(np.eye(2), np.diag([1.0, 0.0]), K=K_REFERENCE)


def test_schur_small_cases():
    r = lmi.schur_complement_check(np.array([[2.0, 1.0], [1.0, 1.0]]), 1)
    assert r.block_psd and r.corner_pd and r.complement_psd and r.agree
    r = lmi.schur_complement_check(np.array([[1.0, 2.0], [2.0, 1.0]]), 1)
    assert not r.block_psd and not (r.corner_pd and r.complement_psd) and r.agree
    r = lmi.schur_complement_check(np.array([[1.0, 2.0], [2.0, 1.0]]), 1, corner="upper")
    assert r.agree
    with pytest.raises(np.linalg.LinAlgError):
        lmi.schur_complement_check(np.array([[1.0, 0.0], [0.0, 0.0]]), 1)


def test_decision_space_layout():
    sp = DecisionSpace()
    sp.scalar("beta")
    sp.symmetric("R", 3)
    sp.full("F", 2, 3)
    sp.vector("lambda", 2)
    assert sp.size == 1 + 6 + 6 + 2
    ranges = [sp.index(n) for n in sp.names]
    assert [r.start for r in ranges] == [0, 1, 7, 13]
    assert all(a.stop == b.start for a, b in zip(ranges, ranges[1:]))
    R = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 5.0], [3.0, 5.0, 6.0]])
    F = np.arange(6.0).reshape(2, 3)
    x = sp.pack({"beta": 0.5, "R": R, "F": F, "lambda": [1.0, 2.0]})
    assert sp.value("beta", x) == 0.5
    assert np.array_equal(sp.value("R", x), R)
    assert np.array_equal(sp.value("F", x), F)
    assert np.array_equal(sp.value("lambda", x), [1.0, 2.0])
    assert np.array_equal(sp.var("R").evaluate(x), R)


def test_standard_form_margin():
    sp = DecisionSpace()
    p = sp.scalar("p")
    block = AffineBlock("neg", p - 1.0, "nsd", sp, eps=0.25)
    F0, coef = block.standard_form()
    assert np.array_equal(F0, [[0.75]]) and np.array_equal(coef[0], [[-1.0]])
    assert block.violation([0.75]) == 0.0
    assert block.violation([1.0]) > 0


def test_dump_names_variables():
    text = lmi.build_stability_lmi(two_state_system(), K_REFERENCE, [0.5, 0.5]).dump()
    assert "stability_P" in text and "P[0]" in text and "lambda[1]" in text
