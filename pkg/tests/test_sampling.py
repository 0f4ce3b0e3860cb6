import numpy as np
import pytest

from oracles import brute_force_gamma, pendulum_delta
from sampledlmi.model import BoxRegion, EllipsoidBallRegion
from sampledlmi.sampling import (BoundViolation, SamplingError, compute_gamma, grid_counts, infer_structure,
                                 load_samples_csv, sample_grid, save_samples_csv)


def zero_oracle(dx, du):
    return np.zeros(2)


def test_example1_grid_size(ex1):
    spec, samples, _ = ex1
    assert samples.n == 31 ** 3
    assert samples.grid_shape == (31, 31, 31)
    origin = np.flatnonzero(np.all(samples.points == 0.0, axis=1))
    assert origin.size == 1


def test_samples_cover_box_without_duplicates(ex1):
    spec, samples, _ = ex1
    pts = samples.points
    assert np.all(pts[:, :2] >= spec.X.lower) and np.all(pts[:, :2] <= spec.X.upper)
    assert np.all(pts[:, 2:] >= spec.U.lower) and np.all(pts[:, 2:] <= spec.U.upper)
    assert np.unique(pts, axis=0).shape[0] == samples.n


def test_even_count_rejected():
    with pytest.raises(ValueError):
        sample_grid(zero_oracle, BoxRegion.symmetric([1, 1]), BoxRegion.symmetric([1]), (4, 5, 5))


def test_zero_oracle_samples_exactly_zero():
    s = sample_grid(zero_oracle, BoxRegion.symmetric([1, 1]), BoxRegion.symmetric([1]), (5, 5, 3))
    assert np.all(s.delta == 0.0)
    st = infer_structure(s)
    assert st.nw == 0 and st.B2.shape == (2, 0)


def test_oracle_failure_names_coordinates():
    def bad(dx, du):
        if dx[0] > 0.9:
            raise FloatingPointError("boom")
        return np.zeros(2)

    with pytest.raises(SamplingError, match=r"dx=\[1\.0"):
        sample_grid(bad, BoxRegion.symmetric([1, 1]), BoxRegion.symmetric([1]), (3, 3, 3))


def test_nonzero_equilibrium_rejected():
    with pytest.raises(SamplingError):
        sample_grid(lambda dx, du: np.ones(2), BoxRegion.symmetric([1, 1]), BoxRegion.symmetric([1]),
                    (3, 3, 3))


def test_example1_structure(ex1):
    _, _, st = ex1
    assert st.nonzero_rows == (0, 1)
    assert np.array_equal(st.B2, np.eye(2))
    assert st.dependence_mask.tolist() == [[True, True, True], [True, False, True]]
    assert np.array_equal(st.C[1], [[1, 0], [0, 0], [0, 0]])
    assert np.array_equal(st.D[1], [[0], [0], [1]])


def test_example2_structure(ex2):
    _, _, st = ex2
    assert st.nonzero_rows == (1,)
    assert np.array_equal(st.B2, [[0.0], [1.0]])
    assert st.dependence_mask.tolist() == [[True, False, False]]
    assert not np.any(st.D[0])


def test_structure_idempotent(ex1):
    spec, samples, st = ex1
    # Rebuild an oracle from the inferred realization: only the drivers of each row are passed through.
    def masked(dx, du):
        out = np.zeros(2)
        z = np.concatenate([dx, du])
        for i, row in enumerate(st.nonzero_rows):
            zz = np.where(st.dependence_mask[i], z, 0.0)
            out[row] = spec.oracle(zz[:2], zz[2:])[row]
        return out

    again = infer_structure(sample_grid(masked, spec.X, spec.U, (7, 7, 7)))
    assert again.nonzero_rows == st.nonzero_rows
    assert np.array_equal(again.dependence_mask, st.dependence_mask)


def test_gamma_dense_grid_against_brute_force():
    X, U = BoxRegion.symmetric([0.5, 0.5]), BoxRegion.symmetric([0.5])
    s = sample_grid(lambda dx, du: np.array([0.0, dx[0] ** 2 - du[0] ** 2]), X, U, (201, 3, 201))
    st = infer_structure(s)
    region = EllipsoidBallRegion(10.0 * np.eye(2), 0.5)  # only the box and the input ball bind
    g = compute_gamma(s, st, region)
    pts = [(a, b) for a in s.axes[0] for b in s.axes[2]]
    ref = brute_force_gamma(lambda p: p[0] ** 2 - p[1] ** 2, lambda p: p, pts)
    assert g.gamma[0] == ref
    assert abs(g.gamma[0] - 0.5) < 1e-12


def test_gamma_zero_oracle():
    s = sample_grid(lambda dx, du: np.zeros(2), BoxRegion.symmetric([1, 1]), BoxRegion.symmetric([1]),
                    (5, 5, 3))
    g = compute_gamma(s, infer_structure(s), EllipsoidBallRegion(np.eye(2), 1.0))
    assert g.gamma.shape == (0,)


def test_gamma_pendulum():
    X, U = BoxRegion.symmetric([1.5, 1.5]), BoxRegion.symmetric([1.0])
    s = sample_grid(lambda dx, du: np.array([0.0, pendulum_delta(dx[0])]), X, U, (301, 3, 3))
    st = infer_structure(s)
    region = EllipsoidBallRegion(np.sqrt(2) * np.eye(2), 1.0, "off")
    g = compute_gamma(s, st, region)
    a = np.linspace(1e-6, np.sqrt(2), 20001)
    ref = np.max(9.8 * np.abs(np.sin(a) - a) / a)
    assert abs(ref - 2.955) < 5e-4
    assert g.gamma[0] <= ref + 1e-12
    assert g.gamma[0] > ref - 0.02  # grid spacing 0.01 below the analytic maximum


def test_gamma_attains_max_and_bounds_every_sample(ex1):
    _, samples, st = ex1
    region = EllipsoidBallRegion(0.4 * np.eye(2), 0.3)
    g = compute_gamma(samples, st, region)
    for i in range(st.nw):
        k = g.argmax[i]
        v = st.C[i] @ samples.dx[k] + st.D[i] @ samples.du[k]
        assert abs(samples.delta[k, st.nonzero_rows[i]]) / np.linalg.norm(v) == g.gamma[i]


def test_gamma_reproducible(ex1):
    _, samples, st = ex1
    region = EllipsoidBallRegion(0.3 * np.eye(2), 0.2)
    assert np.array_equal(compute_gamma(samples, st, region).gamma, compute_gamma(samples, st, region).gamma)


def test_gamma_empty_region_error(ex1):
    _, samples, st = ex1
    with pytest.raises(SamplingError, match="channel 0"):
        compute_gamma(samples, st, EllipsoidBallRegion(0.01 * np.eye(2), 0.01))


def test_unbounded_ratio_reported():
    # Delta_2 depends on x2 only through a constant offset away from the origin: w != 0 where v = 0.
    def oracle(dx, du):
        return np.array([0.0, dx[0] ** 2 + (0.1 if dx[1] > 0.5 else 0.0)])

    s = sample_grid(oracle, BoxRegion.symmetric([1, 1]), BoxRegion.symmetric([1]), (5, 5, 3))
    st = infer_structure(s)
    st_x1_only = type(st)(st.nonzero_rows, st.B2, (st.C[0] * [[1], [0], [0]],), st.D, st.dependence_mask)
    with pytest.raises(BoundViolation) as exc:
        compute_gamma(s, st_x1_only, EllipsoidBallRegion(2 * np.eye(2), 1.0))
    assert exc.value.channel == 0 and exc.value.dx[1] > 0.5


def test_csv_round_trip(tmp_path, ex2):
    _, samples, _ = ex2
    path = tmp_path / "s.csv"
    save_samples_csv(samples, path)
    header = path.read_text().splitlines()[0]
    assert header == "dx_1,dx_2,du_1,delta_1,delta_2"
    back = load_samples_csv(path)
    assert np.array_equal(back.dx, samples.dx) and np.array_equal(back.delta, samples.delta)
    assert back.grid_shape == samples.grid_shape


def test_csv_rejects_shuffled_rows(tmp_path, ex2):
    _, samples, _ = ex2
    path = tmp_path / "s.csv"
    save_samples_csv(samples, path)
    lines = path.read_text().splitlines()
    lines[1], lines[2] = lines[2], lines[1]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError):
        load_samples_csv(path)


def test_grid_counts():
    assert grid_counts("31", 3) == [31, 31, 31]
    assert grid_counts("101,101,3", 3) == [101, 101, 3]
