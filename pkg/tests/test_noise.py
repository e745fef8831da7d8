import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from peakonlab.noise import (
    BrownianPath,
    ConstantNoise,
    FourierNoise,
    NoiseBasis,
    coarsen_path,
    derive_seed,
    eval_xi,
    export_path_csv,
    read_path,
    sample_path,
    write_path,
)


def test_eval_examples():
    assert eval_xi(ConstantNoise(0.1), 3.7, 1) == 0
    assert eval_xi(ConstantNoise(0.1), 3.7, 0) == pytest.approx(0.1)
    assert eval_xi(FourierNoise(1, 1, 0, 1, 40), 0.0, 0) == pytest.approx(1.0)
    assert eval_xi(FourierNoise(2, 0, 1, 0.5, 40), 5.0, 2) == pytest.approx(-0.5 * (np.pi / 10) ** 2, rel=1e-13)


def test_eval_rejects_bad_order():
    with pytest.raises(ValueError):
        ConstantNoise(1)(0.0, 3)
    with pytest.raises(ValueError):
        FourierNoise(1, 1, 0, 1, 40)(0.0, -1)


def test_fourier_mode_must_be_positive_integer():
    with pytest.raises(ValueError):
        FourierNoise(0, 1, 0, 1, 40)
    with pytest.raises(ValueError):
        FourierNoise(1.5, 1, 0, 1, 40)


@settings(max_examples=50, deadline=None)
@given(j=st.integers(1, 8), C=st.floats(-2, 2), D=st.floats(-2, 2), xi=st.floats(-2, 2),
       x=st.floats(-100, 100))
def test_fourier_second_derivative_relation(j, C, D, xi, x):
    c = FourierNoise(j, C, D, xi, 40.0)
    k = 2 * np.pi * j / 40.0
    assert c(x, 2) == pytest.approx(-k * k * c(x, 0), abs=1e-12)


def test_fourier_first_derivative_by_finite_difference():
    c = FourierNoise(3, 0.4, -1.2, 0.7, 40.0)
    x, h = np.linspace(0, 40, 17), 1e-5
    np.testing.assert_allclose(c(x, 1), (c(x + h) - c(x - h)) / (2 * h), atol=1e-8)
    np.testing.assert_allclose(c(x, 2), (c(x + h, 1) - c(x - h, 1)) / (2 * h), atol=1e-7)


def test_basis_evaluate_shape():
    b = NoiseBasis([ConstantNoise(1.0), FourierNoise(1, 1, 0, 1, 40)])
    x = np.zeros((4, 3))
    assert b.evaluate(x, 0).shape == (2, 4, 3)
    assert NoiseBasis().evaluate(x).shape == (0, 4, 3)
    assert not b.is_constant
    assert NoiseBasis([ConstantNoise(2)]).is_constant


def test_sample_path_is_reproducible():
    a = sample_path(11, 1e-3, 500, 2)
    b = sample_path(11, 1e-3, 500, 2)
    assert a == b
    assert a.digest() == b.digest()
    c = sample_path(12, 1e-3, 500, 2)
    assert np.any(a.increments != c.increments)


def test_components_are_independent_streams():
    one = sample_path(5, 1e-2, 200, 1)
    two = sample_path(5, 1e-2, 200, 2)
    np.testing.assert_array_equal(one.increments[:, 0], two.increments[:, 0])
    assert abs(np.corrcoef(two.increments.T)[0, 1]) < 0.3


def test_increment_variance():
    dt = 4e-6
    p = sample_path(2024, dt, 100_000)
    assert abs(p.increments.mean()) < 5 * np.sqrt(dt / 1e5)
    assert p.increments.var() == pytest.approx(dt, rel=0.05)


def test_path_is_read_only():
    p = sample_path(1, 0.1, 10)
    with pytest.raises(ValueError):
        p.increments[0, 0] = 1.0


@pytest.mark.parametrize("dt, n", [(0.0, 10), (-1.0, 10), (0.1, 0)])
def test_sample_path_rejects_bad_arguments(dt, n):
    with pytest.raises(ValueError):
        sample_path(0, dt, n)


def test_values_start_at_zero_and_accumulate():
    p = BrownianPath(0, 0.5, np.array([[1.0], [2.0], [-0.5]]))
    np.testing.assert_array_equal(p.values()[:, 0], [0, 1, 3, 2.5])


def test_coarsen_examples():
    p = BrownianPath(3, 0.1, np.array([[1.0], [2.0], [3.0], [4.0]]))
    assert coarsen_path(p, 1) is p
    c = coarsen_path(p, 2)
    np.testing.assert_array_equal(c.increments[:, 0], [3.0, 7.0])
    assert c.dt == pytest.approx(0.2)
    assert c.seed == 3
    with pytest.raises(ValueError):
        coarsen_path(p, 3)
    with pytest.raises(ValueError):
        coarsen_path(p, 0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**64 - 1), M=st.integers(1, 6), N=st.integers(1, 6), blocks=st.integers(1, 20))
def test_coarsen_properties(seed, M, N, blocks):
    p = sample_path(seed, 1e-3, M * N * blocks, 2)
    once = coarsen_path(p, M * N)
    twice = coarsen_path(coarsen_path(p, M), N)
    np.testing.assert_allclose(twice.increments, once.increments, rtol=1e-12, atol=1e-15)
    assert twice.dt == pytest.approx(once.dt)
    # the coarse path visits the fine path at shared times
    np.testing.assert_allclose(once.values()[-1], p.values()[-1], atol=1e-12)
    np.testing.assert_allclose(coarsen_path(p, M).values(), p.values()[::M], atol=1e-12)


def test_coarsened_variance():
    M, dt = 4, 1e-4
    fine = sample_path(77, dt, 100_000 * M)
    coarse = coarsen_path(fine, M)
    n = coarse.n_steps
    var = coarse.increments.var()
    # sample variance of n normals has sd sqrt(2/n) * sigma^2
    assert abs(var - M * dt) < 5 * np.sqrt(2 / n) * M * dt


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(7, 0) == derive_seed(7, 0)
    seeds = {derive_seed(7, r) for r in range(100)}
    assert len(seeds) == 100
    assert all(0 <= s < 2**64 for s in seeds)


def test_binary_round_trip(tmp_path):
    p = sample_path(2**63 + 5, 2.5e-4, 37, 3)
    f = tmp_path / "p.bin"
    write_path(p, f)
    q = read_path(f)
    assert q == p
    data = f.read_bytes()
    assert data[:5] == b"BPATH"
    assert len(data) == 8 + 4 + 8 + 8 + 8 + 4 + 37 * 3 * 8


def test_binary_layout_is_little_endian_row_major(tmp_path):
    p = BrownianPath(9, 0.5, np.array([[1.0, 2.0], [3.0, 4.0]]))
    f = tmp_path / "p.bin"
    write_path(p, f)
    body = np.frombuffer(f.read_bytes()[40:], dtype="<f8")
    np.testing.assert_array_equal(body, [1, 2, 3, 4])


def test_read_rejects_corrupt_files(tmp_path):
    f = tmp_path / "bad.bin"
    f.write_bytes(b"nope")
    with pytest.raises(ValueError):
        read_path(f)
    p = sample_path(1, 0.1, 4)
    write_path(p, f)
    f.write_bytes(f.read_bytes()[:-8])
    with pytest.raises(ValueError, match="expected"):
        read_path(f)
    write_path(p, f)
    f.write_bytes(b"XPATH" + f.read_bytes()[5:])
    with pytest.raises(ValueError, match="not a Brownian"):
        read_path(f)


def test_csv_export(tmp_path):
    p = sample_path(4, 0.1, 5, 2)
    f = tmp_path / "p.csv"
    export_path_csv(p, f)
    lines = f.read_text().splitlines()
    assert lines[0] == "dW0,dW1"
    back = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    np.testing.assert_array_equal(back, p.increments)
