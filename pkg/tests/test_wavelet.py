import numpy as np
import pytest

from pat_recon.errors import InvalidArgumentError
from pat_recon.forward import AcquisitionConfig, build_model_matrix
from pat_recon.grid import make_grid, make_sensor_array, shepp_logan
from pat_recon.wavelet import (CsOperator, WaveletBasis, subband_slices, wavelet_analyze,
                               wavelet_synthesize)


def test_dense_basis_is_orthonormal():
    basis = WaveletBasis(8, 16, levels=3)
    phi = np.column_stack([basis.synthesize(e) for e in np.eye(basis.size)])
    assert np.allclose(phi.T @ phi, np.eye(basis.size), atol=1e-13)
    psi = np.column_stack([basis.analyze(e) for e in np.eye(basis.size)])
    assert np.allclose(psi, phi.T, atol=1e-15)


def test_round_trip_and_parseval(rng):
    basis = WaveletBasis(64, 64, levels=3)
    for _ in range(5):
        x = rng.standard_normal(basis.size)
        theta = basis.analyze(x)
        assert np.max(np.abs(basis.synthesize(theta) - x)) < 1e-12
        assert np.max(np.abs(basis.analyze(basis.synthesize(theta)) - theta)) < 1e-12
        assert abs(np.linalg.norm(theta) - np.linalg.norm(x)) < 1e-12 * np.linalg.norm(x)


def test_coarsest_coefficient_gives_constant_image():
    basis = WaveletBasis(8, 8, levels=3)
    theta = np.zeros(basis.size)
    theta[0] = 5.0
    x = basis.synthesize(theta)
    assert np.allclose(x, 5.0 / 2 ** 3, atol=1e-15)
    assert not basis.synthesize(np.zeros(basis.size)).any()


def test_constant_image_full_depth_single_coefficient():
    # one LL coefficient remains only when the decomposition reaches 1x1
    basis = WaveletBasis(8, 8, levels=3)
    theta = basis.analyze(np.full(64, 2.5))
    assert theta[0] == pytest.approx(2.5 * 8)
    assert np.max(np.abs(theta[1:])) < 1e-14


def test_constant_image_partial_depth_no_details():
    basis = WaveletBasis(32, 32, levels=3)
    theta = basis.analyze(np.full(basis.size, 1.5))
    ll = subband_slices(basis)[0][2]
    assert np.allclose(theta[ll], 1.5 * 8)
    assert np.max(np.abs(theta[ll.stop:])) < 1e-14


def test_hand_computed_4x4():
    # 2x2 blocks a=1, b=2 (top row in storage order), c=3, d=4
    img = np.array([[1, 1, 2, 2],
                    [1, 1, 2, 2],
                    [3, 3, 4, 4],
                    [3, 3, 4, 4]], dtype=float)
    theta = wavelet_analyze(img.ravel(), WaveletBasis(4, 4, levels=2))
    # LL = a+b+c+d, LH (smooth in x, detail in y) = a+b-c-d,
    # HL = a-b+c-d, HH = a-b-c+d; level-1 details vanish
    expected = np.zeros(16)
    expected[:4] = [10.0, -4.0, -2.0, 0.0]
    assert np.allclose(theta, expected, atol=1e-14)


def test_subband_layout():
    names = [(n, lvl, shp) for n, lvl, _, shp in subband_slices(WaveletBasis(8, 4, levels=2))]
    assert names == [("LL", 2, (1, 2)), ("LH", 2, (1, 2)), ("HL", 2, (1, 2)), ("HH", 2, (1, 2)),
                     ("LH", 1, (2, 4)), ("HL", 1, (2, 4)), ("HH", 1, (2, 4))]


def test_levels_zero_is_identity(rng):
    basis = WaveletBasis(6, 5, levels=0)
    x = rng.standard_normal(30)
    assert np.array_equal(basis.analyze(x), x)
    assert np.array_equal(basis.synthesize(x), x)


@pytest.mark.parametrize("args", [(12, 16, 3), (16, 16, -1)])
def test_invalid_basis(args):
    with pytest.raises(InvalidArgumentError):
        WaveletBasis(*args)


def test_unsupported_family():
    with pytest.raises(InvalidArgumentError):
        WaveletBasis(8, 8, 1, family="db4")


def test_length_mismatch():
    basis = WaveletBasis(8, 8, 2)
    with pytest.raises(InvalidArgumentError):
        wavelet_analyze(np.zeros(63), basis)
    with pytest.raises(InvalidArgumentError):
        wavelet_synthesize(np.zeros(65), basis)


def test_phantom_is_compressible():
    img = shepp_logan(make_grid(128, 128, 1e-4))
    theta = WaveletBasis(128, 128, 3).analyze(img.values)
    energy = np.sort(theta ** 2)
    small = energy[: int(0.9 * energy.size)].sum()
    assert small < 0.01 * energy.sum()
    assert np.count_nonzero(np.abs(theta) > 1e-6) < 0.2 * theta.size


def test_cs_operator_adjoint(rng):
    grid = make_grid(16, 16, 1e-4)
    model = build_model_matrix(grid, make_sensor_array(1.5e-3, 4), AcquisitionConfig(num_samples=100))
    op = CsOperator(model, WaveletBasis(16, 16, 2))
    assert op.shape == (400, 256)
    for _ in range(5):
        theta = rng.standard_normal(256)
        r = rng.standard_normal(400)
        lhs = op.apply(theta) @ r
        rhs = theta @ op.apply_adjoint(r)
        assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_cs_operator_size_check():
    grid = make_grid(8, 8, 1e-4)
    model = build_model_matrix(grid, make_sensor_array(1e-3, 2), AcquisitionConfig(num_samples=60))
    with pytest.raises(InvalidArgumentError):
        CsOperator(model, WaveletBasis(16, 16, 2))
