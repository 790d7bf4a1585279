import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rafanet.errors import ConfigError, DimensionError
from rafanet.ffn import PyramidConfig, fuse_paths, init_ffn_params, path_a, path_b, pyramid_bins, spatial_pyramid_pool
from rafanet.gradcheck import gradient_check
from rafanet.rng import Rng
from rafanet.tensor import Tensor


def _identity_params(c):
    p = init_ffn_params(c, Rng(0))
    for path in "AB":
        p[f"ffn.sepconv_{path}.depthwise"].data = np.tile([[0.0], [1.0], [0.0]], (1, c))
        p[f"ffn.sepconv_{path}.pointwise"].data = np.eye(c)
        p[f"ffn.sepconv_{path}.bias"].data = np.zeros(c)
    return p


def _bins_bruteforce(G, levels):
    """Every (level, cell row, cell col) enumerated from the window formula."""
    out = []
    for n in levels:
        for a in range(n):
            for b in range(n):
                r0, r1 = (G * a) // n, -((-G * (a + 1)) // n)
                c0, c1 = (G * b) // n, -((-G * (b + 1)) // n)
                out.append(sorted(r * G + c for r in range(r0, r1) for c in range(c0, c1)))
    return out


def test_level_one_is_global_mean(rng):
    F = rng.normal(size=(16, 3))
    out = spatial_pyramid_pool(Tensor(F), PyramidConfig(levels=(1,))).data
    np.testing.assert_allclose(out, F.mean(0, keepdims=True))


def test_level_three_on_three_grid_is_identity(rng):
    F = rng.normal(size=(9, 2))
    np.testing.assert_allclose(spatial_pyramid_pool(Tensor(F), PyramidConfig(levels=(3,))).data, F)


def test_hand_example_fourteen_bins():
    F = np.arange(1.0, 10.0)[:, None]
    out = spatial_pyramid_pool(Tensor(F), PyramidConfig()).data[:, 0]
    assert out.shape == (14,)
    np.testing.assert_allclose(out[0], 5.0)
    np.testing.assert_allclose(out[1:5], [3.0, 4.0, 6.0, 7.0])
    np.testing.assert_allclose(out[5:], np.arange(1.0, 10.0))


@pytest.mark.parametrize("G", [2, 3, 4, 5, 6, 7])
def test_bins_match_bruteforce(G):
    levels = tuple(n for n in (1, 2, 3) if n <= G)
    assert [sorted(b.tolist()) for b in pyramid_bins(G, levels)] == _bins_bruteforce(G, levels)


@pytest.mark.parametrize("G", [3, 6])
def test_fixed_length(G, rng):
    out = spatial_pyramid_pool(Tensor(rng.normal(size=(G * G, 4))), PyramidConfig())
    assert out.shape == (14, 4)


@given(st.integers(0, 10_000), st.sampled_from([3, 4, 6]), st.sampled_from(["mean", "max"]))
def test_bins_are_convex(seed, G, mode):
    F = np.random.default_rng(seed).normal(0, 5, (G * G, 3))
    out = spatial_pyramid_pool(Tensor(F), PyramidConfig(mode=mode)).data
    assert np.all(out >= F.min(0) - 1e-12) and np.all(out <= F.max(0) + 1e-12)


def test_every_region_covered_on_each_level():
    for G in range(3, 8):
        bins = pyramid_bins(G, (2, 3))
        assert set(np.concatenate(bins[:4])) == set(range(G * G))
        assert set(np.concatenate(bins[4:])) == set(range(G * G))


def test_level_larger_than_grid():
    with pytest.raises(ConfigError):
        spatial_pyramid_pool(Tensor(np.ones((4, 1))), PyramidConfig(levels=(1, 3)))


def test_pyramid_config_validation():
    assert PyramidConfig().bins == 14
    with pytest.raises(ConfigError):
        PyramidConfig(levels=())
    with pytest.raises(ConfigError):
        PyramidConfig(mode="median")


def test_path_a_identity_on_constants():
    p = _identity_params(3)
    v = np.array([0.5, 0.0, 2.0])
    np.testing.assert_allclose(path_a(Tensor(np.tile(v, (9, 1))), PyramidConfig(), p).data, v)


def test_path_a_bias_only():
    p = _identity_params(3)
    p["ffn.sepconv_A.pointwise"].data = np.zeros((3, 3))
    p["ffn.sepconv_A.bias"].data = np.array([0.7, -0.2, 0.0])
    out = path_a(Tensor(np.random.default_rng(0).normal(size=(9, 3))), PyramidConfig(), p).data
    np.testing.assert_allclose(out, [0.7, 0.0, 0.0])


def test_path_b_constants_and_length():
    p = _identity_params(2)
    v = np.array([1.5, 0.25])
    seq, mean = path_b(Tensor(np.tile(v, (9, 1))), p)
    assert seq.shape == (9, 2)
    np.testing.assert_allclose(seq.data, np.tile(v, (9, 1)))
    np.testing.assert_allclose(mean.data, v)


def test_path_b_single_region():
    p = _identity_params(2)
    seq, mean = path_b(Tensor(np.array([[1.0, 2.0]])), p)
    assert seq.shape == (1, 2)
    np.testing.assert_allclose(seq.data, [[1.0, 2.0]])


def test_fuse_cancellation_gives_bias():
    p = init_ffn_params(4, Rng(0))
    p["ffn.fuse_ln.bias"].data = np.array([0.1, 0.2, 0.3, 0.4])
    a = np.array([1.0, -2.0, 3.0, 0.5])
    np.testing.assert_allclose(fuse_paths(Tensor(a), Tensor(-a), p).data, [0.1, 0.2, 0.3, 0.4])


def test_fuse_normalised_and_commutative(rng):
    p = init_ffn_params(6, Rng(0))
    a, b = rng.normal(size=6), rng.normal(size=6)
    x = fuse_paths(Tensor(a), Tensor(b), p).data
    assert abs(x.mean()) <= 1e-9 and abs(x.std() - 1) <= 1e-9
    np.testing.assert_array_equal(x, fuse_paths(Tensor(b), Tensor(a), p).data)


def test_fuse_shape_mismatch():
    p = init_ffn_params(4, Rng(0))
    with pytest.raises(DimensionError):
        fuse_paths(Tensor(np.ones(4)), Tensor(np.ones(3)), p)


@pytest.mark.parametrize("mode", ["mean", "max"])
def test_gradient_check_both_paths_and_fusion(mode, rng):
    c = 4
    p = init_ffn_params(c, Rng(1))
    g = np.random.default_rng(2)
    for t in p.values():
        t.data = np.asarray(t.data + g.normal(0, 0.3, t.shape))
    regions = Tensor(rng.normal(size=(2, 9, c)), requires_grad=True)
    w = Tensor(rng.normal(size=(2, c)))
    cfg = PyramidConfig(mode=mode)

    def loss():
        s_hat = path_a(regions, cfg, p)
        _, t_hat = path_b(regions, p)
        return (fuse_paths(s_hat, t_hat, p) * w).sum()

    report = gradient_check(loss, dict(p, regions=regions), tol=1e-4)
    assert report.passed, report.errors
