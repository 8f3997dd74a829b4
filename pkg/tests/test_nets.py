import numpy as np
import pytest

from udainv import autodiff as ad
from udainv import nets
from udainv.nets import GeneratorSpec


GEN = GeneratorSpec()


def _probe_centroid(img: np.ndarray) -> float:
    cols = np.arange(img.shape[1])
    return float((img * cols[None, :]).sum() / img.sum() / (img.shape[1] - 1))


def test_generate_zero_latent_is_centered():
    img = nets.render(GEN, np.zeros(8))
    assert img.shape == (16, 16)
    # Both blobs sit at the grid center; the intensity centroid is mid-grid.
    assert _probe_centroid(img) == pytest.approx(0.5, abs=0.02)
    assert _probe_centroid(img.T) == pytest.approx(0.5, abs=0.02)
    peak = np.unravel_index(np.argmax(img), img.shape)
    assert peak[0] in (7, 8) and peak[1] in (7, 8)
    assert 0.0 < img.min() < img.max() < 1.0


def test_generate_moving_w0_moves_centroid_right():
    w = np.zeros(8)
    baseline = _probe_centroid(nets.render(GEN, w))
    moved = w.copy()
    moved[0] = 1.5
    assert _probe_centroid(nets.render(GEN, moved)) > baseline


def test_generate_bit_deterministic():
    rng = np.random.default_rng(5)
    w = rng.standard_normal((4, 8))
    np.testing.assert_array_equal(nets.render(GEN, w), nets.render(GEN, w))


def test_generate_rejects_wrong_latent_dim():
    with pytest.raises(ad.ShapeMismatch):
        nets.generate(GEN, np.zeros(5))
    with pytest.raises(ad.ShapeMismatch):
        nets.generate(GEN, np.zeros((2, 9)))


def test_generate_range_and_clamp_inactive():
    rng = np.random.default_rng(17)
    imgs = nets.render(GEN, rng.standard_normal((64, 8)) * 2.0)
    assert imgs.min() > 0.0 and imgs.max() < 1.0


@pytest.mark.parametrize("seed", range(5))
def test_generate_gradient_matches_finite_differences(seed):
    # The scalarization is a seeded random pixel weighting: the plain mean has
    # a near-zero derivative w.r.t. a centered blob's position (its mass is
    # conserved), which degenerates the relative-error denominator.
    rng = np.random.default_rng(seed)
    w = ad.Tensor(rng.standard_normal(8))
    weights = ad.Tensor(rng.uniform(0.5, 1.5, size=(1, 256)))
    err = ad.grad_check(lambda t: ad.mean(ad.mul(nets.generate(GEN, t), weights)),
                        w, step=1e-5)
    assert err < 1e-6


def test_generator_spec_requires_eight_semantic_slots():
    with pytest.raises(ValueError):
        GeneratorSpec(latent_dim=4)


def test_encode_output_dimension():
    e = nets.init_encoder(latent_dim=8, seed=0)
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(3, 256))
    out = nets.encode(e, x)
    assert out.shape == (3, 8)
    single = nets.encode(e, rng.uniform(size=(16, 16)))
    assert single.shape == (1, 8)


def test_encode_shape_mismatch():
    e = nets.init_encoder()
    with pytest.raises(ad.ShapeMismatch):
        nets.encode(e, np.zeros((4, 100)))


def test_encoder_weight_gradients_pass_grad_check():
    e = nets.init_encoder(seed=3)
    rng = np.random.default_rng(3)
    x = rng.uniform(size=(2, 256))

    def loss():
        return ad.mean(ad.square(nets.encode(e, x)))

    err = ad.grad_check_params(loss, e.params(), step=1e-5, max_coords=80, seed=1)
    assert err < 1e-5


def test_lpips_distance_identity_and_symmetry():
    h = nets.init_perceptual_net(seed=0)
    rng = np.random.default_rng(2)
    a = rng.uniform(size=(16, 16))
    b = rng.uniform(size=(16, 16))
    assert nets.lpips_distance(h, a, a) == 0.0
    assert nets.lpips_distance(h, a, b) == pytest.approx(nets.lpips_distance(h, b, a),
                                                         abs=1e-15)
    assert nets.lpips_distance(h, a, b) > 0.0


def test_lpips_rejects_identity_role():
    r = nets.init_identity_net(seed=0)
    x = np.zeros((16, 16))
    with pytest.raises(ValueError, match="identity"):
        nets.lpips_distance(r, x, x)


def test_lpips_monotone_under_mask_area():
    # Majority vote over 100 seeds: a bigger occlusion is perceptually farther.
    h = nets.init_perceptual_net(seed=0)
    wins = 0
    for seed in range(100):
        rng = np.random.default_rng([seed, 13])
        x = rng.uniform(0.2, 1.0, size=(16, 16))
        r0, c0 = rng.integers(0, 10, size=2)
        light = x.copy()
        light[r0:r0 + 2, c0:c0 + 2] = 0.0
        heavy = x.copy()
        heavy[r0:r0 + 6, c0:c0 + 6] = 0.0
        if nets.lpips_distance(h, x, heavy) > nets.lpips_distance(h, x, light):
            wins += 1
    assert wins > 50


def test_identity_embed_unit_norm_and_self_similarity():
    r = nets.init_identity_net(seed=0)
    rng = np.random.default_rng(4)
    x = rng.uniform(size=(16, 16))
    v = nets.identity_embed(r, x)
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)
    assert float(v @ nets.identity_embed(r, x)) == pytest.approx(1.0, abs=1e-12)


def test_identity_embed_unrelated_pairs_below_one():
    r = nets.init_identity_net(seed=0)
    for seed in range(100):
        rng = np.random.default_rng([seed, 21])
        a = nets.identity_embed(r, rng.uniform(size=(16, 16)))
        b = nets.identity_embed(r, rng.uniform(size=(16, 16)))
        assert float(a @ b) < 1.0 - 1e-8


def test_identity_embed_degenerate_input_rule():
    r = nets.init_identity_net(seed=0)
    # Zero all final-layer weights so the activation vector is exactly zero.
    frozen = r.copy(role=nets.ROLE_IDENTITY)
    frozen.weights[-1].values[:] = 0.0
    frozen.biases[-1].values[:] = 0.0
    v = nets.identity_embed(frozen, np.zeros((16, 16)))
    expected = np.zeros(16)
    expected[0] = 1.0
    np.testing.assert_array_equal(v, expected)


def test_twin_shares_architecture_and_initial_weights():
    h = nets.init_perceptual_net(seed=9)
    twin = nets.make_trainable_twin(h)
    assert twin.shapes() == h.shapes()
    for a, b in zip(twin.params(), h.params()):
        np.testing.assert_array_equal(a.values, b.values)
        assert a is not b
    assert twin.role == nets.ROLE_PERCEPTUAL_TRAINABLE


def test_twin_requires_perceptual_source():
    with pytest.raises(ValueError):
        nets.make_trainable_twin(nets.init_identity_net(seed=0))


def test_nets_deterministic_given_weights():
    e = nets.init_encoder(seed=1)
    rng = np.random.default_rng(1)
    x = rng.uniform(size=(4, 256))
    np.testing.assert_array_equal(nets.encode(e, x).values, nets.encode(e, x).values)
    e2 = nets.init_encoder(seed=1)
    for a, b in zip(e.params(), e2.params()):
        np.testing.assert_array_equal(a.values, b.values)
