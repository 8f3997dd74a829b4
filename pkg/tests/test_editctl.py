import numpy as np
import pytest

from udainv import editctl
from udainv.nets import GeneratorSpec, render


GEN = GeneratorSpec()


def _separable_set(seed, n=60):
    rng = np.random.default_rng(seed)
    latents = rng.standard_normal((n, 8))
    labels = (latents[:, 0] > 0).astype(float)
    if labels.min() == labels.max():  # re-draw degenerate label sets
        return _separable_set(seed + 1000, n)
    return latents, labels


@pytest.mark.parametrize("seed", range(5))
def test_linear_boundary_recovers_known_axis(seed):
    latents, labels = _separable_set(seed)
    direction = editctl.interfacegan_direction(latents, labels, "w0-sign")
    axis = np.zeros(8)
    axis[0] = 1.0
    assert abs(float(direction.vector @ axis)) >= 0.95
    assert float(direction.vector @ axis) > 0  # oriented toward the positive class


def test_flipping_labels_flips_direction():
    latents, labels = _separable_set(0)
    d_pos = editctl.interfacegan_direction(latents, labels)
    d_neg = editctl.interfacegan_direction(latents, 1.0 - labels)
    assert float(d_pos.vector @ d_neg.vector) == pytest.approx(-1.0, abs=1e-9)


def test_linear_boundary_unit_norm():
    latents, labels = _separable_set(3)
    direction = editctl.interfacegan_direction(latents, labels)
    assert np.linalg.norm(direction.vector) == pytest.approx(1.0, abs=1e-12)
    assert direction.method == "linear-boundary"


def test_linear_boundary_rejects_single_class():
    rng = np.random.default_rng(1)
    latents = rng.standard_normal((30, 8))
    with pytest.raises(ValueError, match="both classes"):
        editctl.interfacegan_direction(latents, np.ones(30))


def test_linear_boundary_rejects_small_sets():
    rng = np.random.default_rng(2)
    with pytest.raises(ValueError, match=">= 20"):
        editctl.interfacegan_direction(rng.standard_normal((10, 8)),
                                       np.arange(10) % 2)


def test_pca_recovers_high_variance_axis():
    rng = np.random.default_rng(4)
    scales = np.ones(8)
    scales[2] = 4.0
    latents = rng.standard_normal((300, 8)) * scales
    dirs = editctl.ganspace_directions(latents, k=3)
    axis = np.zeros(8)
    axis[2] = 1.0
    assert abs(float(dirs[0].vector @ axis)) >= 0.95
    assert dirs[0].metadata > dirs[1].metadata


def test_pca_directions_orthogonal():
    rng = np.random.default_rng(5)
    latents = rng.standard_normal((100, 8))
    dirs = editctl.ganspace_directions(latents, k=8)
    for i in range(8):
        for j in range(i + 1, 8):
            assert abs(float(dirs[i].vector @ dirs[j].vector)) < 1e-8


def test_pca_explained_variance_sums_to_one():
    rng = np.random.default_rng(6)
    latents = rng.standard_normal((100, 8))
    dirs = editctl.ganspace_directions(latents, k=8)
    assert sum(d.metadata for d in dirs) == pytest.approx(1.0, abs=1e-8)


def test_pca_k_out_of_range():
    rng = np.random.default_rng(7)
    latents = rng.standard_normal((100, 8))
    with pytest.raises(ValueError):
        editctl.ganspace_directions(latents, k=0)
    with pytest.raises(ValueError):
        editctl.ganspace_directions(latents, k=9)
    with pytest.raises(ValueError, match="more than"):
        editctl.ganspace_directions(latents[:8], k=2)


def _w0_direction():
    axis = np.zeros(8)
    axis[0] = 1.0
    return editctl.EditDirection(vector=axis, method="linear-boundary",
                                 attribute="w0-axis", metadata=1.0)


def test_apply_edit_zero_alpha_is_identity():
    rng = np.random.default_rng(8)
    w = rng.standard_normal(8)
    edited, img = editctl.apply_edit(GEN, w, _w0_direction(), 0.0)
    np.testing.assert_array_equal(edited, w)
    np.testing.assert_array_equal(img, render(GEN, w))


def test_apply_edit_midpoint_linearity():
    rng = np.random.default_rng(9)
    w = rng.standard_normal(8)
    direction = _w0_direction()
    plus, _ = editctl.apply_edit(GEN, w, direction, 1.3)
    minus, _ = editctl.apply_edit(GEN, w, direction, -1.3)
    np.testing.assert_allclose((plus + minus) / 2.0, w, atol=1e-15)


def test_edit_along_w0_axis_probe_strictly_increases():
    w = np.zeros(8)
    direction = _w0_direction()
    probes = [editctl.attribute_probe(editctl.apply_edit(GEN, w, direction, a)[1])
              for a in (-2.0, -1.0, 0.0, 1.0, 2.0)]
    assert all(b > a for a, b in zip(probes, probes[1:]))


def test_probe_centered_blob():
    # A single centered blob, no background: centroid sits mid-grid.
    y, x = np.mgrid[0:16, 0:16]
    img = 0.6 * np.exp(-((x - 7.5) ** 2 + (y - 7.5) ** 2) / (2 * 2.0 ** 2))
    assert editctl.attribute_probe(img) == pytest.approx(0.5, abs=0.05)


def test_probe_blob_at_right_edge():
    y, x = np.mgrid[0:16, 0:16]
    img = 0.6 * np.exp(-((x - 14.0) ** 2 + (y - 7.5) ** 2) / (2 * 2.0 ** 2))
    assert editctl.attribute_probe(img) > 0.7


def test_probe_invariant_to_brightness_scaling():
    rng = np.random.default_rng(10)
    img = rng.uniform(size=(16, 16))
    assert editctl.attribute_probe(img) == pytest.approx(
        editctl.attribute_probe(0.3 * img), abs=1e-12)


def test_probe_all_zero_image_rule():
    assert editctl.attribute_probe(np.zeros((16, 16))) == 0.5


def test_directions_serialize_roundtrip(tmp_path):
    latents, labels = _separable_set(11)
    dirs = [editctl.interfacegan_direction(latents, labels, "w0-sign")]
    dirs += editctl.ganspace_directions(latents, k=2)
    path = tmp_path / "directions.csv"
    editctl.save_directions(path, dirs)
    loaded = editctl.load_directions(path)
    assert len(loaded) == 3
    for orig, back in zip(dirs, loaded):
        np.testing.assert_allclose(orig.vector, back.vector, atol=1e-15)
        assert orig.method == back.method
        assert orig.attribute == back.attribute
        assert orig.metadata == back.metadata
