import numpy as np
import pytest

from mvclip.attn_viz import (AttentionRecord, extract_attention, first_cross_view_layer, heat_maps, overlays,
                             render_heatmap)
from mvclip.encoder import EncoderConfig, VisionEncoder
from mvclip.numerics import no_grad
from mvclip.synth.ppm import read_ppm


@pytest.fixture(scope="module")
def encoder():
    return VisionEncoder(EncoderConfig(frozen_prefix=2, max_views=6), seed=4)


@pytest.fixture(scope="module")
def views():
    return np.random.default_rng(0).random((4, 32, 32, 3)).astype(np.float32)


def test_row_contract(encoder, views):
    for head in ("mean", 0, 3):
        for token in ((0, 0), (3, 15), (1, 7)):
            rec = extract_attention(encoder, views, token=token, head=head)
            assert rec.layer == 2 and rec.row.shape == (4 * 17,)
            assert np.all(rec.row >= 0) and abs(rec.row.sum() - 1.0) <= 1e-6
            assert rec.query == token[0] * 17 + 1 + token[1]


def test_patch_count_at_224():
    cfg = EncoderConfig(image_size=224, patch_size=32, width=8, depth=2, heads=2, frozen_prefix=1, embed_dim=4,
                        max_views=2)
    rec = extract_attention(VisionEncoder(cfg), np.zeros((2, 224, 224, 3)), token=(1, 48))
    assert cfg.num_patches == 49 and rec.row.shape == (2 * 50,)
    assert heat_maps(rec, 7).shape == (2, 7, 7)


def test_single_view_row_equals_per_view_attention(encoder, views):
    rec = extract_attention(encoder, views[:1], token=(0, 5))
    plain = encoder.with_config(mva_enabled=False)
    capture = {}
    with no_grad():
        plain.encode(views[None, :1], capture=capture)
    np.testing.assert_allclose(rec.row, capture[2][0, 0].astype(np.float64).mean(axis=0)[6], atol=1e-7)


def test_capture_does_not_change_embedding(encoder, views):
    with no_grad():
        a = encoder.encode(views[None]).data
        b = encoder.encode(views[None], capture={}).data
    assert a.tobytes() == b.tobytes()


def test_non_mva_layer_rejected(encoder, views):
    for layer in (0, 1, 7):
        with pytest.raises(ValueError, match="layer has no cross-view attention"):
            extract_attention(encoder, views, layer=layer)
    with pytest.raises(ValueError, match="layer has no cross-view attention"):
        first_cross_view_layer(encoder.with_config(mva_enabled=False))
    with pytest.raises(ValueError):
        extract_attention(encoder, views, token=(4, 0))


def _record(row, views, L):
    return AttentionRecord(2, "mean", 0, np.asarray(row, dtype=np.float64), views, L)


def test_uniform_row_gives_mid_overlay():
    rec = _record(np.full(2 * 5, 0.1), 2, 5)
    np.testing.assert_array_equal(heat_maps(rec, 2), 0.5)
    images = np.zeros((2, 8, 8, 3))
    for out in overlays(rec, images, 2):
        # blend of black with the mid colour (0.5, 0, 0.5) at alpha 0.5
        assert np.all(out[..., 0] == 64) and np.all(out[..., 1] == 0) and np.all(out[..., 2] == 64)


def test_delta_row_gives_single_hot_cell():
    row = np.zeros(3 * 10)
    row[10 + 1 + 4] = 1.0  # view 1, patch 4 of a 3x3 grid
    maps = heat_maps(_record(row, 3, 10), 3)
    assert maps[1, 1, 1] == 1.0 and maps.sum() == 1.0


def test_joint_normalisation_keeps_argmax(encoder, views):
    rec = extract_attention(encoder, views, token=(2, 3))
    maps = heat_maps(rec, 4)
    assert maps.min() == 0.0 and maps.max() == 1.0
    for j in range(4):
        assert np.argmax(maps[j]) == np.argmax(rec.view_slice(j)[1:])


def test_mismatched_views_rejected(encoder, views):
    rec = extract_attention(encoder, views)
    with pytest.raises(ValueError):
        overlays(rec, views[:3], 4)


def test_render_files_deterministic(tmp_path, encoder, views):
    rec = extract_attention(encoder, views, token=(1, 6))
    a = render_heatmap(rec, views, tmp_path / "a", "obj7", 4)
    b = render_heatmap(rec, views, tmp_path / "b", "obj7", 4)
    assert [p.name for p in a] == [f"obj7_view{j}_tok6.ppm" for j in range(4)]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
        assert read_ppm(pa).shape == (32, 32, 3)
