import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from dmnet.errors import EmptyMaskError, SizeError
from dmnet.features import FeatureExtractor, TinyEncoder, downsample_mask, masked_average_pool


def test_map_of_ones_is_ones():
    feat = torch.ones(5, 3, 3)
    mask = torch.zeros(3, 3)
    mask[1, 2] = 1
    assert torch.equal(masked_average_pool(feat, mask), torch.ones(5))


def test_map_diagonal_example():
    feat = torch.tensor([[[1.0, 2.0], [3.0, 4.0]]])
    mask = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
    assert masked_average_pool(feat, mask).tolist() == [2.5]


def test_map_empty_mask_raises():
    with pytest.raises(EmptyMaskError):
        masked_average_pool(torch.ones(2, 3, 3), torch.zeros(3, 3))


@given(st.integers(1, 4), st.integers(1, 5), st.integers(1, 5), st.integers(0, 10_000))
def test_map_is_a_convex_combination(c, h, w, seed):
    rng = np.random.default_rng(seed)
    feat = torch.as_tensor(rng.normal(size=(c, h, w)))
    mask = torch.as_tensor(rng.integers(0, 2, (h, w)), dtype=torch.float64)
    mask[0, 0] = 1
    proto = masked_average_pool(feat, mask)
    inside = feat[:, mask.bool()]
    assert torch.all(proto <= inside.max(dim=1).values + 1e-12)
    assert torch.all(proto >= inside.min(dim=1).values - 1e-12)


def test_downsample_keeps_single_pixel_objects():
    mask = torch.zeros(32, 32)
    mask[13, 21] = 1
    small = downsample_mask(mask, (8, 8))
    assert small.sum() == 1 and small[3, 5] == 1


def test_stride8_resolution_contract():
    ext = FeatureExtractor("tiny", reduce_dim=16, stride=8)
    b = ext(torch.rand(1, 3, 256, 256))
    assert b.mid.shape[-2:] == (32, 32) and b.high.shape[-2:] == (32, 32)
    assert ext.feature_size((256, 256)) == (32, 32)


def test_too_small_image_is_rejected():
    with pytest.raises(SizeError):
        FeatureExtractor("tiny", 16, stride=8)(torch.rand(1, 3, 8, 8))


def test_identical_images_identical_bundles():
    ext = FeatureExtractor("tiny", 16, stride=4)
    img = np.random.default_rng(0).uniform(size=(32, 32, 3)).astype(np.float32)
    a, b = ext.extract_features(img), ext.extract_features(img.copy())
    assert torch.equal(a.mid, b.mid) and torch.equal(a.high, b.high)


def test_backbone_is_frozen_and_outside_the_graph():
    ext = FeatureExtractor("tiny", 16, stride=4)
    assert not any(p.requires_grad for p in ext.backbone.parameters())
    assert all(p.requires_grad for p in ext.reduce.parameters())
    ext.train()
    assert not ext.backbone.training


def test_encoder_weights_round_trip(tmp_path):
    enc = TinyEncoder(stride=4, seed=3)
    enc.mid_scale.fill_(2.0)
    torch.save(enc.state_dict(), tmp_path / "enc.pt")
    loaded = TinyEncoder(stride=4, seed=0, weights=str(tmp_path / "enc.pt"))
    x = torch.rand(1, 3, 32, 32)
    for u, v in zip(enc(x), loaded(x)):
        assert torch.equal(u, v)
