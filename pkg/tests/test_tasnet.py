import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finsep.audio import ChunkSpec, Waveform
from finsep.numcore import Tensor, no_grad
from finsep.numcore.gradcheck import check_gradients, random_projection_loss
from finsep.tasnet import TasNet, TasNetConfig, apply_mask, decode, encode, estimate_masks, forward

SMALL = TasNetConfig(frame_len=8, basis_size=16, bottleneck=8, block_channels=12, blocks=3, repeats=2)


def small(seed=0, **kw):
    cfg = TasNetConfig(**{**SMALL.__dict__, **kw})
    return TasNet(cfg, seed=seed)


def test_config_defaults():
    c = TasNetConfig()
    assert (c.frame_len, c.basis_size, c.blocks, c.repeats, c.kernel) == (40, 128, 6, 2, 3)
    assert c.hop == 20
    assert c.receptive_field == 1 + 2 * sum(2 * 2 ** x for x in range(6)) == 253
    for bad in ({"frame_len": 0}, {"n_sources": 3}, {"frame_len": 7}, {"mask_nonlinearity": "softmax"}):
        with pytest.raises(ValueError):
            TasNetConfig(**bad)


def test_parameter_shapes():
    m = TasNet(seed=0)
    p = m.params
    assert p["encoder.w"].shape == (128, 1, 40)
    assert p["decoder.w"].shape == (128, 1, 40)
    assert p["tcn.block11.dw.w"].shape == (128, 1, 3)
    assert p["tcn.out.w"].shape == (256, 64, 1)
    assert m.encoder_basis.shape == (40, 128) and m.decoder_basis.shape == (128, 40)
    assert not any(k.startswith(("encoder.b", "decoder.b")) for k in p)


def test_encode_examples():
    m = TasNet(TasNetConfig(frame_len=2, basis_size=2, bottleneck=2, block_channels=2, blocks=1, repeats=1), seed=0)
    m.set_encoder_basis([[1, -1], [1, -1]])
    np.testing.assert_array_equal(encode([1, 1], m), [2, 0])
    np.testing.assert_array_equal(encode([0, 0], m), [0, 0])
    with pytest.raises(ValueError):
        encode([1, 2, 3], m)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_encode_nonnegative(seed):
    m = small(seed)
    x = np.random.default_rng(seed).standard_normal(8)
    assert encode(x, m).min() >= 0


def test_masks_zero_tcn_half():
    m = small()
    m.zero_tcn()
    z = np.abs(np.random.default_rng(0).standard_normal((3, 16)))
    masks = estimate_masks(z, m)
    assert masks.shape == (2, 3, 16)
    assert np.all(masks == 0.5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 20))
def test_masks_in_open_interval(seed, n):
    rng = np.random.default_rng(seed)
    z = np.abs(rng.standard_normal((n, 16))) * rng.uniform(0.1, 5)
    masks = estimate_masks(z, small(seed))
    assert masks.shape == (2, n, 16)
    assert np.all((masks > 0) & (masks < 1))


def test_apply_mask_examples():
    z = np.array([2.0, 4.0])
    np.testing.assert_array_equal(apply_mask(z, np.ones(2)), z)
    np.testing.assert_array_equal(apply_mask(z, np.zeros(2)), [0, 0])
    np.testing.assert_array_equal(apply_mask(z, [0.5, 0.25]), [1, 1])
    with pytest.raises(ValueError):
        apply_mask(z, [1.0])


def test_decode_examples():
    m = TasNet(TasNetConfig(frame_len=2, basis_size=2, bottleneck=2, block_channels=2, blocks=1, repeats=1), seed=0)
    m.set_decoder_basis([[1, 0], [0, 2]])
    np.testing.assert_array_equal(decode([1, 2], m), [1, 4])
    np.testing.assert_array_equal(decode([0, 0], m), [0, 0])
    m.set_decoder_basis(np.eye(2))
    np.testing.assert_array_equal(decode([3, -1], m), [3, -1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-10, 10))
def test_decode_linear(seed, a):
    rng = np.random.default_rng(seed)
    m = small(seed)
    b1, b2 = rng.standard_normal(16), rng.standard_normal(16)
    np.testing.assert_allclose(decode(a * b1 + b2, m), a * decode(b1, m) + decode(b2, m), atol=1e-9)


def test_frame_api_matches_graph():
    """A frame's decoded contribution equals the graph's transposed conv of the masked features."""
    m = small(3)
    x = np.random.default_rng(1).standard_normal(8)
    z = encode(x, m)
    with no_grad():
        zt = m.encode_tensor(Tensor(x.reshape(1, 1, 8))).data[0, :, 0]
    np.testing.assert_allclose(z, zt, atol=1e-12)
    masks = estimate_masks(z[None], m)
    bt = (zt * masks[0, 0])[None, :, None]
    with no_grad():
        y = m.decode_tensor(Tensor(bt)).data[0, 0]
    np.testing.assert_allclose(decode(apply_mask(z, masks[0, 0]), m), y, atol=1e-12)


def test_zero_mixture_zero_output():
    m = TasNet(seed=1)
    for n in (44160, 50000):
        fish, bg = forward(Waveform(np.zeros(n), 44100), m)
        assert len(fish) == len(bg) == n
        assert not np.any(fish.samples) and not np.any(bg.samples)


@pytest.mark.parametrize("n", [44160, 50000, 77280])
def test_output_lengths_default_chunking(n):
    m = small(2)
    x = np.random.default_rng(n).uniform(-0.5, 0.5, n)
    fish, bg = m.forward(Waveform(x, 44100), ChunkSpec())
    assert len(fish) == len(bg) == n
    assert fish.sample_rate == 44100


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 300))
def test_separate_tensor_length(t):
    m = small(0)
    with no_grad():
        out = m.separate_tensor(Tensor(np.random.default_rng(t).standard_normal((2, t))))
    assert out.shape == (2, 2, t)


def test_determinism():
    x = np.random.default_rng(5).uniform(-1, 1, 3000)
    a = small(9).forward(Waveform(x, 8000), ChunkSpec(1000))
    b = small(9).forward(Waveform(x, 8000), ChunkSpec(1000))
    for u, v in zip(a, b):
        assert u.samples.tobytes() == v.samples.tobytes()


def test_receptive_field_measured():
    """Perturbing one encoder frame moves mask logits only inside the predicted span."""
    m = small(4, norm="none")
    rf = m.config.receptive_field
    assert rf == 1 + 2 * (2 + 4 + 8)
    half = (rf - 1) // 2
    n = 3 * rf
    pos = n // 2
    rng = np.random.default_rng(0)
    z = np.abs(rng.standard_normal((1, 16, n)))
    with no_grad():
        base = m.mask_logits_tensor(Tensor(z)).data
        z2 = z.copy()
        z2[0, :, pos] += 1.0
        moved = m.mask_logits_tensor(Tensor(z2)).data
    touched = np.nonzero(np.any(np.abs(moved - base) > 0, axis=(0, 1)))[0]
    assert touched.min() == pos - half and touched.max() == pos + half


def test_gln_makes_masks_global():
    # with global normalization every frame can move; that is why the span test disables it
    m = small(4)
    z = np.abs(np.random.default_rng(0).standard_normal((1, 16, 90)))
    with no_grad():
        base = m.mask_logits_tensor(Tensor(z)).data
        z[0, :, 45] += 1.0
        moved = m.mask_logits_tensor(Tensor(z)).data
    assert np.all(np.any(moved != base, axis=(0, 1)))


def test_model_gradients():
    m = TasNet(TasNetConfig(frame_len=4, basis_size=3, bottleneck=2, block_channels=2, blocks=2, repeats=1), seed=0)
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((2, 10)))
    proj = random_projection_loss(rng, (2, 2, 10))
    params = list(m.params.values())
    assert check_gradients(lambda: proj(m.separate_tensor(x)), params) < 1e-4
