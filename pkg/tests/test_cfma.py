import numpy as np
import pytest
from scipy.special import erf

from lssfnet.cfma import CfmaParams, FmbParams, cfma, fmb
from lssfnet.gradcheck import grad_error, weighted_sum
from lssfnet.params import learnable, registry

from conftest import naive_conv2d, t64


def np_gelu(x):
    return 0.5 * x * (1 + erf(x / np.sqrt(2)))


def np_proj(x, p):
    return x @ p.kernel.data[0, 0] + p.bias.data


def np_depthwise(x, k):
    c = x.shape[-1]
    out = np.empty_like(x)
    for ch in range(c):
        out[..., ch:ch + 1] = naive_conv2d(x[..., ch:ch + 1], k[:, :, ch].reshape(*k.shape[:2], 1, 1), np.zeros(1))
    return out


def np_fmb(x, p):
    c, levels = x.shape[-1], p.levels
    q = np_proj(x, p.query_proj)
    z = np_proj(x, p.context_proj)
    ctx, gates = z[..., :c], z[..., c:]
    agg = 0.0
    for lv, k in enumerate(p.level_kernels):
        ctx = np_gelu(np_depthwise(ctx, k.data))
        agg = agg + ctx * gates[..., lv:lv + 1]
    agg = agg + ctx.mean(axis=(1, 2), keepdims=True) * gates[..., levels:levels + 1]
    return np_proj(q * np_proj(agg, p.modulator_proj), p.out_proj)


def np_cfma(s, p):
    y = naive_conv2d(np_fmb(s, p.fmb), p.post_conv.kernel.data, p.post_conv.bias.data)
    mu, var = y.mean(-1, keepdims=True), y.var(-1, keepdims=True)
    c1 = s + p.ln_gamma.data * (y - mu) / np.sqrt(var + 1e-6) + p.ln_beta.data
    return c1 + np_proj(np_gelu(np_proj(c1, p.mlp[0])), p.mlp[1])


def _randomise(p, rng):
    for t in registry(p).values():
        t.data = rng.normal(0, 0.5, size=t.shape)
    return p


def test_gate_count_and_shapes(rng):
    p = FmbParams.init(rng, 8, (3, 5, 7))
    assert p.levels == 3
    assert p.context_proj.kernel.shape == (1, 1, 8, 8 + 3 + 1)
    q = CfmaParams.init(rng, 8)
    assert q.mlp[0].kernel.shape == (1, 1, 8, 16)
    x = t64(rng.normal(size=(2, 6, 6, 8)))
    assert fmb(x, FmbParams.init(rng, 8, dtype=np.float64)).shape == x.shape
    assert cfma(x, CfmaParams.init(rng, 8, dtype=np.float64)).shape == x.shape


def test_zero_weights_give_exact_identity(rng):
    p = CfmaParams.init(rng, 6)
    for t in registry(p).values():
        t.data = np.zeros_like(t.data)
    s = t64(rng.normal(size=(1, 8, 8, 6)))
    assert np.array_equal(cfma(s, p).data, s.data)


def test_zero_weight_pattern_with_live_branches(rng):
    """Only the output projections are zeroed; the identity must still hold."""
    p = _randomise(CfmaParams.init(rng, 4, dtype=np.float64), rng)
    p.post_conv.kernel.data[:] = 0
    p.post_conv.bias.data[:] = 0
    p.ln_beta.data[:] = 0
    p.mlp[1].kernel.data[:] = 0
    p.mlp[1].bias.data[:] = 0
    s = t64(rng.normal(size=(1, 4, 4, 4)))
    assert np.array_equal(cfma(s, p).data, s.data)


def test_single_level_hand_oracle():
    # one channel, one pixel: every depthwise tap except the centre sees padding
    p = FmbParams.init(np.random.default_rng(0), 1, (3,), dtype=np.float64)
    p.query_proj.kernel.data[:] = 2.0
    p.query_proj.bias.data[:] = 0.5
    p.context_proj.kernel.data[0, 0, 0] = [1.0, 0.25, -0.5]
    p.context_proj.bias.data[:] = [0.0, 0.0, 1.0]
    p.level_kernels[0].data[:] = 7.0
    p.level_kernels[0].data[1, 1, 0] = 3.0
    p.modulator_proj.kernel.data[:] = 1.5
    p.modulator_proj.bias.data[:] = 0.0
    p.out_proj.kernel.data[:] = -1.0
    p.out_proj.bias.data[:] = 0.25
    x = 0.8
    q = 2 * x + 0.5
    ctx, g0, g1 = x, 0.25 * x, -0.5 * x + 1
    lvl = np_gelu(3 * ctx)
    agg = lvl * g0 + lvl * g1  # global average of one pixel is the pixel
    expected = -(q * 1.5 * agg) + 0.25
    out = fmb(t64(np.full((1, 1, 1, 1), x)), p).data
    np.testing.assert_allclose(out.item(), expected, rtol=1e-12)


@pytest.mark.parametrize("kernels", [(3,), (3, 5)])
def test_matches_transcription(rng, kernels):
    p = _randomise(CfmaParams.init(rng, 5, kernels, dtype=np.float64), rng)
    s = rng.normal(size=(2, 6, 6, 5))
    np.testing.assert_allclose(fmb(t64(s), p.fmb).data, np_fmb(s, p.fmb), atol=1e-10)
    np.testing.assert_allclose(cfma(t64(s), p).data, np_cfma(s, p), atol=1e-9)


def test_requires_a_level(rng):
    with pytest.raises(ValueError):
        FmbParams.init(rng, 4, ())


@pytest.mark.parametrize("seed", range(4))
def test_cfma_gradients(seed):
    r = np.random.default_rng(seed)
    p = _randomise(CfmaParams.init(r, 3, dtype=np.float64), r)
    x = t64(r.normal(size=(2, 4, 4, 3)))
    tensors = {"x": x, **learnable(p)}
    readout = np.random.default_rng(seed + 10)
    state = readout.bit_generator.state

    def loss():
        readout.bit_generator.state = state
        return weighted_sum(cfma(x, p), readout)

    errs = grad_error(loss, tensors, rng=np.random.default_rng(seed), max_coords=16)
    assert max(errs.values()) < 1e-6, {k: v for k, v in errs.items() if v >= 1e-6}
