"""Quick property suites runnable from an installed package (no pytest needed)."""
from __future__ import annotations

import time
from typing import Callable

import numpy as np

from .attention import BottleneckParams, GsaParams, SabParams, bottleneck, channel_shuffle, gsa, sab, shuffle_permutation
from .blocks import DecoderBlockParams, EncoderBlockParams, conv_unit, decoder_block, encoder_block
from .cfma import CfmaParams, FmbParams, cfma, fmb
from .gradcheck import grad_error, weighted_sum
from .losses import combined_loss
from .metrics import confusion, metrics
from .network import NetworkConfig, count_flops, count_params, init_params
from .params import ConvParams, ConvUnitParams, learnable, registry
from .tensor import Tensor


def _t(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64), dtype=np.float64)


def _jitter(p, rng):
    for name, t in registry(p).items():
        if name.endswith("running_var"):
            t.data = rng.uniform(0.5, 2.0, size=t.shape)
        else:
            t.data = rng.normal(0.0, 0.5, size=t.shape)
    return p


def _block_error(build: Callable, shapes, seed: int) -> float:
    rng = np.random.default_rng(seed)
    params, fn = build(rng)
    inputs = [_t(rng.normal(size=s)) for s in shapes]
    tensors = {**{f"x{i}": x for i, x in enumerate(inputs)}, **learnable(params)}
    readout = np.random.default_rng(seed + 1000)
    state = readout.bit_generator.state

    def loss():
        readout.bit_generator.state = state
        return weighted_sum(fn(*inputs), readout)

    return max(grad_error(loss, tensors, rng=rng, max_coords=12).values())


BLOCKS = {
    "conv_unit": (lambda r: (lambda p: (p, lambda x: conv_unit(x, p, "train")))(
        _jitter(ConvUnitParams.init(r, 3, 2, 3, np.float64), r)), [(2, 4, 4, 2)]),
    "encoder_block": (lambda r: (lambda p: (p, lambda x: encoder_block(x, p, "train")[1]))(
        _jitter(EncoderBlockParams.init(r, 2, 3, np.float64), r)), [(2, 4, 4, 2)]),
    "decoder_block": (lambda r: (lambda p: (p, lambda d, s: decoder_block(d, s, p, "train")))(
        _jitter(DecoderBlockParams.init(r, 3, 2, np.float64), r)), [(2, 2, 2, 3), (2, 4, 4, 2)]),
    "sab": (lambda r: (lambda p: (p, lambda x: sab(x, p)))(SabParams.init(r, 4, projections=True, dtype=np.float64)), [(2, 3, 3, 4)]),
    "gsa": (lambda r: (lambda p: (p, lambda x: gsa(x, p)))(_jitter(GsaParams.init(r, 4, 3, dtype=np.float64), r)),
            [(2, 3, 3, 4)]),
    "channel_shuffle": (lambda r: (lambda p: (p, lambda x: bottleneck(x, p, "train", r)))(BottleneckParams(
        SabParams.init(r, 4, dropout_rate=0.0, dtype=np.float64), GsaParams.init(r, 4, 2, dtype=np.float64),
        ConvParams.init(r, 1, 8, 4, np.float64))), [(2, 2, 2, 4)]),
    "fmb": (lambda r: (lambda p: (p, lambda x: fmb(x, p)))(_jitter(FmbParams.init(r, 3, dtype=np.float64), r)),
            [(1, 4, 4, 3)]),
    "cfma": (lambda r: (lambda p: (p, lambda x: cfma(x, p)))(_jitter(CfmaParams.init(r, 3, dtype=np.float64), r)),
             [(1, 4, 4, 3)]),
}


def check_gradients(instances: int = 5) -> tuple[bool, str]:
    worst = {}
    for name, (build, shapes) in BLOCKS.items():
        worst[name] = max(_block_error(build, shapes, seed) for seed in range(instances))
    rng = np.random.default_rng(0)
    loss_worst = 0.0
    for _ in range(instances):
        p = _t(rng.uniform(0.05, 0.95, (1, 4, 4, 1)))
        g = (rng.random(p.shape) > 0.5).astype(np.float64)
        loss_worst = max(loss_worst, grad_error(lambda: combined_loss(p, g), {"p": p}, rng=rng)["p"])
    worst["losses"] = loss_worst
    bad = {k: v for k, v in worst.items() if not v < 1e-6}
    return not bad, f"max rel err {max(worst.values()):.2e} over {len(worst)} blocks" + (f"; failing {bad}" if bad else "")


def check_permutation() -> tuple[bool, str]:
    cases = 0
    for n in range(1, 65):
        for g in (d for d in range(1, n + 1) if n % d == 0):
            idx = list(range(n))
            oracle = [idx[r * (n // g) + c] for c in range(n // g) for r in range(g)]
            perm = shuffle_permutation(n, g)
            x = Tensor(np.arange(float(n)).reshape(1, 1, 1, n))
            y = channel_shuffle(x, g).data.ravel()
            if perm.tolist() != oracle or y.tolist() != [float(i) for i in oracle]:
                return False, f"mismatch at n={n} g={g}"
            if not np.array_equal(y[np.argsort(perm)], x.data.ravel()):
                return False, f"inverse fails at n={n} g={g}"
            cases += 1
    return True, f"{cases} (n, g) pairs exact"


def check_metrics(pairs: int = 1000) -> tuple[bool, str]:
    rng = np.random.default_rng(0)
    for _ in range(pairs):
        pred = rng.random((16, 16)) < rng.random()
        gt = rng.random((16, 16)) < rng.random()
        counts = [0, 0, 0, 0]
        for a, b in zip(pred.ravel().tolist(), gt.ravel().tolist()):
            counts[(0 if b else 2) if a else (3 if b else 1)] += 1
        c = confusion(pred, gt)
        if [c.tp, c.tn, c.fp, c.fn] != counts:
            return False, f"counts {c} != {counts}"
        r = metrics(c)
        if c.tp + c.fp + c.fn and abs(r.dice - 2 * r.jaccard / (1 + r.jaccard)) > 1e-12:
            return False, "Dice-Jaccard identity violated"
    return True, f"{pairs} mask pairs exact"


def check_identities() -> tuple[bool, str]:
    rng = np.random.default_rng(0)
    p = CfmaParams.init(rng, 6)
    for t in registry(p).values():
        t.data = np.zeros_like(t.data)
    s = Tensor(rng.normal(size=(1, 8, 8, 6)).astype(np.float32))
    if not np.array_equal(cfma(s, p).data, s.data):
        return False, "zero-weight CFMA is not the identity"
    g = GsaParams.init(rng, 6, 8)
    g.value_conv.kernel.data[:] = 0
    out, att = gsa(s, g, return_attention=True)
    if not np.array_equal(out.data, s.data):
        return False, "zero-value GSA is not the identity"
    _, att2 = sab(s, SabParams.init(rng, 6), return_attention=True)
    dev = max(np.abs(att.data.sum(-1) - 1).max(), np.abs(att2.data.sum(-1) - 1).max())
    if dev > 1e-6:
        return False, f"softmax rows deviate by {dev:.1e}"
    return True, f"identities bit-exact; softmax deviation {dev:.1e}"


def check_complexity() -> tuple[bool, str]:
    cfg = NetworkConfig()
    n = count_params(init_params(cfg))
    f = count_flops(cfg)
    ok = 700_000 <= n <= 920_000 and abs(f - 3.1e9) <= 0.2 * 3.1e9
    return ok, f"{n / 1e6:.3f} M params, {f / 1e9:.3f} GFLOPs (multiply-add = 2)"


SUITES = {
    "gradients": check_gradients,
    "permutation": check_permutation,
    "metrics": check_metrics,
    "identities": check_identities,
    "complexity": check_complexity,
}


def run(out=print) -> bool:
    all_ok = True
    for name, fn in SUITES.items():
        start = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing suite is a failing suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= ok
        out(f"{'PASS' if ok else 'FAIL'} {name}: {detail} ({time.perf_counter() - start:.1f}s)")
    return all_ok

