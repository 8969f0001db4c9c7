"""Full encoder/decoder assembly plus parameter and FLOP accounting."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .attention import BottleneckParams, GsaParams, SabParams, bottleneck
from .blocks import (
    DecoderBlockParams,
    EncoderBlockParams,
    OutputHeadParams,
    StemParams,
    decoder_block,
    encoder_block,
    initial_stem,
    output_head,
)
from .cfma import CfmaParams, cfma
from .params import ConvParams, learnable, registry
from .tensor import Tensor

DEFAULT_WIDTHS = (6, 12, 24, 72)


@dataclass
class NetworkConfig:
    input_size: int = 256
    widths: tuple[int, int, int, int] = DEFAULT_WIDTHS
    in_channels: int = 3
    sab_temperature: float | None = None  # None -> bottleneck width
    sab_dropout: float = 0.1
    sab_projections: bool = False  # learned W_Q/W_K/W_V when True
    gsa_factor: int = 2
    shuffle_groups: int = 2
    focal_kernels: tuple[int, ...] = (3, 5)
    mlp_ratio: int = 2
    seed: int = 0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.focal_kernels = tuple(int(k) for k in self.focal_kernels)
        s = self.input_size
        if s < 16 or s & (s - 1):
            raise ValueError(f"input_size must be a power of two >= 16, got {s}")
        if len(self.widths) != 4 or min(self.widths) < 1:
            raise ValueError(f"widths must be four positive ints, got {self.widths}")
        if self.widths[-1] % self.gsa_factor:
            raise ValueError(f"gsa_factor {self.gsa_factor} must divide bottleneck width {self.widths[-1]}")
        if (2 * self.widths[-1]) % self.shuffle_groups:
            raise ValueError(f"shuffle_groups {self.shuffle_groups} must divide {2 * self.widths[-1]}")
        if not self.focal_kernels or any(k % 2 == 0 for k in self.focal_kernels):
            raise ValueError("focal_kernels must be a non-empty list of odd sizes")

    @classmethod
    def tiny(cls, input_size: int = 16, **kw) -> "NetworkConfig":
        """Small widths used for gradient checks and smoke training."""
        return cls(input_size=input_size, widths=(4, 8, 12, 16), **kw)

    @property
    def bottleneck_size(self) -> int:
        return self.input_size // 16

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["widths"] = list(self.widths)
        d["focal_kernels"] = list(self.focal_kernels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise KeyError(f"unknown network config key(s): {', '.join(unknown)}")
        return cls(**d)


@dataclass
class ModelParams:
    stem: StemParams
    encoders: list[EncoderBlockParams]
    cfma: list[CfmaParams]
    bottleneck: BottleneckParams
    decoders: list[DecoderBlockParams]
    head: OutputHeadParams

    def registry(self) -> dict[str, Tensor]:
        return registry(self)

    def learnable(self) -> dict[str, Tensor]:
        return learnable(self)


def init_params(config: NetworkConfig, seed: int | None = None, dtype=np.float32) -> ModelParams:
    """He-normal convs, zero biases, unit/zero BN affine, N(0, 0.02^2) GSA mixing."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    w = config.widths
    stem = StemParams.init(rng, config.in_channels, w[0], dtype)
    encoders = [EncoderBlockParams.init(rng, w[i], w[i + 1], dtype) for i in range(3)]
    cfmas = [CfmaParams.init(rng, w[i], config.focal_kernels, config.mlp_ratio, dtype) for i in range(4)]
    c = w[3]
    bott = BottleneckParams(
        sab=SabParams.init(rng, c, config.sab_temperature, config.sab_dropout, config.sab_projections, dtype),
        gsa=GsaParams.init(rng, c, config.bottleneck_size, config.gsa_factor, dtype),
        fuse=ConvParams.init(rng, 1, 2 * c, c, dtype),
        groups=config.shuffle_groups,
    )
    dec_in = [w[3], w[3], w[2], w[1]]
    dec_out = [w[3], w[2], w[1], w[0]]
    decoders = [DecoderBlockParams.init(rng, a, b, dtype) for a, b in zip(dec_in, dec_out)]
    head = OutputHeadParams.init(rng, w[0], dtype)
    return ModelParams(stem, encoders, cfmas, bott, decoders, head)


def forward(x, params: ModelParams, config: NetworkConfig, mode: str = "infer",
            rng: np.random.Generator | None = None) -> Tensor:
    """Map images ``[N, S, S, 3]`` in [0, 1] to foreground probabilities ``[N, S, S, 1]``."""
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x), dtype=params.head.final_conv.kernel.dtype)
    if x.ndim != 4 or x.shape[1] != config.input_size or x.shape[2] != config.input_size:
        raise ValueError(f"expected input [N,{config.input_size},{config.input_size},{config.in_channels}], got {x.shape}")
    if x.shape[3] != config.in_channels:
        raise ValueError(f"expected {config.in_channels} input channels, got {x.shape[3]}")
    s, e = initial_stem(x, params.stem, mode)
    skips = [s]
    for block in params.encoders:
        s, e = encoder_block(e, block, mode)
        skips.append(s)
    d = bottleneck(e, params.bottleneck, mode, rng)
    for block, level in zip(params.decoders, (3, 2, 1, 0)):
        d = decoder_block(d, cfma(skips[level], params.cfma[level]), block, mode)
    return output_head(d, params.head, mode)


def predict_mask(prob, threshold: float = 0.5) -> np.ndarray:
    """Binary mask ``[N, S, S]``; a pixel is foreground when ``prob >= threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    p = prob.data if isinstance(prob, Tensor) else np.asarray(prob)
    if p.ndim == 4 and p.shape[-1] == 1:
        p = p[..., 0]
    return (p >= threshold).astype(np.uint8)


def count_params(params) -> int:
    """Element count of every learnable tensor; BN running statistics excluded."""
    return int(sum(t.size for t in learnable(params).values()))


# -- analytic cost model ---------------------------------------------------------

@dataclass
class _Costs:
    rows: list[dict] = field(default_factory=list)

    def add(self, name: str, shape, params: int, flops: int) -> None:
        self.rows.append({"name": name, "shape": [int(v) for v in shape], "params": int(params), "flops": int(flops)})

    def conv(self, name, hw, k, cin, cout, bias=True):
        self.add(name, (hw, hw, cout), k * k * cin * cout + (cout if bias else 0), 2 * k * k * cin * cout * hw * hw)

    def bn(self, name, hw, c):
        self.add(name, (hw, hw, c), 2 * c, hw * hw * c)

    def elementwise(self, name, shape, count=1):
        self.add(name, shape, 0, count * int(np.prod(shape)))

    def unit(self, name, hw, cin, cout, relu=True):
        self.conv(f"{name}.conv", hw, 3, cin, cout)
        self.bn(f"{name}.bn", hw, cout)
        if relu:
            self.elementwise(f"{name}.relu", (hw, hw, cout))


def _cfma_costs(t: _Costs, name: str, hw: int, c: int, config: NetworkConfig) -> None:
    levels = len(config.focal_kernels)
    shape = (hw, hw, c)
    t.conv(f"{name}.fmb.query_proj", hw, 1, c, c)
    t.conv(f"{name}.fmb.context_proj", hw, 1, c, c + levels + 1)
    for i, k in enumerate(config.focal_kernels):
        t.add(f"{name}.fmb.level_kernels.{i}", shape, k * k * c, 2 * k * k * c * hw * hw)
        t.elementwise(f"{name}.fmb.level{i}.gelu_gate_sum", shape, 3)
    t.elementwise(f"{name}.fmb.global_ctx", shape, 3)
    t.conv(f"{name}.fmb.modulator_proj", hw, 1, c, c)
    t.elementwise(f"{name}.fmb.modulate", shape)
    t.conv(f"{name}.fmb.out_proj", hw, 1, c, c)
    t.conv(f"{name}.post_conv", hw, 3, c, c)
    t.add(f"{name}.ln", shape, 2 * c, 2 * hw * hw * c)
    hidden = config.mlp_ratio * c
    t.conv(f"{name}.mlp.0", hw, 1, c, hidden)
    t.elementwise(f"{name}.mlp.gelu", (hw, hw, hidden))
    t.conv(f"{name}.mlp.1", hw, 1, hidden, c)
    t.elementwise(f"{name}.residuals", shape, 2)


def layer_table(config: NetworkConfig) -> list[dict]:
    """Per-layer ``{name, shape, params, flops}`` rows for one image.

    FLOP convention: a multiply-add counts as 2 FLOPs, so a k x k conv costs
    ``2 k^2 Cin Cout H' W'`` and a matmul ``2 m n p``. Bias adds are not
    counted; every other elementwise primitive (BN, activations, residual
    adds, softmax, pooling) costs one FLOP per output element.
    """
    t = _Costs()
    w = config.widths
    hw = config.input_size
    t.unit("stem.skip_unit", hw, config.in_channels, w[0])
    t.unit("stem.units.0", hw, w[0], w[0])
    t.unit("stem.units.1", hw, w[0], w[0])
    t.elementwise("stem.maxpool", (hw // 2, hw // 2, w[0]))
    skips = [(hw, w[0])]
    hw //= 2
    for i in range(3):
        cin, cout = w[i], w[i + 1]
        name = f"encoders.{i}"
        t.unit(f"{name}.skip_unit", hw, cin, cout)
        t.unit(f"{name}.branch_a.0", hw, cin, cout)
        t.unit(f"{name}.branch_a.1", hw, cout, cout)
        t.conv(f"{name}.branch_a.2", hw, 3, cout, cout)
        t.unit(f"{name}.branch_b.0", hw, cout, cout, relu=False)
        t.unit(f"{name}.branch_b.1", hw, cout, cout, relu=False)
        t.elementwise(f"{name}.add_relu", (hw, hw, cout), 2)
        t.elementwise(f"{name}.maxpool", (hw // 2, hw // 2, cout))
        skips.append((hw, cout))
        hw //= 2

    c = w[3]
    n = hw * hw
    r = c // config.gsa_factor
    t.conv("bottleneck.gsa.query_conv", hw, 1, c, r)
    t.conv("bottleneck.gsa.key_conv", hw, 1, c, r)
    t.add("bottleneck.gsa.energy_softmax", (n, n), 0, 2 * n * r * n + n * n)
    t.conv("bottleneck.gsa.value_conv", hw, 1, c, c)
    t.add("bottleneck.gsa.attend", (c, n), 0, 2 * c * n * n)
    t.add("bottleneck.gsa.mix", (c, n), n * n, 2 * c * n * n + c * n)
    proj = 3 * c * c if config.sab_projections else 0
    t.add("bottleneck.sab.projections", (n, c), proj, 3 * 2 * n * c * c if proj else 0)
    t.add("bottleneck.sab.energy_softmax", (c, c), 0, 2 * c * n * c + c * c)
    t.add("bottleneck.sab.attend", (n, c), 0, 2 * n * c * c)
    t.conv("bottleneck.fuse", hw, 1, 2 * c, c)

    for i, (shw, sc) in enumerate(skips):
        _cfma_costs(t, f"cfma.{i}", shw, sc, config)

    cin = c
    for i, level in enumerate((3, 2, 1, 0)):
        hw, cout = skips[level]
        name = f"decoders.{i}"
        t.unit(f"{name}.fuse_unit", hw, cin, cout)
        t.elementwise(f"{name}.skip_add", (hw, hw, cout))
        t.unit(f"{name}.branch_a.0", hw, cin, cout)
        t.unit(f"{name}.branch_a.1", hw, cout, cout)
        t.conv(f"{name}.branch_a.2", hw, 3, cout, cout)
        t.unit(f"{name}.branch_b.0", hw, cout, cout, relu=False)
        t.unit(f"{name}.branch_b.1", hw, cout, cout, relu=False)
        t.elementwise(f"{name}.add_relu", (hw, hw, cout), 2)
        cin = cout
    t.unit("head.pre_unit", hw, cin, cin)
    t.conv("head.final_conv", hw, 1, cin, 1)
    t.elementwise("head.sigmoid", (hw, hw, 1))
    return t.rows


def count_flops(config: NetworkConfig) -> int:
    """Analytic forward FLOPs for a single image (multiply-add = 2 FLOPs)."""
    return int(sum(row["flops"] for row in layer_table(config)))


def complexity_report(config: NetworkConfig, params: ModelParams | None = None) -> dict:
    rows = layer_table(config)
    total_params = sum(r["params"] for r in rows)
    if params is not None and count_params(params) != total_params:
        raise AssertionError(f"layer table params {total_params} != registry count {count_params(params)}")
    return {
        "schema": "lssfnet.report/1",
        "flop_convention": "multiply-add = 2 FLOPs; elementwise = 1 FLOP per output element; bias adds not counted",
        "input_size": config.input_size,
        "widths": list(config.widths),
        "layers": rows,
        "total_params": int(total_params),
        "total_flops": int(sum(r["flops"] for r in rows)),
    }


def report_json(config: NetworkConfig, params: ModelParams | None = None) -> str:
    return json.dumps(complexity_report(config, params), indent=2)
