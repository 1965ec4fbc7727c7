"""RDS and DSS side-output topologies.

Levels are numbered from 1 (shallowest tap) to M (deepest tap). Each level
has a side branch of three convolutions that encodes its tap into ``k``
channels.

* RDS: level ``m``'s block is its own encoding concatenated with the
  up-sampled block of level ``m + 1``; every block is up-sampled x2 by a
  per-channel 2x2 stride-2 transposed convolution. Level-m blocks therefore
  carry ``(M - m + 1) * k`` channels.
* DSS: every deeper level ``j`` sends a single-channel transposed-convolution
  projection to every shallower level ``i``, up-sampling by ``2**(j - i)``
  with a kernel twice the stride.

Each level is read out by a 1x1 prediction convolution, resized to input
resolution and squashed by a sigmoid. The fused map is the sigmoid of a
learnable weighted sum of the side logits plus a bias.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from rdsnet import ops
from rdsnet.autograd import ShapeError, Tensor

# (kernel, width) of layers 1 and 2 for taps conv1, res2c, res3d, res4f, res5c
REFERENCE_LAYERS = ((3, 128), (5, 256), (5, 256), (5, 512), (7, 512))
RESNET_TAPS = (("conv1", 64), ("res2c", 256), ("res3d", 512), ("res4f", 1024),
               ("res5c", 2048), ("pool5", 2048))
TOY_CHANNELS = (16, 32, 64, 128, 256, 512)
DSS_SELECTION = (2, 3, 4, "fuse")


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int | None = None
    grouped: bool = False

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel side must be odd and positive, got {self.kernel}")
        if self.out_channels < 1 or self.stride < 1:
            raise ValueError(f"invalid conv spec {self}")
        if self.padding is None:
            object.__setattr__(self, "padding", (self.kernel - 1) // 2)

    def label(self):
        return f"Conv{self.kernel}@{self.out_channels}"


@dataclass(frozen=True)
class Tap:
    name: str
    stride: int
    channels: int


@dataclass(frozen=True)
class BackboneSpec:
    taps: tuple

    def __post_init__(self):
        taps = tuple(self.taps)
        object.__setattr__(self, "taps", taps)
        if not taps:
            raise ValueError("backbone needs at least one tap")
        if not 2 <= len(taps) <= 6:
            raise ValueError(f"backbone tap count must be between 2 and 6, got {len(taps)}")
        for prev, cur in zip(taps, taps[1:]):
            if cur.stride != 2 * prev.stride:
                raise ValueError(
                    f"tap strides must double level to level, got {prev.stride} then {cur.stride}"
                )
        first = taps[0].stride
        if first < 2 or first & (first - 1):
            raise ValueError(f"tap strides must be powers of two >= 2, got {first}")

    @property
    def levels(self):
        return len(self.taps)

    @property
    def deepest_stride(self):
        return self.taps[-1].stride

    @classmethod
    def resnet(cls, levels=5):
        """Tap layout of the ResNet configuration (structure only, no weights)."""
        if not 1 <= levels <= len(RESNET_TAPS):
            raise ValueError(f"resnet backbone has 1..{len(RESNET_TAPS)} taps, got {levels}")
        return cls(tuple(Tap(name, 2 ** (i + 1), ch) for i, (name, ch) in enumerate(RESNET_TAPS[:levels])))

    @classmethod
    def toy(cls, levels=5, channels=TOY_CHANNELS):
        return cls(tuple(Tap(f"block{i + 1}", 2 ** (i + 1), channels[i]) for i in range(levels)))


@dataclass(frozen=True)
class SideBranchSpec:
    layer1: ConvSpec
    layer2: ConvSpec
    layer3: ConvSpec

    def __post_init__(self):
        if self.layer3.kernel != 1:
            raise ValueError("the encoding layer must be a 1x1 convolution")

    @property
    def k(self):
        return self.layer3.out_channels

    @property
    def layers(self):
        return (self.layer1, self.layer2, self.layer3)


def reference_branches(levels, k=32):
    """Side branches as listed for the ResNet taps; levels past the fifth reuse the last row."""
    out = []
    for m in range(levels):
        kernel, width = REFERENCE_LAYERS[min(m, len(REFERENCE_LAYERS) - 1)]
        out.append(SideBranchSpec(ConvSpec(width, kernel), ConvSpec(width, kernel), ConvSpec(k, 1)))
    return tuple(out)


def compact_branches(levels, k, width=8, max_kernel=3):
    """Desk-scale branches: reference kernels capped at ``max_kernel``, fixed ``width``."""
    out = []
    for m in range(levels):
        kernel, _ = REFERENCE_LAYERS[min(m, len(REFERENCE_LAYERS) - 1)]
        kernel = min(kernel, max_kernel)
        out.append(SideBranchSpec(ConvSpec(width, kernel), ConvSpec(width, kernel), ConvSpec(k, 1)))
    return tuple(out)


@dataclass(frozen=True)
class Connection:
    from_level: int
    to_level: int
    upsample_factor: int
    kernel: int
    in_channels: int
    out_channels: int
    grouped: bool

    @property
    def parameter_count(self):
        if self.grouped:
            return self.in_channels * self.kernel ** 2
        return self.in_channels * self.out_channels * self.kernel ** 2

    @property
    def name(self):
        return f"up{self.from_level}" if self.grouped else f"conn{self.from_level}to{self.to_level}"


@dataclass
class SideOutputs:
    side_maps: list
    fused: Tensor
    side_logits: list = field(default_factory=list)
    fused_logit: Tensor | None = None
    blocks: list = field(default_factory=list)  # per-level features the heads read, level 1 first


@dataclass
class NetworkGraph:
    kind: str
    backbone: BackboneSpec
    branches: tuple
    connections: tuple
    fuse_head: dict
    params: dict
    buffers: dict
    param_shapes: dict = field(default_factory=dict)

    @property
    def levels(self):
        return self.backbone.levels

    @property
    def k(self):
        return self.branches[0].k

    def parameter_count(self):
        return int(sum(int(np.prod(shape)) for shape in self.param_shapes.values()))

    def level_blocks(self):
        """Per-level concatenated channels and the stride of the map the head reads."""
        m_total = self.levels
        rows = []
        for m, tap in enumerate(self.backbone.taps, start=1):
            if self.kind == "rds":
                channels = sum(self.branches[j - 1].k for j in range(m, m_total + 1))
                out_stride = tap.stride // 2
            else:
                channels = self.branches[m - 1].k + (m_total - m)
                out_stride = tap.stride
            rows.append({"level": m, "tap": tap.name, "tap_stride": tap.stride,
                         "channels": channels, "out_stride": out_stride})
        return rows

    def summary(self):
        report = connection_param_count(self)
        return {
            "kind": self.kind,
            "levels": self.levels,
            "k": self.k,
            "blocks": self.level_blocks(),
            "branches": [[layer.label() for layer in b.layers] for b in self.branches],
            "connections": [
                {"name": c.name, "from_level": c.from_level, "to_level": c.to_level,
                 "upsample_factor": c.upsample_factor, "kernel": c.kernel,
                 "grouped": c.grouped, "parameters": c.parameter_count}
                for c in self.connections
            ],
            "connection_parameters": report.total,
            "parameter_count": self.parameter_count(),
        }

    def summary_json(self):
        return json.dumps(self.summary(), indent=2, sort_keys=True)

    def summary_text(self):
        s = self.summary()
        lines = [f"{s['kind'].upper()}  M={s['levels']}  k={s['k']}",
                 "level  tap      channels  resolution"]
        for row in s["blocks"]:
            res = "H" if row["out_stride"] == 1 else f"H/{row['out_stride']}"
            lines.append(f"{row['level']:>5}  {row['tap']:<8} {row['channels']:>8}  {res}")
        lines.append("connection      factor  kernel  parameters")
        for c in s["connections"]:
            lines.append(f"{c['name']:<15} {c['upsample_factor']:>6}  {c['kernel']:>6}  {c['parameters']:>10}")
        lines.append(f"total connection parameters: {s['connection_parameters']}")
        return "\n".join(lines)


@dataclass(frozen=True)
class ConnectionReport:
    total: int
    per_connection: tuple  # (name, parameter_count)

    @property
    def largest(self):
        return max(count for _, count in self.per_connection) if self.per_connection else 0

    def ratio_to(self, other):
        """Largest-connection ratio ``self / other``."""
        return self.largest / other.largest


def connection_param_count(graph):
    per = tuple((c.name, c.parameter_count) for c in graph.connections)
    return ConnectionReport(total=int(sum(n for _, n in per)), per_connection=per)


# --------------------------------------------------------------------------- building


def _validate(backbone, branches, k):
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if backbone is None or not backbone.taps:
        raise ValueError("backbone must have taps")
    if len(branches) != backbone.levels:
        raise ValueError(f"need {backbone.levels} side branches, got {len(branches)}")


def _xavier(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _bilinear_kernel(size):
    factor = (size + 1) // 2
    centre = factor - 1 if size % 2 == 1 else factor - 0.5
    og = np.arange(size)
    filt = 1 - np.abs(og - centre) / factor
    return np.outer(filt, filt)


class _Store:
    """Collects parameters in construction order; ``materialize=False`` records shapes only."""

    def __init__(self, seed, materialize=True):
        self.rng = np.random.default_rng(seed)
        self.materialize = materialize
        self.params = {}
        self.shapes = {}
        self.buffers = {}

    def add(self, name, shape, make):
        if name in self.shapes:
            raise ValueError(f"duplicate parameter name {name}")
        self.shapes[name] = tuple(shape)
        if self.materialize:
            self.params[name] = Tensor(make(), requires_grad=True, name=name)

    def conv(self, prefix, c_in, c_out, kernel, bias=False):
        fan_in, fan_out = c_in * kernel * kernel, c_out * kernel * kernel
        shape = (c_out, c_in, kernel, kernel)
        self.add(f"{prefix}.weight", shape, lambda: _xavier(self.rng, shape, fan_in, fan_out))
        if bias:
            self.add(f"{prefix}.bias", (c_out,), lambda: np.zeros(c_out))

    def bn(self, prefix, channels):
        self.add(f"{prefix}.gamma", (channels,), lambda: np.ones(channels))
        self.add(f"{prefix}.beta", (channels,), lambda: np.zeros(channels))
        if self.materialize:
            self.buffers[f"{prefix}.running_mean"] = np.zeros(channels)
            self.buffers[f"{prefix}.running_var"] = np.ones(channels)

    def graph(self, kind, backbone, branches, connections, fuse):
        return NetworkGraph(kind, backbone, branches, tuple(connections), fuse,
                            self.params, self.buffers, self.shapes)


def _build_common(store, backbone, branches, in_channels=3):
    # toy feature extractor: conv3/BN/ReLU/maxpool2 blocks up to the deepest tap
    n_blocks = int(np.log2(backbone.deepest_stride))
    first_tap = int(np.log2(backbone.taps[0].stride))
    c_prev = in_channels
    for b in range(1, n_blocks + 1):
        tap_idx = max(0, b - first_tap)
        c = backbone.taps[tap_idx].channels
        store.conv(f"backbone.block{b}.conv", c_prev, c, 3)
        store.bn(f"backbone.block{b}.bn", c)
        c_prev = c
    for m, (tap, branch) in enumerate(zip(backbone.taps, branches), start=1):
        c_prev = tap.channels
        for li, layer in enumerate(branch.layers, start=1):
            store.conv(f"side{m}.layer{li}", c_prev, layer.out_channels, layer.kernel)
            store.bn(f"side{m}.layer{li}.bn", layer.out_channels)
            c_prev = layer.out_channels


def _fuse_head(store, levels):
    for m in range(1, levels + 1):
        store.add(f"fuse.w{m}", (1,), lambda: np.full(1, 1.0 / levels))
    store.add("fuse.bias", (1,), lambda: np.zeros(1))
    return {"type": "weighted_logit_sum", "weights": [f"fuse.w{m}" for m in range(1, levels + 1)],
            "bias": "fuse.bias", "activation": "sigmoid"}


def build_rds(backbone, k=32, branches=None, seed=0, materialize=True):
    """Neighbour-only topology: each level receives only the level directly below it.

    ``branches`` defaults to the Table-1 filter stacks. With
    ``materialize=False`` only parameter shapes are recorded, which is enough
    for channel and parameter accounting at full width.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if backbone is None:
        raise ValueError("backbone must have taps")
    branches = tuple(branches) if branches is not None else reference_branches(backbone.levels, k)
    _validate(backbone, branches, k)
    m_total = backbone.levels
    store = _Store(seed, materialize)
    _build_common(store, backbone, branches)
    connections = []
    for m in range(m_total, 0, -1):
        channels = sum(branches[j - 1].k for j in range(m, m_total + 1))
        conn = Connection(from_level=m, to_level=m - 1, upsample_factor=2, kernel=2,
                          in_channels=channels, out_channels=channels, grouped=True)
        connections.append(conn)
        store.add(f"up{m}.weight", (channels, 2, 2), lambda c=channels: np.full((c, 2, 2), 0.25))
        store.bn(f"up{m}.bn", channels)
        store.conv(f"head{m}", channels, 1, 1, bias=True)
    fuse = _fuse_head(store, m_total)
    return store.graph("rds", backbone, branches, connections, fuse)


def build_dss(backbone, k=1, branches=None, seed=0, materialize=True):
    """Dense top-down topology: every deeper level feeds every shallower one."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if backbone is None:
        raise ValueError("backbone must have taps")
    branches = tuple(branches) if branches is not None else reference_branches(backbone.levels, k)
    _validate(backbone, branches, k)
    m_total = backbone.levels
    store = _Store(seed, materialize)
    _build_common(store, backbone, branches)
    connections = []
    for i in range(1, m_total + 1):
        for j in range(m_total, i, -1):
            factor = 2 ** (j - i)
            kernel = 2 * factor
            c_in = branches[j - 1].k
            conn = Connection(from_level=j, to_level=i, upsample_factor=factor, kernel=kernel,
                              in_channels=c_in, out_channels=1, grouped=False)
            connections.append(conn)
            shape = (c_in, 1, kernel, kernel)
            store.add(f"{conn.name}.weight", shape,
                      lambda s=shape: np.broadcast_to(_bilinear_kernel(s[-1]) / s[0], s).copy())
    for i in range(1, m_total + 1):
        channels = branches[i - 1].k + (m_total - i)
        store.conv(f"head{i}", channels, 1, 1, bias=True)
    fuse = _fuse_head(store, m_total)
    return store.graph("dss", backbone, branches, connections, fuse)


# --------------------------------------------------------------------------- forward


def _conv_bn_relu(graph, prefix, x, stride=1, padding=0, train=False):
    p, b = graph.params, graph.buffers
    y = ops.conv2d(x, p[f"{prefix}.weight"], None, stride, padding)
    y = ops.batchnorm(y, p[f"{prefix}.bn.gamma"], p[f"{prefix}.bn.beta"],
                      b[f"{prefix}.bn.running_mean"], b[f"{prefix}.bn.running_var"], train=train)
    return ops.relu(y)


def _backbone_taps(graph, x, train):
    p, b = graph.params, graph.buffers
    n_blocks = int(np.log2(graph.backbone.deepest_stride))
    tap_strides = {t.stride for t in graph.backbone.taps}
    taps = []
    for blk in range(1, n_blocks + 1):
        x = ops.conv2d(x, p[f"backbone.block{blk}.conv.weight"], None, 1, 1)
        x = ops.batchnorm(x, p[f"backbone.block{blk}.bn.gamma"], p[f"backbone.block{blk}.bn.beta"],
                          b[f"backbone.block{blk}.bn.running_mean"],
                          b[f"backbone.block{blk}.bn.running_var"], train=train)
        x = ops.maxpool2(ops.relu(x))
        if 2 ** blk in tap_strides:
            taps.append(x)
    return taps


def _side_branch(graph, m, tap, train):
    y = tap
    for li, layer in enumerate(graph.branches[m - 1].layers, start=1):
        prefix = f"side{m}.layer{li}"
        y = ops.conv2d(y, graph.params[f"{prefix}.weight"], None, layer.stride, layer.padding)
        y = ops.batchnorm(y, graph.params[f"{prefix}.bn.gamma"], graph.params[f"{prefix}.bn.beta"],
                          graph.buffers[f"{prefix}.bn.running_mean"],
                          graph.buffers[f"{prefix}.bn.running_var"], train=train)
        y = ops.relu(y)
    return y


def _head(graph, m, block, h, w):
    logit = ops.conv2d(block, graph.params[f"head{m}.weight"], graph.params[f"head{m}.bias"])
    return ops.bilinear_resize(logit, h, w)


def check_input(graph, batch):
    if not graph.params:
        raise ValueError("graph was built with materialize=False and cannot run forward")
    if batch.ndim != 4 or batch.shape[1] != 3:
        raise ShapeError(f"input batch must have shape (n, 3, h, w), got {batch.shape}")
    h, w = batch.shape[2:]
    d = graph.backbone.deepest_stride
    if h % d or w % d or h == 0 or w == 0:
        raise ShapeError(f"input extents {h}x{w} must be positive multiples of {d}")


def forward(graph, batch, train=False):
    """Run the network; ``train`` selects batch statistics for normalization."""
    batch = batch if isinstance(batch, Tensor) else Tensor(batch)
    check_input(graph, batch)
    h, w = batch.shape[2:]
    taps = _backbone_taps(graph, batch, train)
    encoded = [_side_branch(graph, m, t, train) for m, t in enumerate(taps, start=1)]
    m_total = graph.levels
    logits = [None] * m_total
    blocks = [None] * m_total
    if graph.kind == "rds":
        carry = None
        for m in range(m_total, 0, -1):
            block = encoded[m - 1] if carry is None else ops.concat_channels([encoded[m - 1], carry])
            up = ops.transposed_conv2d_grouped(block, graph.params[f"up{m}.weight"])
            up = ops.batchnorm(up, graph.params[f"up{m}.bn.gamma"], graph.params[f"up{m}.bn.beta"],
                               graph.buffers[f"up{m}.bn.running_mean"],
                               graph.buffers[f"up{m}.bn.running_var"], train=train)
            carry = ops.relu(up)
            blocks[m - 1] = carry
            logits[m - 1] = _head(graph, m, carry, h, w)
    elif graph.kind == "dss":
        for i in range(1, m_total + 1):
            parts = [encoded[i - 1]]
            for j in range(m_total, i, -1):
                factor = 2 ** (j - i)
                parts.append(ops.transposed_conv2d(encoded[j - 1], graph.params[f"conn{j}to{i}.weight"],
                                                   None, stride=factor, padding=factor // 2))
            block = parts[0] if len(parts) == 1 else ops.concat_channels(parts)
            blocks[i - 1] = block
            logits[i - 1] = _head(graph, i, block, h, w)
    else:
        raise ValueError(f"unknown graph kind {graph.kind!r}")
    weighted = [ops.scale(lg, graph.params[f"fuse.w{m}"]) for m, lg in enumerate(logits, start=1)]
    fused_logit = ops.add_scalar_param(ops.sum_all(weighted), graph.params["fuse.bias"])
    return SideOutputs(side_maps=[ops.sigmoid(lg) for lg in logits], fused=ops.sigmoid(fused_logit),
                       side_logits=logits, fused_logit=fused_logit, blocks=blocks)


def dss_prediction(outputs, selected=DSS_SELECTION):
    """Elementwise mean of the selected maps; levels are 1-based, ``"fuse"`` names the fused map."""
    selected = list(selected)
    if not selected:
        raise ValueError("selection must name at least one map")
    maps = []
    for s in selected:
        if s == "fuse":
            maps.append(outputs.fused.data)
        elif isinstance(s, (int, np.integer)) and 1 <= s <= len(outputs.side_maps):
            maps.append(outputs.side_maps[s - 1].data)
        else:
            raise ValueError(f"selection entry {s!r} does not name an output")
    total = maps[0].copy()
    for m in maps[1:]:
        total += m
    return total / len(maps)


def predict(graph, batch, selected=DSS_SELECTION):
    """Final saliency maps ``(n, h, w)``: the fused map for RDS, the selected mean for DSS."""
    from rdsnet.autograd import no_grad

    with no_grad():
        outputs = forward(graph, batch, train=False)
    if graph.kind == "rds":
        pred = outputs.fused.data
    else:
        levels = graph.levels
        pred = dss_prediction(outputs, [s for s in selected if s == "fuse" or s <= levels])
    return pred[:, 0]


def graph_spec(graph):
    """JSON-serialisable description sufficient to rebuild ``graph``'s structure."""
    return {
        "kind": graph.kind,
        "taps": [[t.name, t.stride, t.channels] for t in graph.backbone.taps],
        "branches": [[[layer.out_channels, layer.kernel] for layer in b.layers] for b in graph.branches],
    }


def graph_from_spec(spec, seed=0):
    backbone = BackboneSpec(tuple(Tap(name, stride, ch) for name, stride, ch in spec["taps"]))
    branches = tuple(SideBranchSpec(*(ConvSpec(out, kernel) for out, kernel in layers))
                     for layers in spec["branches"])
    build = {"rds": build_rds, "dss": build_dss}[spec["kind"]]
    return build(backbone, k=branches[0].k, branches=branches, seed=seed)
