"""Network presets and allocation plans.

Builders produce bottleneck baselines (ImageNet-style and 32x32-input
variants), their scale-aggregation counterparts driven by an allocation
plan, over-provisioned seed networks, and even splits. The plan text format
is line oriented: a ``scales:`` header then one ``k: C1,...,CL`` row per
block, ``#`` comments allowed.
"""

from dataclasses import dataclass, field
from importlib import resources

from .blocks import SABlockSpec, SAResidualSpec, build_sa_residual
from .netspec import NetworkSpec, SpecBuilder, SpecError, propagate_shapes

RESNET_STAGE_BLOCKS = {50: (3, 4, 6, 3), 101: (3, 4, 23, 3), 152: (3, 8, 36, 3)}
IMAGENET_SCALES = [1, 2, 4, 7]
CIFAR_SCALES = [1, 2, 4]


@dataclass
class AllocationPlan:
    """Per-block channel counts per scale, plus provenance metadata."""

    scales: list
    rows: dict  # block index k -> [C_1..C_L]
    source: str = ""
    exponent: float = None
    budgets: dict = field(default_factory=dict)  # k -> MAC budget

    def __post_init__(self):
        for k, row in self.rows.items():
            if len(row) != len(self.scales):
                raise ValueError(f"row {k} has {len(row)} entries for {len(self.scales)} scales")
            if any(c < 0 for c in row):
                raise ValueError(f"row {k} has negative channel counts")
            if sum(row) < 1:
                raise ValueError(f"row {k} keeps no channels")

    @property
    def num_blocks(self):
        return len(self.rows)

    def row(self, k):
        return self.rows[k]


def serialize_plan(plan: AllocationPlan) -> str:
    lines = ["# allocation plan"]
    lines.append("scales: " + ",".join(str(s) for s in plan.scales))
    if plan.source:
        lines.append(f"source: {plan.source}")
    if plan.exponent is not None:
        lines.append(f"b: {plan.exponent!r}")
    for k in sorted(plan.budgets):
        lines.append(f"budget {k}: {plan.budgets[k]}")
    for k in sorted(plan.rows):
        lines.append(f"{k}: " + ",".join(str(c) for c in plan.rows[k]))
    return "\n".join(lines) + "\n"


def parse_plan(text: str) -> AllocationPlan:
    scales = None
    rows = {}
    budgets = {}
    source = ""
    exponent = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise SpecError(f"expected 'key: value', got '{line}'", lineno)
        key, _, value = line.partition(":")
        key, value = key.strip(), value.strip()
        if key == "scales":
            scales = _int_list(value, lineno)
        elif key == "source":
            source = value
        elif key == "b":
            try:
                exponent = float(value)
            except ValueError:
                raise SpecError(f"bad exponent '{value}'", lineno) from None
        elif key.startswith("budget "):
            budgets[_int(key.split()[1], lineno)] = _int(value, lineno)
        else:
            k = _int(key, lineno)
            if k in rows:
                raise SpecError(f"duplicate block row {k}", lineno)
            rows[k] = _int_list(value, lineno)
    if scales is None:
        raise SpecError("missing 'scales:' header")
    if not rows:
        raise SpecError("plan has no block rows")
    try:
        return AllocationPlan(scales, rows, source, exponent, budgets)
    except ValueError as e:
        raise SpecError(str(e)) from None


def _int(text, lineno):
    try:
        return int(text)
    except ValueError:
        raise SpecError(f"bad integer '{text}'", lineno) from None


def _int_list(text, lineno):
    return [_int(p.strip(), lineno) for p in text.split(",") if p.strip()]


def load_plan(path) -> AllocationPlan:
    with open(path, encoding="utf-8") as f:
        return parse_plan(f.read())


def save_plan(plan, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(serialize_plan(plan))


def reference_plan(name) -> AllocationPlan:
    """Load one of the allocation plans shipped with the package
    (scalenet50, scalenet50-light, scalenet101, scalenet152, cifar-n4/6/11)."""
    res = resources.files("sakit.plans").joinpath(f"{name}.plan")
    try:
        text = res.read_text(encoding="utf-8")
    except FileNotFoundError:
        available = sorted(p.name[:-5] for p in resources.files("sakit.plans").iterdir()
                           if p.name.endswith(".plan"))
        raise ValueError(f"no reference plan '{name}'; available: {available}") from None
    return parse_plan(text)


# ---------------------------------------------------------------------------
# baseline builders

def _imagenet_stem(b, in_channels):
    cur = b.add("stem.conv", "conv", ["x"],
                **{"in": in_channels, "out": 64, "k": 7, "stride": 2, "pad": 3})
    cur = b.add("stem.bn", "batchnorm", [cur], c=64)
    cur = b.add("stem.relu", "relu", [cur])
    return b.add("stem.pool", "maxpool", [cur], k=3, stride=2, pad=1)


def _cifar_stem(b, in_channels, width=16):
    cur = b.add("stem.conv", "conv", ["x"],
                **{"in": in_channels, "out": width, "k": 3, "stride": 1, "pad": 1})
    cur = b.add("stem.bn", "batchnorm", [cur], c=width)
    return b.add("stem.relu", "relu", [cur])


def _head(b, cur, channels, num_classes):
    cur = b.add("head.gap", "gap", [cur])
    cur = b.add("head.fc", "dense", [cur], **{"in": channels, "out": num_classes})
    b.add("loss", "softmax_xent", [cur])


def _bottleneck(b, prefix, cur, in_ch, mid, out_ch, stride, k):
    """Plain bottleneck; stride (if any) sits on the 3x3 conv."""
    y = b.add(f"{prefix}.reduce", "conv", [cur], **{"in": in_ch, "out": mid, "k": 1})
    y = b.add(f"{prefix}.bn1", "batchnorm", [y], c=mid)
    y = b.add(f"{prefix}.relu1", "relu", [y])
    y = b.add(f"{prefix}.conv", "conv", [y],
              **{"in": mid, "out": mid, "k": 3, "stride": stride, "pad": 1, "block": k})
    y = b.add(f"{prefix}.bn2", "batchnorm", [y], c=mid)
    y = b.add(f"{prefix}.relu2", "relu", [y])
    y = b.add(f"{prefix}.expand", "conv", [y], **{"in": mid, "out": out_ch, "k": 1})
    y = b.add(f"{prefix}.bn3", "batchnorm", [y], c=out_ch)
    if stride != 1 or in_ch != out_ch:
        sc = b.add(f"{prefix}.proj", "conv", [cur],
                   **{"in": in_ch, "out": out_ch, "k": 1, "stride": stride})
        sc = b.add(f"{prefix}.projbn", "batchnorm", [sc], c=out_ch)
    else:
        sc = cur
    y = b.add(f"{prefix}.add", "add", [y, sc], block=k)
    return b.add(f"{prefix}.relu3", "relu", [y])


def build_resnet(depth, num_classes=1000, input_size=224, in_channels=3) -> NetworkSpec:
    """Bottleneck network with stage block counts keyed by depth preset."""
    if depth not in RESNET_STAGE_BLOCKS:
        raise ValueError(f"unknown depth preset {depth}; choose from {sorted(RESNET_STAGE_BLOCKS)}")
    b = SpecBuilder(f"resnet{depth}")
    b.add("x", "input", c=in_channels, h=input_size, w=input_size)
    cur = _imagenet_stem(b, in_channels)
    c_in, k = 64, 0
    for si, nblocks in enumerate(RESNET_STAGE_BLOCKS[depth], start=1):
        mid = 64 * 2 ** (si - 1)
        out = mid * 4
        for j in range(1, nblocks + 1):
            k += 1
            stride = 2 if (si > 1 and j == 1) else 1
            cur = _bottleneck(b, f"s{si}.b{j}", cur, c_in, mid, out, stride, k)
            c_in = out
    _head(b, cur, c_in, num_classes)
    return b.build()


def build_cifar_resnet(n, num_classes=100, in_channels=3) -> NetworkSpec:
    """Three-stage bottleneck net on 32x32 input; 9n+2 weighted layers.

    Stage widths are (16,16,64), (32,32,128), (64,64,256); subsampling is a
    stride-2 conv at the start of stages 2 and 3.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    b = SpecBuilder(f"cifar-n{n}")
    b.add("x", "input", c=in_channels, h=32, w=32)
    cur = _cifar_stem(b, in_channels)
    c_in, k = 16, 0
    for si in range(1, 4):
        mid = 16 * 2 ** (si - 1)
        out = mid * 4
        for j in range(1, n + 1):
            k += 1
            stride = 2 if (si > 1 and j == 1) else 1
            cur = _bottleneck(b, f"s{si}.b{j}", cur, c_in, mid, out, stride, k)
            c_in = out
    _head(b, cur, c_in, num_classes)
    return b.build()


def weighted_layer_count(spec: NetworkSpec) -> int:
    """Convs on the main path plus dense layers; projection shortcuts excluded."""
    n = 0
    for node in spec.nodes:
        if node.op == "dense":
            n += 1
        elif node.op == "conv" and not node.name.endswith(".proj"):
            n += 1
    return n


# ---------------------------------------------------------------------------
# scale-aggregation transforms

@dataclass
class BottleneckDesc:
    block_index: int
    in_channels: int
    mid: int
    out_channels: int
    stride: int
    h: int  # 3x3 conv output dims = aggregation-block working dims
    w: int


def describe_bottlenecks(base: NetworkSpec):
    """Recover per-block structure from a tagged baseline spec.

    Returns (stem_output_name, [BottleneckDesc...]); requires the spec to be
    one produced by the builders above (tagged 3x3 convs in bottlenecks).
    """
    convs = base.baseline_convs()
    if not convs:
        raise SpecError(f"'{base.name}' has no tagged 3x3 bottleneck convs to replace")
    shapes = propagate_shapes(base)
    descs = []
    stem_out = None
    for k, c3 in convs.items():
        red = _producer_of_op(base, c3.inputs[0], "conv")
        exp = _consumer_of_op(base, c3.name, "conv")
        _, h, w = shapes[c3.name]
        descs.append(BottleneckDesc(k, red.attrs["in"], c3.attrs["in"],
                                    exp.attrs["out"], c3.attrs.get("stride", 1), h, w))
        if k == min(convs):
            stem_out = _block_input(base, red)
    return stem_out, descs


def _producer_of_op(spec, name, op):
    node = spec.node(name)
    while node.op != op:
        if not node.inputs:
            raise SpecError(f"no upstream {op} found from '{name}'")
        node = spec.node(node.inputs[0])
    return node


def _consumer_of_op(spec, name, op):
    node = spec.node(name)
    while True:
        nexts = spec.consumers(node.name)
        if not nexts:
            raise SpecError(f"no downstream {op} found from '{name}'")
        node = nexts[0]
        if node.op == op:
            return node


def _block_input(spec, reduce_conv):
    return reduce_conv.inputs[0]


def build_scalenet(base: NetworkSpec, plan: AllocationPlan,
                   downsample: str = "max") -> NetworkSpec:
    """Replace every tagged 3x3 bottleneck conv with an aggregation block.

    Strided baselines become a standalone 2x2 max pool in front of the
    residual (all aggregation convs run at stride 1); the 1x1 expand input
    width follows the plan row sum. The plan must have one row per block.
    """
    stem_out, descs = describe_bottlenecks(base)
    want = {d.block_index for d in descs}
    if set(plan.rows) != want:
        raise SpecError(
            f"plan rows {sorted(plan.rows)} do not match blocks {sorted(want)}")
    shapes = propagate_shapes(base)
    b = SpecBuilder(_derived_name(base.name, plan))
    # stem nodes copied verbatim
    cur = None
    for node in base.nodes:
        b.add(node.name, node.op, list(node.inputs), **dict(node.attrs))
        if node.name == stem_out:
            cur = node.name
            break
    c_in = shapes[stem_out][0]
    for d in descs:
        prefix = f"sa{d.block_index}"
        if d.stride == 2:
            cur = b.add(f"{prefix}.pool", "maxpool", [cur], k=2, stride=2)
        elif d.stride != 1:
            raise SpecError(f"unsupported baseline stride {d.stride}")
        sa = SABlockSpec(d.mid, list(plan.scales), list(plan.row(d.block_index)),
                         d.block_index, downsample=downsample, base_channels=d.mid)
        shortcut = "identity" if c_in == d.out_channels else "projection"
        res = SAResidualSpec(c_in, d.mid, sa, d.out_channels, shortcut)
        cur = build_sa_residual(b, prefix, cur, res, d.h, d.w)
        c_in = d.out_channels
    _head(b, cur, c_in, base.num_classes)
    return b.build()


def _derived_name(base_name, plan):
    tag = plan.source if plan.source else "plan"
    return f"scale-{base_name}-{tag}" if tag != base_name else f"scale-{base_name}"


def build_seed(base: NetworkSpec, scale_factors, downsample: str = "max") -> NetworkSpec:
    """Over-provisioned network: every scale gets the full baseline width,
    so each block carries len(scale_factors) * C output channels."""
    _, descs = describe_bottlenecks(base)
    rows = {d.block_index: [d.mid] * len(scale_factors) for d in descs}
    plan = AllocationPlan(list(scale_factors), rows, source="seed")
    return build_scalenet(base, plan, downsample=downsample)


def even_allocation(base: NetworkSpec, scale_factors) -> AllocationPlan:
    """Split each block's baseline width evenly; leftover channels go one
    each to the finest scales."""
    _, descs = describe_bottlenecks(base)
    L = len(scale_factors)
    rows = {}
    for d in descs:
        q, r = divmod(d.mid, L)
        rows[d.block_index] = [q + (1 if i < r else 0) for i in range(L)]
    return AllocationPlan(list(scale_factors), rows, source="even")


def seed_plan(base: NetworkSpec, scale_factors) -> AllocationPlan:
    _, descs = describe_bottlenecks(base)
    rows = {d.block_index: [d.mid] * len(scale_factors) for d in descs}
    return AllocationPlan(list(scale_factors), rows, source="seed")
