"""Architecture graphs: layer nodes, text round-tripping, shape propagation.

A network is an ordered DAG of layer nodes, weight-free. The text form is
line oriented (one node per line, ``name = op(key=val,...) <- in1,in2``) so
specs diff cleanly and can be embedded verbatim in checkpoints.
"""

import re
from dataclasses import dataclass, field


class SpecError(ValueError):
    """Malformed spec text or inconsistent node wiring."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ShapeError(ValueError):
    """Shape propagation failure; carries the offending node name."""

    def __init__(self, node, message):
        super().__init__(f"node '{node}': {message}")
        self.node = node


# op name -> required attrs (others are optional markers such as block/scale)
KNOWN_OPS = {
    "input": ("c", "h", "w"),
    "conv": ("in", "out", "k"),
    "maxpool": ("k", "stride"),
    "avgpool": ("k", "stride"),
    "resize": ("h", "w"),
    "batchnorm": ("c",),
    "relu": (),
    "concat": (),
    "add": (),
    "gap": (),
    "dense": ("in", "out"),
    "softmax_xent": (),
}

# canonical attribute order for serialization
_ATTR_ORDER = [
    "c", "in", "out", "k", "stride", "dilation", "pad", "bias", "ceil",
    "h", "w", "eps", "momentum", "block", "scale", "base",
]

_NODE_RE = re.compile(
    r"^(?P<name>[\w.\-]+)\s*=\s*(?P<op>\w+)\((?P<args>[^)]*)\)"
    r"(?:\s*<-\s*(?P<inputs>[\w.\-, ]*))?$"
)


@dataclass
class LayerSpec:
    """One node: operation, attributes, and input node names."""

    name: str
    op: str
    inputs: list = field(default_factory=list)
    attrs: dict = field(default_factory=dict)

    def get(self, key, default=None):
        return self.attrs.get(key, default)


@dataclass
class NetworkSpec:
    """Named, ordered node list describing an architecture without weights."""

    name: str
    nodes: list = field(default_factory=list)

    def __post_init__(self):
        self._index = {n.name: i for i, n in enumerate(self.nodes)}
        if len(self._index) != len(self.nodes):
            raise SpecError(f"duplicate node names in '{self.name}'")

    def node(self, name) -> LayerSpec:
        return self.nodes[self._index[name]]

    def __contains__(self, name):
        return name in self._index

    @property
    def input_shape(self):
        n = self._find_one("input")
        return (n.attrs["c"], n.attrs["h"], n.attrs["w"])

    @property
    def num_classes(self):
        for n in reversed(self.nodes):
            if n.op == "dense":
                return n.attrs["out"]
        raise SpecError(f"'{self.name}' has no dense head")

    @property
    def input_name(self):
        return self._find_one("input").name

    @property
    def loss_name(self):
        return self._find_one("softmax_xent").name

    @property
    def logits_name(self):
        return self._find_one("softmax_xent").inputs[0]

    def _find_one(self, op):
        found = [n for n in self.nodes if n.op == op]
        if len(found) != 1:
            raise SpecError(f"'{self.name}' needs exactly one {op} node, has {len(found)}")
        return found[0]

    def consumers(self, name):
        return [n for n in self.nodes if name in n.inputs]

    def sa_blocks(self):
        """Map block index -> list of (scale, conv node, batchnorm node).

        An SA per-scale conv is a conv node tagged with both ``block`` and
        ``scale`` attrs; its batchnorm is the unique consumer of that conv.
        """
        blocks = {}
        for n in self.nodes:
            if n.op == "conv" and "block" in n.attrs and "scale" in n.attrs:
                bns = [c for c in self.consumers(n.name) if c.op == "batchnorm"]
                if len(bns) != 1:
                    raise SpecError(f"SA conv '{n.name}' has no unique batchnorm consumer")
                blocks.setdefault(n.attrs["block"], []).append(
                    (n.attrs["scale"], n, bns[0])
                )
        for k in blocks:
            blocks[k].sort(key=lambda t: t[0])
        return dict(sorted(blocks.items()))

    def block_outputs(self):
        """Map block index -> name of the residual-add node closing the block."""
        out = {}
        for n in self.nodes:
            if n.op == "add" and "block" in n.attrs:
                out[n.attrs["block"]] = n.name
        return dict(sorted(out.items()))

    def baseline_convs(self):
        """Map block index -> the tagged 3x3 conv of a plain bottleneck."""
        out = {}
        for n in self.nodes:
            if n.op == "conv" and "block" in n.attrs and "scale" not in n.attrs:
                out[n.attrs["block"]] = n
        return dict(sorted(out.items()))

    def to_text(self) -> str:
        lines = [f"network {self.name}"]
        for n in self.nodes:
            lines.append(format_node(n))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text) -> "NetworkSpec":
        name = None
        nodes = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("network "):
                name = line[len("network "):].strip()
                continue
            nodes.append(parse_node(line, lineno))
        if name is None:
            raise SpecError("missing 'network <name>' header")
        spec = cls(name, nodes)
        validate(spec)
        return spec


def format_attr_value(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_node(n: LayerSpec) -> str:
    keys = [k for k in _ATTR_ORDER if k in n.attrs]
    keys += sorted(k for k in n.attrs if k not in _ATTR_ORDER)
    args = ",".join(f"{k}={format_attr_value(n.attrs[k])}" for k in keys)
    line = f"{n.name} = {n.op}({args})"
    if n.inputs:
        line += " <- " + ",".join(n.inputs)
    return line


def _parse_value(text, lineno):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    if re.fullmatch(r"[\w\-]+", text):
        return text
    raise SpecError(f"bad attribute value '{text}'", lineno)


def parse_node(line, lineno=None) -> LayerSpec:
    m = _NODE_RE.match(line)
    if not m:
        raise SpecError(f"unparseable node line '{line}'", lineno)
    op = m.group("op")
    if op not in KNOWN_OPS:
        raise SpecError(f"unknown op '{op}'", lineno)
    attrs = {}
    args = m.group("args").strip()
    if args:
        for part in args.split(","):
            if "=" not in part:
                raise SpecError(f"bad attribute '{part}'", lineno)
            k, v = part.split("=", 1)
            attrs[k.strip()] = _parse_value(v.strip(), lineno)
    for req in KNOWN_OPS[op]:
        if req not in attrs:
            raise SpecError(f"op '{op}' missing required attr '{req}'", lineno)
    inputs = []
    if m.group("inputs"):
        inputs = [s.strip() for s in m.group("inputs").split(",") if s.strip()]
    return LayerSpec(m.group("name"), op, inputs, attrs)


def validate(spec: NetworkSpec):
    """Check the node list is a DAG in topological order with known wiring."""
    seen = set()
    for n in spec.nodes:
        if n.op not in KNOWN_OPS:
            raise SpecError(f"unknown op '{n.op}' at node '{n.name}'")
        if n.op == "input" and n.inputs:
            raise SpecError(f"input node '{n.name}' must not have inputs")
        if n.op != "input" and not n.inputs:
            raise SpecError(f"node '{n.name}' has no inputs")
        for i in n.inputs:
            if i not in seen:
                raise SpecError(f"node '{n.name}' uses '{i}' before definition")
        seen.add(n.name)


def conv_out_dim(size, k, stride, dilation, pad):
    eff = dilation * (k - 1) + 1
    return (size + 2 * pad - eff) // stride + 1


def pool_out_dim(size, k, stride, pad, ceil_mode):
    span = size + 2 * pad - k
    if ceil_mode:
        out = max(-(-span // stride), 0) + 1
        return out if (out - 1) * stride < size + 2 * pad else 0
    return span // stride + 1 if span >= 0 else 0


def propagate_shapes(spec: NetworkSpec) -> dict:
    """Per-sample output shape of every node: (C,H,W), (C,) or () for the loss."""
    shapes = {}
    for n in spec.nodes:
        ins = [shapes[i] for i in n.inputs]
        shapes[n.name] = _node_shape(n, ins)
    return shapes


def _node_shape(n: LayerSpec, ins):
    a = n.attrs
    if n.op == "input":
        return (a["c"], a["h"], a["w"])
    if n.op == "conv":
        c, h, w = _want3(n, ins[0])
        if c != a["in"]:
            raise ShapeError(n.name, f"expects {a['in']} channels, got {c}")
        k, s = a["k"], a.get("stride", 1)
        d, p = a.get("dilation", 1), a.get("pad", 0)
        ho = conv_out_dim(h, k, s, d, p)
        wo = conv_out_dim(w, k, s, d, p)
        if ho < 1 or wo < 1:
            raise ShapeError(n.name, f"non-positive output dims {ho}x{wo}")
        return (a["out"], ho, wo)
    if n.op in ("maxpool", "avgpool"):
        c, h, w = _want3(n, ins[0])
        k, s = a["k"], a["stride"]
        p, ceil = a.get("pad", 0), bool(a.get("ceil", 0))
        ho = pool_out_dim(h, k, s, p, ceil)
        wo = pool_out_dim(w, k, s, p, ceil)
        if ho < 1 or wo < 1:
            raise ShapeError(n.name, f"window {k} exceeds padded input {h}x{w}")
        return (c, ho, wo)
    if n.op == "resize":
        c, h, w = _want3(n, ins[0])
        if a["h"] < 1 or a["w"] < 1:
            raise ShapeError(n.name, "target dims must be >= 1")
        return (c, a["h"], a["w"])
    if n.op == "batchnorm":
        c, h, w = _want3(n, ins[0])
        if c != a["c"]:
            raise ShapeError(n.name, f"expects {a['c']} channels, got {c}")
        return (c, h, w)
    if n.op == "relu":
        return ins[0]
    if n.op == "concat":
        if not ins:
            raise ShapeError(n.name, "concat of nothing")
        c0, h0, w0 = _want3(n, ins[0])
        total = c0
        for s3 in ins[1:]:
            c, h, w = _want3(n, s3)
            if (h, w) != (h0, w0):
                raise ShapeError(n.name, f"spatial mismatch {h}x{w} vs {h0}x{w0}")
            total += c
        return (total, h0, w0)
    if n.op == "add":
        if ins[0] != ins[1]:
            raise ShapeError(n.name, f"operand shapes differ: {ins[0]} vs {ins[1]}")
        return ins[0]
    if n.op == "gap":
        c, _, _ = _want3(n, ins[0])
        return (c,)
    if n.op == "dense":
        if len(ins[0]) != 1 or ins[0][0] != a["in"]:
            raise ShapeError(n.name, f"expects ({a['in']},) vector, got {ins[0]}")
        return (a["out"],)
    if n.op == "softmax_xent":
        if len(ins[0]) != 1:
            raise ShapeError(n.name, f"logits must be a vector, got {ins[0]}")
        return ()
    raise ShapeError(n.name, f"unhandled op '{n.op}'")


def _want3(n, shape):
    if len(shape) != 3:
        raise ShapeError(n.name, f"needs a CHW tensor, got shape {shape}")
    return shape


def ancestors(spec: NetworkSpec, name) -> "NetworkSpec":
    """Truncated spec containing `name` and everything it depends on."""
    keep = set()
    stack = [name]
    while stack:
        cur = stack.pop()
        if cur in keep:
            continue
        keep.add(cur)
        stack.extend(spec.node(cur).inputs)
    nodes = [n for n in spec.nodes if n.name in keep]
    return NetworkSpec(f"{spec.name}::{name}", nodes)


class SpecBuilder:
    """Incremental constructor used by the preset and block builders."""

    def __init__(self, name):
        self.name = name
        self.nodes = []
        self._names = set()

    def add(self, name, op, inputs=(), **attrs) -> str:
        if name in self._names:
            raise SpecError(f"duplicate node '{name}'")
        self._names.add(name)
        self.nodes.append(LayerSpec(name, op, list(inputs), dict(attrs)))
        return name

    def build(self) -> NetworkSpec:
        spec = NetworkSpec(self.name, self.nodes)
        validate(spec)
        return spec
