"""Per-op finite-difference harness.

Each op under test is embedded in a minimal f64 graph (input -> op ->
global-average -> cross-entropy) and checked against central differences,
probing both parameters and the input tensor. Input sampling respects each
op's smoothness: relu inputs keep a margin from zero and pooled inputs are
drawn from a shuffled lattice so no two window entries sit within the
finite-difference step of each other.
"""

import numpy as np

from sakit.autograd import Graph, gradcheck
from sakit.netspec import SpecBuilder, conv_out_dim
from sakit.rng import stream

OPS_UNDER_TEST = ("conv", "maxpool", "avgpool", "resize", "batchnorm", "relu",
                  "concat", "add", "gap", "dense", "softmax_xent")


def _head(b, cur, channels, classes):
    cur = b.add("t.gap", "gap", [cur]) if channels else cur
    cur = b.add("t.fc", "dense", [cur], **{"in": channels or classes, "out": classes})
    b.add("loss", "softmax_xent", [cur])


def smooth_input(rng, shape):
    return rng.uniform(-1, 1, size=shape)


def kink_free_input(rng, shape, margin=0.05):
    x = rng.uniform(-1, 1, size=shape)
    return np.where(np.abs(x) < margin, x + np.sign(x + 0.5) * margin * 2, x)


def lattice_input(rng, shape, gap=0.01):
    """Pairwise value gaps >= gap, so +-h probes cannot flip an argmax."""
    n = int(np.prod(shape))
    vals = (np.arange(n) - n / 2) * gap
    return rng.permutation(vals).reshape(shape).astype(np.float64)


def build_case(op, rng):
    """Random small graph exercising ``op``; returns (spec, x, labels)."""
    c = int(rng.integers(1, 4))
    h = int(rng.integers(3, 8))
    w = int(rng.integers(3, 8))
    n = int(rng.integers(1, 3))
    classes = int(rng.integers(2, 5))
    b = SpecBuilder(f"fd-{op}")
    b.add("x", "input", c=c, h=h, w=w)
    x = smooth_input(rng, (n, c, h, w))

    if op == "conv":
        k = int(rng.choice([1, 3, 7]))
        stride = int(rng.integers(1, 3))
        dilation = int(rng.choice([1, 2])) if k > 1 else 1
        pad = {1: 0, 3: dilation, 7: 3 * dilation}[k]
        while conv_out_dim(min(h, w), k, stride, dilation, pad) < 1:
            h += 4; w += 4
            b = SpecBuilder("fd-conv")
            b.add("x", "input", c=c, h=h, w=w)
            x = smooth_input(rng, (n, c, h, w))
        cout = int(rng.integers(1, 4))
        b.add("op", "conv", ["x"], **{"in": c, "out": cout, "k": k,
                                      "stride": stride, "dilation": dilation,
                                      "pad": pad, "bias": int(rng.integers(0, 2))})
        _head(b, "op", cout, classes)
    elif op in ("maxpool", "avgpool"):
        k = int(rng.choice([2, 3]))
        stride = int(rng.choice([1, 2, k]))
        ceil = int(rng.integers(0, 2))
        b.add("op", op, ["x"], k=k, stride=stride, ceil=ceil)
        _head(b, "op", c, classes)
        if op == "maxpool":
            x = lattice_input(rng, (n, c, h, w))
    elif op == "resize":
        oh = int(rng.integers(1, 2 * h + 2))
        ow = int(rng.integers(1, 2 * w + 2))
        b.add("op", "resize", ["x"], h=oh, w=ow)
        _head(b, "op", c, classes)
    elif op == "batchnorm":
        b.add("op", "batchnorm", ["x"], c=c)
        _head(b, "op", c, classes)
        if n * h * w < 2:
            x = smooth_input(rng, (2, c, h, w))
    elif op == "relu":
        b.add("op", "relu", ["x"])
        _head(b, "op", c, classes)
        x = kink_free_input(rng, (n, c, h, w))
    elif op == "concat":
        b.add("c2", "conv", ["x"], **{"in": c, "out": 2, "k": 1})
        b.add("op", "concat", ["x", "c2"])
        _head(b, "op", c + 2, classes)
    elif op == "add":
        b.add("c2", "conv", ["x"], **{"in": c, "out": c, "k": 1})
        b.add("op", "add", ["x", "c2"])
        _head(b, "op", c, classes)
    elif op == "gap":
        b.add("op", "gap", ["x"])
        b.add("t.fc", "dense", ["op"], **{"in": c, "out": classes})
        b.add("loss", "softmax_xent", ["t.fc"])
    elif op == "dense":
        b.add("g", "gap", ["x"])
        b.add("op", "dense", ["g"], **{"in": c, "out": classes})
        b.add("loss", "softmax_xent", ["op"])
    elif op == "softmax_xent":
        b.add("g", "gap", ["x"])
        b.add("loss", "softmax_xent", ["g"])
        classes = c if c >= 2 else 2
        if c < 2:
            b = SpecBuilder("fd-xent")
            b.add("x", "input", c=2, h=h, w=w)
            b.add("g", "gap", ["x"])
            b.add("loss", "softmax_xent", ["g"])
            x = smooth_input(rng, (n, 2, h, w))
    else:
        raise ValueError(op)

    spec = b.build()
    labels = rng.integers(0, classes, size=x.shape[0])
    return spec, np.asarray(x, dtype=np.float64), labels


def check_op(op, shapes, seed, tolerance=1e-5, max_entries=20):
    """Run ``shapes`` random cases of ``op``; returns (worst_err, failures)."""
    worst = 0.0
    failures = []
    for i in range(shapes):
        rng = stream(seed, "fd", op, i)
        spec, x, labels = build_case(op, rng)
        graph = Graph(spec, dtype=np.float64, seed=int(rng.integers(0, 2 ** 31)))
        report = gradcheck(graph, x, labels, tolerance=tolerance,
                           max_entries=max_entries, seed=seed)
        worst = max(worst, report.max_rel_err)
        if not report.ok:
            failures.append((op, i, [(e.param, e.max_rel_err)
                                     for e in report.entries if not e.ok]))
    return worst, failures
