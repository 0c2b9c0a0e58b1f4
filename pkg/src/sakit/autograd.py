"""Reverse-mode autodiff over a static graph built from a NetworkSpec.

The graph owns named parameter and state arrays; forward caches every node
output so backward can run once per forward. Execution is single-threaded
and free of hidden randomness: identical weights, inputs and mode flags give
bitwise-identical outputs.
"""

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .netspec import NetworkSpec, ShapeError, propagate_shapes
from .rng import stream


class Node:
    """Runtime half of one LayerSpec: kernels plus per-pass cache."""

    def __init__(self, layer, in_shapes):
        self.layer = layer
        self.name = layer.name
        self.in_shapes = in_shapes
        self.cache = None

    def param_shapes(self):
        return {}

    def state_shapes(self):
        return {}

    def init_params(self, params, rng_for):
        pass

    def forward(self, xs, params, state, training):
        raise NotImplementedError

    def backward(self, dy, params):
        """Return (grads w.r.t. inputs, grads w.r.t. own params)."""
        raise NotImplementedError


class InputNode(Node):
    def forward(self, xs, params, state, training):
        return xs[0]

    def backward(self, dy, params):
        return [dy], {}


class ConvNode(Node):
    def __init__(self, layer, in_shapes):
        super().__init__(layer, in_shapes)
        a = layer.attrs
        self.k = a["k"]
        self.stride = a.get("stride", 1)
        self.dilation = a.get("dilation", 1)
        self.pad = a.get("pad", 0)
        self.cin, self.cout = a["in"], a["out"]
        self.has_bias = bool(a.get("bias", 0))
        self.wname = f"{self.name}.weight"
        self.bname = f"{self.name}.bias"

    def param_shapes(self):
        shapes = {self.wname: (self.cout, self.cin, self.k, self.k)}
        if self.has_bias:
            shapes[self.bname] = (self.cout,)
        return shapes

    def init_params(self, params, rng_for):
        fan_in = self.cin * self.k * self.k
        std = np.sqrt(2.0 / fan_in)
        w = params[self.wname]
        w[...] = rng_for(self.wname).normal(0.0, std, size=w.shape)
        if self.has_bias:
            params[self.bname][...] = 0.0

    def forward(self, xs, params, state, training):
        y, self.cache = ops.conv2d_forward(
            xs[0], params[self.wname], self.stride, self.dilation, self.pad)
        if self.has_bias:
            y += params[self.bname][None, :, None, None]
        return y

    def backward(self, dy, params):
        dx, dw = ops.conv2d_backward(dy, params[self.wname], self.cache)
        grads = {self.wname: dw}
        if self.has_bias:
            grads[self.bname] = dy.sum(axis=(0, 2, 3))
        return [dx], grads


class PoolNode(Node):
    def __init__(self, layer, in_shapes):
        super().__init__(layer, in_shapes)
        a = layer.attrs
        self.kind = layer.op
        self.k, self.stride = a["k"], a["stride"]
        self.pad = a.get("pad", 0)
        self.ceil = bool(a.get("ceil", 0))

    def forward(self, xs, params, state, training):
        fn = ops.maxpool2d_forward if self.kind == "maxpool" else ops.avgpool2d_forward
        y, self.cache = fn(xs[0], self.k, self.stride, self.pad, self.ceil)
        return y

    def backward(self, dy, params):
        fn = ops.maxpool2d_backward if self.kind == "maxpool" else ops.avgpool2d_backward
        return [fn(dy, self.cache)], {}


class ResizeNode(Node):
    def forward(self, xs, params, state, training):
        y, self.cache = ops.resize_nearest_forward(
            xs[0], self.layer.attrs["h"], self.layer.attrs["w"])
        return y

    def backward(self, dy, params):
        return [ops.resize_nearest_backward(dy, self.cache)], {}


class BatchNormNode(Node):
    def __init__(self, layer, in_shapes):
        super().__init__(layer, in_shapes)
        a = layer.attrs
        self.c = a["c"]
        self.eps = a.get("eps", 1e-5)
        self.momentum = a.get("momentum", 0.1)
        self.gname = f"{self.name}.gamma"
        self.bname = f"{self.name}.beta"
        self.mname = f"{self.name}.running_mean"
        self.vname = f"{self.name}.running_var"

    def param_shapes(self):
        return {self.gname: (self.c,), self.bname: (self.c,)}

    def state_shapes(self):
        return {self.mname: (self.c,), self.vname: (self.c,)}

    def init_params(self, params, rng_for):
        params[self.gname][...] = 1.0
        params[self.bname][...] = 0.0

    def forward(self, xs, params, state, training):
        y, self.cache, new_mean, new_var = ops.batchnorm2d_forward(
            xs[0], params[self.gname], params[self.bname],
            state[self.mname], state[self.vname],
            self.eps, self.momentum, training)
        if training:
            state[self.mname] = new_mean
            state[self.vname] = new_var
        return y

    def backward(self, dy, params):
        dx, dgamma, dbeta = ops.batchnorm2d_backward(dy, self.cache)
        return [dx], {self.gname: dgamma, self.bname: dbeta}


class ReluNode(Node):
    def forward(self, xs, params, state, training):
        y, self.cache = ops.relu_forward(xs[0])
        return y

    def backward(self, dy, params):
        return [ops.relu_backward(dy, self.cache)], {}


class AddNode(Node):
    def forward(self, xs, params, state, training):
        return ops.add_forward(xs[0], xs[1])

    def backward(self, dy, params):
        return [dy, dy], {}


class ConcatNode(Node):
    def forward(self, xs, params, state, training):
        y, self.cache = ops.concat_channels_forward(xs)
        return y

    def backward(self, dy, params):
        return ops.concat_channels_backward(dy, self.cache), {}


class GapNode(Node):
    def forward(self, xs, params, state, training):
        y, self.cache = ops.global_avg_pool_forward(xs[0])
        return y

    def backward(self, dy, params):
        return [ops.global_avg_pool_backward(dy, self.cache)], {}


class DenseNode(Node):
    def __init__(self, layer, in_shapes):
        super().__init__(layer, in_shapes)
        self.cin, self.cout = layer.attrs["in"], layer.attrs["out"]
        self.wname = f"{self.name}.weight"
        self.bname = f"{self.name}.bias"

    def param_shapes(self):
        return {self.wname: (self.cin, self.cout), self.bname: (self.cout,)}

    def init_params(self, params, rng_for):
        std = np.sqrt(2.0 / self.cin)
        w = params[self.wname]
        w[...] = rng_for(self.wname).normal(0.0, std, size=w.shape)
        params[self.bname][...] = 0.0

    def forward(self, xs, params, state, training):
        y, self.cache = ops.dense_forward(xs[0], params[self.wname], params[self.bname])
        return y

    def backward(self, dy, params):
        dx, dw, db = ops.dense_backward(dy, params[self.wname], self.cache)
        return [dx], {self.wname: dw, self.bname: db}


class SoftmaxXentNode(Node):
    labels = None  # set by Graph.forward

    def forward(self, xs, params, state, training):
        if self.labels is None:
            raise ValueError(f"loss node '{self.name}' needs labels")
        y, self.cache = ops.softmax_cross_entropy_forward(xs[0], self.labels)
        return y

    def backward(self, dy, params):
        return [ops.softmax_cross_entropy_backward(dy, self.cache)], {}


_NODE_TYPES = {
    "input": InputNode,
    "conv": ConvNode,
    "maxpool": PoolNode,
    "avgpool": PoolNode,
    "resize": ResizeNode,
    "batchnorm": BatchNormNode,
    "relu": ReluNode,
    "add": AddNode,
    "concat": ConcatNode,
    "gap": GapNode,
    "dense": DenseNode,
    "softmax_xent": SoftmaxXentNode,
}


class Graph:
    """Executable network: ordered nodes, named parameters, named state."""

    def __init__(self, spec: NetworkSpec, dtype=np.float32, seed=0, init=True):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.shapes = propagate_shapes(spec)
        self.nodes = []
        for layer in spec.nodes:
            in_shapes = [self.shapes[i] for i in layer.inputs]
            self.nodes.append(_NODE_TYPES[layer.op](layer, in_shapes))
        self._by_name = {n.name: n for n in self.nodes}
        self.params = {}
        self.state = {}
        for node in self.nodes:
            for pname, shape in node.param_shapes().items():
                self.params[pname] = np.zeros(shape, dtype=self.dtype)
            for sname, shape in node.state_shapes().items():
                init_val = 1.0 if sname.endswith("running_var") else 0.0
                self.state[sname] = np.full(shape, init_val, dtype=self.dtype)
        if init:
            self.init_params(seed)
        self.activations = None

    def init_params(self, seed):
        def rng_for(pname):
            return stream(seed, "init", pname)
        for node in self.nodes:
            node.init_params(self.params, rng_for)

    def forward(self, x, labels=None, mode="train"):
        """Run every node; returns the activation dict (name -> array)."""
        if mode not in ("train", "infer"):
            raise ValueError(f"unknown mode '{mode}'")
        training = mode == "train"
        x = np.ascontiguousarray(x, dtype=self.dtype)
        self._check_input(x)
        acts = {}
        for node in self.nodes:
            if isinstance(node, SoftmaxXentNode):
                node.labels = labels
            xs = [acts[i] for i in node.layer.inputs] if node.layer.inputs else [x]
            try:
                acts[node.name] = node.forward(xs, self.params, self.state, training)
            except ValueError as e:
                raise ShapeError(node.name, str(e)) from e
        self.activations = acts
        return acts

    def _check_input(self, x):
        c, h, w = self.spec.input_shape
        if x.ndim != 4 or x.shape[1:] != (c, h, w):
            raise ShapeError(self.spec.input_name,
                             f"expects (N,{c},{h},{w}) input, got {x.shape}")

    def backward(self, loss_name=None):
        """Gradients of the scalar loss for every parameter (zeros if unused)."""
        if self.activations is None:
            raise RuntimeError("backward before forward")
        loss_name = loss_name or self.spec.loss_name
        loss = self.activations[loss_name]
        if np.ndim(loss) != 0:
            raise ValueError(f"loss node '{loss_name}' is not scalar: shape {np.shape(loss)}")
        grads = {p: np.zeros_like(v) for p, v in self.params.items()}
        flowing = {loss_name: np.asarray(1.0, dtype=self.dtype)}
        self.input_grad = None
        for node in reversed(self.nodes):
            dy = flowing.pop(node.name, None)
            if dy is None:
                continue
            dxs, dparams = node.backward(dy, self.params)
            if isinstance(node, InputNode):
                self.input_grad = dxs[0]
            for pname, g in dparams.items():
                grads[pname] += g
            for in_name, dx in zip(node.layer.inputs, dxs):
                if in_name in flowing:
                    flowing[in_name] = flowing[in_name] + dx
                else:
                    flowing[in_name] = dx
        self.grads = grads
        return grads

    def infer(self, x):
        """Label-free forward pass (loss node skipped); activation dict."""
        return self._forward_skipping_loss(x, mode="infer")

    def _forward_skipping_loss(self, x, mode):
        # inference without labels: run all nodes except the loss
        training = mode == "train"
        x = np.ascontiguousarray(x, dtype=self.dtype)
        self._check_input(x)
        acts = {}
        for node in self.nodes:
            if isinstance(node, SoftmaxXentNode):
                continue
            xs = [acts[i] for i in node.layer.inputs] if node.layer.inputs else [x]
            acts[node.name] = node.forward(xs, self.params, self.state, training)
        self.activations = acts
        return acts


@dataclass
class GradcheckEntry:
    param: str
    max_rel_err: float
    ok: bool


@dataclass
class GradcheckReport:
    tolerance: float
    entries: list = field(default_factory=list)

    @property
    def ok(self):
        return all(e.ok for e in self.entries)

    @property
    def max_rel_err(self):
        return max((e.max_rel_err for e in self.entries), default=0.0)


def gradcheck(graph: Graph, x, labels=None, tolerance=1e-5, h=1e-4,
              max_entries=None, seed=0, check_input=True) -> GradcheckReport:
    """Compare analytic gradients against central finite differences.

    Requires an f64 graph. Every parameter is probed, plus the network input
    itself when ``check_input`` is set (so parameter-free ops are covered).
    The per-tensor error is the largest entrywise |analytic - numeric|
    scaled by max(1, ||numeric||_inf). Non-finite analytic gradients fail
    immediately with the offending tensor named.
    """
    if graph.dtype != np.float64:
        raise ValueError("gradcheck requires a float64 graph")
    x = np.array(x, dtype=np.float64)
    loss_name = graph.spec.loss_name

    def loss_at():
        acts = graph.forward(x, labels, mode="train")
        return float(acts[loss_name])

    loss_at()
    grads = dict(graph.backward())
    targets = {pname: (graph.params[pname], grads[pname])
               for pname in sorted(graph.params)}
    if check_input:
        targets["(input)"] = (x, graph.input_grad)
    report = GradcheckReport(tolerance)
    for tname, (buf, analytic) in targets.items():
        if analytic is None or not np.all(np.isfinite(analytic)):
            report.entries.append(GradcheckEntry(tname, float("inf"), False))
            continue
        flat = buf.reshape(-1)
        idxs = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idxs = stream(seed, "gradcheck", tname).choice(
                flat.size, size=max_entries, replace=False)
        numeric = np.zeros(len(idxs))
        for j, i in enumerate(idxs):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_at()
            flat[i] = orig - h
            down = loss_at()
            flat[i] = orig
            numeric[j] = (up - down) / (2 * h)
        ana = analytic.reshape(-1)[idxs]
        scale = max(1.0, float(np.abs(numeric).max(initial=0.0)))
        err = float(np.abs(ana - numeric).max(initial=0.0)) / scale
        report.entries.append(GradcheckEntry(tname, err, err < tolerance))
    # restore caches for the unperturbed point
    loss_at()
    graph.backward()
    return report
