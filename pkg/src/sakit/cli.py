"""Command-line surface: build / flops / train / allocate / pipeline / rf /
eval / report / bench / gradcheck.

Option values resolve with precedence env > flag > config file > default;
env overrides use the SAKIT_ prefix (SAKIT_SEED=7). Commands that write
artifacts drop a ``config.resolved.txt`` snapshot next to them so any run
can be reproduced from its output directory. Exit codes: 0 success, 1 usage
error, 2 runtime failure.
"""

import argparse
import os
import re
import sys
import time

import numpy as np

ENV_PREFIX = "SAKIT_"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# key -> (type tag, default, help); shared across subcommands that list them
_OPTIONS = {
    "preset": ("str", None,
               "resnet50|resnet101|resnet152|cifar-n<k>; scalenetNN selects "
               "resnetNN with its shipped reference plan"),
    "scales": ("intlist", None, "downsampling factors, e.g. 1,2,4,7"),
    "plan": ("str", None, "allocation plan file, or a shipped plan name"),
    "allocation": ("str", None, "baseline|even|seed|plan"),
    "downsample": ("str", "max", "in-block downsampling: max|avg|conv|dilated"),
    "b": ("float", 0.0, "cost-balance exponent for projection"),
    "seed": ("int", 0, "run seed"),
    "deterministic": ("bool", False, "suppress wall-clock in logs for bitwise reruns"),
    "dataset": ("str", "synthetic", "synthetic|cifar10|cifar100"),
    "data_dir": ("str", "", "directory with CIFAR binaries"),
    "classes": ("int", None, "class count (synthetic dataset / head override)"),
    "per_class": ("int", 100, "synthetic samples per class and split"),
    "val_per_class": ("int", 20, "synthetic validation samples per class"),
    "epochs": ("int", 10, "training epochs per stage"),
    "batch": ("int", 64, "batch size"),
    "lr": ("float", 0.1, "initial learning rate"),
    "milestones": ("intlist", [], "epochs after which lr divides by 10"),
    "momentum": ("float", 0.9, "SGD momentum"),
    "weight_decay": ("float", 1e-4, "L2 coefficient"),
    "augment": ("str", "none", "comma list of flip,crop-pad-4 or 'none'"),
    "out_dir": ("str", ".", "output directory"),
    "out": ("str", None, "output file path"),
    "input": ("int", None, "input resolution override"),
    "in_channels": ("int", None, "input channel override"),
    "checkpoint": ("str", None, "checkpoint file"),
    "spec": ("str", None, "network spec text file"),
    "repeats": ("int", None, "timed forward passes"),
    "warmup": ("int", 2, "untimed warmup passes"),
    "tolerance": ("float", 1e-5, "gradcheck relative-error bound"),
    "max_entries": ("int", 40, "finite-difference probes per parameter"),
    "resize": ("int", None, "resize shorter edge before eval"),
    "crop": ("int", None, "center-crop size before eval"),
    "config": ("str", None, "key=value overlay file"),
}

_COMMAND_KEYS = {
    "build": ["preset", "scales", "plan", "allocation", "downsample", "classes",
              "input", "in_channels", "out", "out_dir", "config"],
    "flops": ["preset", "scales", "plan", "allocation", "downsample", "classes",
              "input", "in_channels", "out", "out_dir", "config"],
    "train": ["preset", "spec", "scales", "plan", "allocation", "downsample",
              "dataset", "data_dir", "classes", "per_class", "val_per_class",
              "epochs", "batch", "lr", "milestones", "momentum", "weight_decay",
              "augment", "seed", "deterministic", "out_dir", "config"],
    "allocate": ["scales", "b", "out", "out_dir", "config"],
    "pipeline": ["preset", "scales", "b", "downsample", "dataset", "data_dir",
                 "classes", "per_class", "val_per_class", "epochs", "batch",
                 "lr", "milestones", "momentum", "weight_decay", "augment",
                 "seed", "deterministic", "out_dir", "config"],
    "rf": ["preset", "scales", "plan", "allocation", "downsample", "classes",
           "input", "in_channels", "out", "out_dir", "config"],
    "eval": ["checkpoint", "dataset", "data_dir", "classes", "per_class",
             "val_per_class", "batch", "seed", "resize", "crop", "config"],
    "report": ["plan", "preset", "scales", "classes", "input", "in_channels",
               "downsample", "out_dir", "config"],
    "bench": ["preset", "scales", "plan", "allocation", "downsample", "classes",
              "input", "in_channels", "batch", "repeats", "warmup", "seed",
              "config"],
    "gradcheck": ["spec", "tolerance", "max_entries", "seed", "config"],
}


def _flag(key):
    return "--" + key.replace("_", "-")


def build_parser():
    parser = _Parser(prog="sakit", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command")
    extra = {
        "allocate": [("importances", "importance dump csv"),
                     ("budgets", "per-block budget csv")],
    }
    for cmd, keys in _COMMAND_KEYS.items():
        sp = subs.add_parser(cmd)
        for key in keys:
            tag, _default, help_text = _OPTIONS[key]
            if tag == "bool":
                sp.add_argument(_flag(key), dest=key, action="store_true",
                                default=None, help=help_text)
            else:
                sp.add_argument(_flag(key), dest=key, default=None, help=help_text)
        for key, help_text in extra.get(cmd, []):
            sp.add_argument(_flag(key), dest=key, default=None, help=help_text)
    return parser


def _coerce(key, tag, raw):
    if raw is None:
        return None
    if isinstance(raw, bool):
        return raw
    text = str(raw).strip()
    try:
        if tag == "int":
            return int(text)
        if tag == "float":
            return float(text)
        if tag == "bool":
            return text.lower() in ("1", "true", "yes", "on")
        if tag == "intlist":
            return [int(p) for p in text.split(",") if p.strip()]
        return text
    except ValueError:
        raise UsageError(f"bad value '{text}' for {key}") from None


def resolve_config(cmd, args):
    """Defaults, then config-file overlay, then explicit flags, then env."""
    keys = list(_COMMAND_KEYS[cmd])
    if cmd == "allocate":
        keys += ["importances", "budgets"]
    types = {k: _OPTIONS.get(k, ("str", None, ""))[0] for k in keys}
    cfg = {k: _OPTIONS.get(k, ("str", None, ""))[1] for k in keys}
    cfg_file = getattr(args, "config", None) or os.environ.get(ENV_PREFIX + "CONFIG")
    if cfg_file:
        for lineno, raw in enumerate(open(cfg_file, encoding="utf-8"), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{cfg_file}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if key not in types:
                raise UsageError(f"{cfg_file}:{lineno}: unknown key '{key}' for {cmd}")
            cfg[key] = _coerce(key, types[key], value.strip())
    for key in keys:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = _coerce(key, types[key], val)
    all_known = {k for ks in _COMMAND_KEYS.values() for k in ks} | {
        "importances", "budgets", "config"}
    for env_key, env_val in os.environ.items():
        if not env_key.startswith(ENV_PREFIX):
            continue
        key = env_key[len(ENV_PREFIX):].lower()
        if key == "config":
            continue
        if key not in all_known:
            raise UsageError(f"unknown environment override {env_key}")
        if key in types:
            cfg[key] = _coerce(key, types[key], env_val)
    cfg.pop("config", None)
    return cfg


def write_snapshot(cmd, cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "config.resolved.txt")
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"command={cmd}\n")
        for key in sorted(cfg):
            val = cfg[key]
            if isinstance(val, list):
                val = ",".join(str(v) for v in val)
            f.write(f"{key}={val}\n")
    return path


# ---------------------------------------------------------------------------
# shared construction helpers

def _preset_base(cfg):
    from .presets import build_cifar_resnet, build_resnet

    name = cfg.get("preset")
    if not name:
        raise UsageError("--preset is required")
    # scalenetNN[-light] is shorthand for resnetNN plus the shipped plan
    m = re.fullmatch(r"scalenet(50|101|152)(-light)?", name)
    if m:
        if not cfg.get("plan") and cfg.get("allocation") in (None, "plan"):
            cfg["plan"] = f"scalenet{m.group(1)}{m.group(2) or ''}"
            cfg["allocation"] = "plan"
        name = f"resnet{m.group(1)}"
    classes = cfg.get("classes")
    channels = cfg.get("in_channels") or 3
    m = re.fullmatch(r"cifar-n(\d+)", name)
    if m:
        return build_cifar_resnet(int(m.group(1)), classes or 100, channels), [1, 2, 4]
    m = re.fullmatch(r"resnet(50|101|152)", name)
    if m:
        size = cfg.get("input") or 224
        return build_resnet(int(m.group(1)), classes or 1000, size, channels), [1, 2, 4, 7]
    raise UsageError(f"unknown preset '{name}'")


def _resolve_plan(cfg, base, scales):
    from .presets import even_allocation, load_plan, reference_plan, seed_plan

    allocation = cfg.get("allocation")
    plan_arg = cfg.get("plan")
    if allocation is None:
        allocation = "plan" if plan_arg else "baseline"
    if allocation == "baseline":
        return None
    if allocation == "even":
        return even_allocation(base, scales)
    if allocation == "seed":
        return seed_plan(base, scales)
    if allocation == "plan":
        if not plan_arg:
            raise UsageError("--plan required for allocation=plan")
        if os.path.exists(plan_arg):
            return load_plan(plan_arg)
        return reference_plan(plan_arg)
    raise UsageError(f"unknown allocation '{allocation}'")


def _build_network(cfg):
    from .presets import build_scalenet

    base, default_scales = _preset_base(cfg)
    scales = cfg.get("scales") or default_scales
    plan = _resolve_plan(cfg, base, scales)
    if plan is None:
        return base
    return build_scalenet(base, plan, downsample=cfg.get("downsample") or "max")


def _load_dataset(cfg, split):
    from .data import load_cifar, synthetic_dataset

    kind = cfg["dataset"]
    if kind == "synthetic":
        per = cfg["per_class"] if split == "train" else cfg["val_per_class"]
        return synthetic_dataset(cfg.get("classes") or 10, per, 32,
                                 seed=cfg["seed"], split=split)
    if kind in ("cifar10", "cifar100"):
        if not cfg.get("data_dir"):
            raise UsageError("--data-dir is required for CIFAR datasets")
        return load_cifar(cfg["data_dir"], kind, "train" if split == "train" else "test")
    raise UsageError(f"unknown dataset '{kind}'")


def _dataset_wiring(cfg):
    kind = cfg["dataset"]
    if kind == "synthetic":
        cfg["classes"] = cfg.get("classes") or 10
        cfg["in_channels"] = 1
    elif kind == "cifar10":
        cfg["classes"], cfg["in_channels"] = 10, 3
    elif kind == "cifar100":
        cfg["classes"], cfg["in_channels"] = 100, 3


def _train_config(cfg):
    from .training import TrainConfig

    flags = tuple(p for p in (cfg.get("augment") or "none").split(",")
                  if p and p != "none")
    return TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch"], lr=cfg["lr"],
        milestones=tuple(cfg["milestones"]), momentum=cfg["momentum"],
        weight_decay=cfg["weight_decay"], seed=cfg["seed"],
        augment_flags=flags, deterministic=bool(cfg["deterministic"]))


# ---------------------------------------------------------------------------
# subcommands

def cmd_build(cfg, out):
    spec = _build_network(cfg)
    path = cfg.get("out") or os.path.join(cfg["out_dir"], f"{spec.name}.netspec")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(spec.to_text())
    write_snapshot("build", cfg, os.path.dirname(path) or ".")
    out(f"wrote {path} ({len(spec.nodes)} nodes)")
    return 0


def cmd_flops(cfg, out):
    from .flops import network_flops

    spec = _build_network(cfg)
    report = network_flops(spec)
    out(f"{spec.name}: {report.total_macs:,} MACs "
        f"({report.total_macs / 1e9:.3f} G)")
    if report.sa_block_macs:
        out("k scale channels unit_cost subtotal budget utilization")
        for row in report.block_table():
            out(" ".join(str(v) if not isinstance(v, float) else f"{v:.4f}"
                         for v in row))
    if cfg.get("out"):
        with open(cfg["out"], "w", encoding="utf-8") as f:
            f.write(report.block_table_csv())
        write_snapshot("flops", cfg, os.path.dirname(cfg["out"]) or ".")
        out(f"wrote {cfg['out']}")
    return 0


def cmd_train(cfg, out):
    from .netspec import NetworkSpec
    from .training import train

    _dataset_wiring(cfg)
    if cfg.get("spec"):
        with open(cfg["spec"], encoding="utf-8") as f:
            spec = NetworkSpec.from_text(f.read())
    else:
        spec = _build_network(cfg)
    train_ds = _load_dataset(cfg, "train")
    val_ds = _load_dataset(cfg, "val")
    write_snapshot("train", cfg, cfg["out_dir"])
    result = train(spec, train_ds, val_ds, _train_config(cfg),
                   out_dir=cfg["out_dir"], log=out)
    out(f"final val top1 {result.metrics[-1]['val_top1']:.4f}; "
        f"artifacts in {cfg['out_dir']}")
    return 0


def cmd_allocate(cfg, out):
    from .allocator import (ProjectionConfig, parse_budgets_csv,
                            parse_importance_csv, plan_from_results,
                            project_network)
    from .presets import save_plan

    if not cfg.get("importances") or not cfg.get("budgets"):
        raise UsageError("--importances and --budgets are required")
    if not cfg.get("scales"):
        raise UsageError("--scales is required")
    with open(cfg["importances"], encoding="utf-8") as f:
        records = parse_importance_csv(f.read())
    with open(cfg["budgets"], encoding="utf-8") as f:
        budgets = parse_budgets_csv(f.read())
    proj = ProjectionConfig(exponent=cfg["b"])
    results = project_network(records, budgets, proj)
    plan = plan_from_results(results, cfg["scales"], source="allocate",
                             exponent=cfg["b"], budgets=budgets)
    path = cfg.get("out") or os.path.join(cfg["out_dir"], "plan.txt")
    save_plan(plan, path)
    write_snapshot("allocate", cfg, os.path.dirname(path) or ".")
    for k in sorted(plan.rows):
        out(f"{k}: {','.join(str(c) for c in plan.rows[k])}")
    out(f"wrote {path}")
    return 0


def cmd_pipeline(cfg, out):
    from .allocator import ProjectionConfig, run_pipeline
    from .report import emit_report
    from .rf import rf_network_report

    _dataset_wiring(cfg)
    base, default_scales = _preset_base(cfg)
    scales = cfg.get("scales") or default_scales
    train_ds = _load_dataset(cfg, "train")
    val_ds = _load_dataset(cfg, "val")
    write_snapshot("pipeline", cfg, cfg["out_dir"])
    result = run_pipeline(base, scales, train_ds, val_ds, _train_config(cfg),
                          ProjectionConfig(exponent=cfg["b"]),
                          out_dir=cfg["out_dir"],
                          downsample=cfg.get("downsample") or "max")
    rf_rows = rf_network_report(result.final_spec)
    emit_report(result.plan, cfg["out_dir"], rf_rows,
                rf_reference=base.input_shape[1])
    out(f"plan rows: {len(result.plan.rows)}; final val top1 {result.final_top1:.4f}")
    out(f"artifacts in {cfg['out_dir']}")
    return 0


def cmd_rf(cfg, out):
    from .rf import rf_network_report, rf_report_csv

    spec = _build_network(cfg)
    rows = rf_network_report(spec)
    out("block_index min_rf max_rf")
    for k, lo, hi in rows:
        out(f"{k} {lo} {hi}")
    path = cfg.get("out") or os.path.join(cfg["out_dir"], "rf.csv")
    with open(path, "w", encoding="utf-8") as f:
        f.write(rf_report_csv(rows))
    write_snapshot("rf", cfg, os.path.dirname(path) or ".")
    out(f"wrote {path}")
    return 0


def cmd_eval(cfg, out):
    from .training import evaluate_checkpoint

    if not cfg.get("checkpoint"):
        raise UsageError("--checkpoint is required")
    _dataset_wiring(cfg)
    ds = _load_dataset(cfg, "val")
    ev = evaluate_checkpoint(cfg["checkpoint"], ds, batch=cfg["batch"],
                             crop_to=cfg.get("crop"), resize_to=cfg.get("resize"))
    out(f"top1 error {ev.top1_err:.4f}")
    if ev.top5_err is not None:
        out(f"top5 error {ev.top5_err:.4f}")
    out(f"loss {ev.loss:.4f}")
    return 0


def cmd_report(cfg, out):
    from .presets import load_plan, reference_plan
    from .report import emit_report
    from .rf import rf_network_report

    if not cfg.get("plan"):
        raise UsageError("--plan is required")
    plan = load_plan(cfg["plan"]) if os.path.exists(cfg["plan"]) \
        else reference_plan(cfg["plan"])
    rf_rows = None
    reference = None
    if cfg.get("preset"):
        spec = _build_network({**cfg, "allocation": "plan"})
        rf_rows = rf_network_report(spec)
        reference = spec.input_shape[1]
    paths = emit_report(plan, cfg["out_dir"], rf_rows, reference)
    write_snapshot("report", cfg, cfg["out_dir"])
    for name in sorted(paths):
        out(f"wrote {paths[name]}")
    return 0


def cmd_bench(cfg, out):
    from .autograd import Graph
    from .flops import network_flops

    repeats = cfg.get("repeats")
    if not repeats or repeats < 1:
        raise UsageError("--repeats must be a positive integer")
    spec = _build_network(cfg)
    graph = Graph(spec, seed=cfg["seed"])
    c, h, w = spec.input_shape
    x = np.random.default_rng(cfg["seed"]).standard_normal(
        (cfg["batch"], c, h, w)).astype(np.float32)
    for _ in range(cfg["warmup"]):
        graph.infer(x)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        graph.infer(x)
        times.append(time.perf_counter() - t0)
    times.sort()
    macs = network_flops(spec).total_macs
    out(f"{spec.name}: batch {cfg['batch']}, {repeats} repeats "
        f"(warmup {cfg['warmup']} discarded)")
    out(f"mean {np.mean(times) * 1e3:.1f} ms  p50 {times[len(times) // 2] * 1e3:.1f} ms  "
        f"max {times[-1] * 1e3:.1f} ms")
    out(f"model cost {macs / 1e9:.3f} GMACs per sample")
    return 0


def cmd_gradcheck(cfg, out):
    from .autograd import Graph, gradcheck
    from .netspec import NetworkSpec
    from .rng import stream

    if cfg.get("spec"):
        with open(cfg["spec"], encoding="utf-8") as f:
            spec = NetworkSpec.from_text(f.read())
    else:
        spec = _coverage_spec()
    graph = Graph(spec, dtype=np.float64, seed=cfg["seed"])
    c, h, w = spec.input_shape
    rng = stream(cfg["seed"], "gradcheck-input")
    x = rng.uniform(-1, 1, size=(2, c, h, w))
    labels = rng.integers(0, spec.num_classes, size=2)
    report = gradcheck(graph, x, labels, tolerance=cfg["tolerance"],
                       max_entries=cfg["max_entries"], seed=cfg["seed"])
    for entry in report.entries:
        out(f"{'ok  ' if entry.ok else 'FAIL'} {entry.param}: {entry.max_rel_err:.3e}")
    out(f"max relative error {report.max_rel_err:.3e} "
        f"(tolerance {report.tolerance:.1e})")
    return 0 if report.ok else 2


def _coverage_spec():
    """Small graph touching every differentiable op."""
    from .netspec import SpecBuilder

    b = SpecBuilder("coverage")
    b.add("x", "input", c=2, h=8, w=8)
    b.add("c1", "conv", ["x"], **{"in": 2, "out": 3, "k": 3, "stride": 1, "pad": 1})
    b.add("bn1", "batchnorm", ["c1"], c=3)
    b.add("r1", "relu", ["bn1"])
    b.add("p1", "maxpool", ["r1"], k=2, stride=2)
    b.add("a1", "avgpool", ["r1"], k=2, stride=2)
    b.add("cat", "concat", ["p1", "a1"])
    b.add("c2", "conv", ["cat"], **{"in": 6, "out": 3, "k": 1})
    b.add("up", "resize", ["c2"], h=8, w=8)
    b.add("sc", "conv", ["r1"], **{"in": 3, "out": 3, "k": 1})
    b.add("sum", "add", ["up", "sc"])
    b.add("gap", "gap", ["sum"])
    b.add("fc", "dense", ["gap"], **{"in": 3, "out": 4})
    b.add("loss", "softmax_xent", ["fc"])
    return b.build()


_COMMANDS = {
    "build": cmd_build,
    "flops": cmd_flops,
    "train": cmd_train,
    "allocate": cmd_allocate,
    "pipeline": cmd_pipeline,
    "rf": cmd_rf,
    "eval": cmd_eval,
    "report": cmd_report,
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
}


def run_command(argv, out=print) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_usage(sys.stderr)
            return 1
        cfg = resolve_config(args.command, args)
        return _COMMANDS[args.command](cfg, out)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (KeyboardInterrupt, SystemExit):
        raise
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def main(argv=None) -> int:
    return run_command(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
