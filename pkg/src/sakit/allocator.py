"""Data-driven neuron allocation.

Importance of each aggregation-block output channel is the magnitude of its
batchnorm scale; the per-block budgeted selection ranks channels by
importance / cost**b and scans in order, keeping any channel whose cost
still fits (skip-and-continue). A brute-force reference re-derives the same
policy with independent bookkeeping and can also report the exact knapsack
optimum for diagnostics.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .flops import neuron_cost, network_flops
from .netspec import NetworkSpec, propagate_shapes
from .presets import AllocationPlan, build_scalenet, build_seed, save_plan


@dataclass(frozen=True)
class NeuronRecord:
    """One aggregation-block output channel with its importance and cost."""

    block: int
    scale: int
    channel: int  # index within its scale
    gamma: float
    cost: int  # MACs per output neuron at this scale

    @property
    def importance(self):
        return abs(self.gamma)


@dataclass
class ProjectionConfig:
    exponent: float = 0.0  # cost-balance power b in importance / cost**b
    min_per_block: int = 1

    def priority(self, rec: NeuronRecord) -> float:
        if self.exponent == 0.0:
            return rec.importance
        return rec.importance / rec.cost ** self.exponent


@dataclass
class ProjectionResult:
    selected: list  # NeuronRecords kept, in scan order
    per_scale: dict  # scale -> count
    total_cost: int
    budget: int
    forced: bool = False  # nothing fit; kept the single top-ranked neuron


def extract_importance(tensors: dict, spec: NetworkSpec):
    """One NeuronRecord per aggregation-block output channel of ``spec``.

    ``tensors`` maps parameter names to arrays (a checkpoint or live graph
    params); each per-scale conv must be paired with its batchnorm.
    """
    shapes = propagate_shapes(spec)
    records = []
    for k, branches in spec.sa_blocks().items():
        for scale, conv, bn in branches:
            gname = f"{bn.name}.gamma"
            if gname not in tensors:
                raise KeyError(f"missing batchnorm scale tensor '{gname}'")
            gammas = np.asarray(tensors[gname])
            if gammas.shape != (conv.attrs["out"],):
                raise ValueError(f"'{gname}' has shape {gammas.shape}, "
                                 f"expected ({conv.attrs['out']},)")
            cat = next(n for n in spec.nodes
                       if n.op == "concat" and n.get("block") == k)
            _, h, w = shapes[cat.name]
            cost = neuron_cost(conv.attrs["in"], h, w, scale)
            for ch, g in enumerate(gammas):
                records.append(NeuronRecord(k, scale, ch, float(g), cost))
    return records


def greedy_project(records, budget, config: ProjectionConfig = None) -> ProjectionResult:
    """Budgeted selection for one block.

    Scan order is priority descending, ties by (scale asc, channel asc); a
    record is kept iff its cost still fits, otherwise skipped and the scan
    continues. If nothing fits, the top-ranked record is kept and flagged.
    """
    if not records:
        raise ValueError("no records to project")
    if budget <= 0:
        raise ValueError("budget must be positive")
    config = config or ProjectionConfig()
    order = sorted(records, key=lambda r: (-config.priority(r), r.scale, r.channel))
    selected = []
    total = 0
    for rec in order:
        if total + rec.cost <= budget:
            selected.append(rec)
            total += rec.cost
    forced = False
    if not selected:
        selected = [order[0]]
        total = order[0].cost
        forced = True
    per_scale = {}
    for rec in selected:
        per_scale[rec.scale] = per_scale.get(rec.scale, 0) + 1
    return ProjectionResult(selected, per_scale, total, budget, forced)


def brute_oracle(records, budget, config: ProjectionConfig = None,
                 with_optimum=True, max_exact=16):
    """Independent reference for greedy_project plus the knapsack optimum.

    The policy is re-derived without sorting: the best remaining record is
    found by explicit pairwise comparison each step, and feasibility is
    tracked against a shrinking remaining budget. The true optimum (max sum
    of importances subject to the budget) is enumerated over all subsets when
    the instance is small enough; it is diagnostic only.
    Returns (ProjectionResult, optimum_importance_or_None).
    """
    if len(records) > 24:
        raise ValueError(f"oracle handles at most 24 records, got {len(records)}")
    config = config or ProjectionConfig()

    def better(a, b):
        pa, pb = config.priority(a), config.priority(b)
        if pa != pb:
            return pa > pb
        if a.scale != b.scale:
            return a.scale < b.scale
        return a.channel < b.channel

    remaining = list(records)
    left = budget
    selected = []
    top = None
    while remaining:
        best = remaining[0]
        for cand in remaining[1:]:
            if better(cand, best):
                best = cand
        remaining.remove(best)
        if top is None:
            top = best
        if best.cost <= left:
            selected.append(best)
            left -= best.cost
    forced = False
    if not selected:
        selected = [top]
        left = budget - top.cost
        forced = True
    per_scale = {}
    for rec in selected:
        per_scale[rec.scale] = per_scale.get(rec.scale, 0) + 1
    result = ProjectionResult(selected, per_scale, budget - left, budget, forced)
    optimum = None
    if with_optimum and len(records) <= max_exact:
        optimum = _knapsack_optimum(records, budget)
    return result, optimum


def _knapsack_optimum(records, budget):
    n = len(records)
    costs = np.array([r.cost for r in records], dtype=np.int64)
    values = np.array([r.importance for r in records])
    masks = np.arange(1 << n, dtype=np.int64)
    bits = (masks[:, None] >> np.arange(n)) & 1
    feasible = bits @ costs <= budget
    return float((bits @ values)[feasible].max())


def project_network(records, budgets, config: ProjectionConfig = None):
    """Run the per-block selection for every block; returns
    (AllocationPlan-rows dict, {block: ProjectionResult})."""
    config = config or ProjectionConfig()
    by_block = {}
    for rec in records:
        by_block.setdefault(rec.block, []).append(rec)
    results = {}
    for k in sorted(by_block):
        results[k] = greedy_project(by_block[k], budgets[k], config)
    return results


def plan_from_results(results, scales, source="", exponent=None, budgets=None):
    rows = {k: [res.per_scale.get(s, 0) for s in scales]
            for k, res in results.items()}
    return AllocationPlan(list(scales), rows, source=source, exponent=exponent,
                          budgets=dict(budgets or {}))


def importance_csv(records) -> str:
    lines = ["k,scale,channel,gamma,abs_gamma,unit_cost"]
    for r in records:
        lines.append(f"{r.block},{r.scale},{r.channel},{r.gamma!r},{r.importance!r},{r.cost}")
    return "\n".join(lines) + "\n"


def parse_importance_csv(text):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != "k,scale,channel,gamma,abs_gamma,unit_cost":
        raise ValueError("importance csv must start with the standard header")
    records = []
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != 6:
            raise ValueError(f"line {lineno}: expected 6 fields, got {len(parts)}")
        k, scale, channel = int(parts[0]), int(parts[1]), int(parts[2])
        records.append(NeuronRecord(k, scale, channel, float(parts[3]), int(parts[5])))
    return records


def budgets_csv(budgets: dict) -> str:
    lines = ["k,budget"]
    for k in sorted(budgets):
        lines.append(f"{k},{budgets[k]}")
    return "\n".join(lines) + "\n"


def parse_budgets_csv(text):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != "k,budget":
        raise ValueError("budgets csv must start with 'k,budget'")
    out = {}
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 2 fields")
        out[int(parts[0])] = int(parts[1])
    return out


@dataclass
class PipelineResult:
    plan: AllocationPlan
    seed_spec: NetworkSpec
    final_spec: NetworkSpec
    seed_metrics: list
    final_metrics: list
    final_top1: float
    artifacts: dict = field(default_factory=dict)


def run_pipeline(base: NetworkSpec, scales, train_ds, val_ds, train_cfg,
                 proj_cfg: ProjectionConfig = None, out_dir=None, resume=False,
                 downsample="max") -> PipelineResult:
    """Seed-train, importance-ranked budgeted projection, retrain from scratch.

    Stages: build the over-provisioned seed, train it, read batchnorm scales,
    project each block onto its budget, emit the plan, rebuild, retrain with
    fresh weights (no transfer). Stage outputs are written under ``out_dir``
    and reused on ``resume``.
    """
    import sakit.training as train_mod
    from .checkpoint import load_checkpoint, save_checkpoint

    proj_cfg = proj_cfg or ProjectionConfig()
    paths = {}
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        paths = {name: os.path.join(out_dir, name) for name in
                 ("seed.netspec", "seed.sanc", "seed_metrics.csv",
                  "importances.csv", "budgets.csv", "plan.txt",
                  "final.netspec", "final.sanc", "final_metrics.csv")}

    seed_spec = build_seed(base, scales, downsample=downsample)
    if out_dir:
        with open(paths["seed.netspec"], "w") as f:
            f.write(seed_spec.to_text())

    if resume and out_dir and os.path.exists(paths["seed.sanc"]):
        _, seed_tensors = load_checkpoint(paths["seed.sanc"])
        seed_metrics = []
    else:
        seed_result = train_mod.train(seed_spec, train_ds, val_ds, train_cfg,
                                      out_dir=None)
        seed_tensors = seed_result.tensors()
        seed_metrics = seed_result.metrics
        if out_dir:
            save_checkpoint(paths["seed.sanc"], seed_spec.to_text(), seed_tensors)
            train_mod.write_metrics_csv(seed_metrics, paths["seed_metrics.csv"])

    records = extract_importance(seed_tensors, seed_spec)
    seed_report = network_flops(seed_spec)
    budgets = {k: b.budget for k, b in seed_report.budgets.items()}
    results = project_network(records, budgets, proj_cfg)
    plan = plan_from_results(results, scales, source=f"{base.name}-pipeline",
                             exponent=proj_cfg.exponent, budgets=budgets)
    if out_dir:
        with open(paths["importances.csv"], "w") as f:
            f.write(importance_csv(records))
        with open(paths["budgets.csv"], "w") as f:
            f.write(budgets_csv(budgets))
        save_plan(plan, paths["plan.txt"])

    final_spec = build_scalenet(base, plan, downsample=downsample)
    if out_dir:
        with open(paths["final.netspec"], "w") as f:
            f.write(final_spec.to_text())
    if resume and out_dir and os.path.exists(paths["final.sanc"]):
        _, final_tensors = load_checkpoint(paths["final.sanc"])
        final_metrics = []
        ev = train_mod.evaluate_tensors(final_spec, final_tensors, val_ds)
        final_top1 = 1.0 - ev.top1_err
    else:
        final_result = train_mod.train(final_spec, train_ds, val_ds, train_cfg,
                                       out_dir=None)
        final_metrics = final_result.metrics
        final_top1 = 1.0 - final_result.final_val_top1_err
        if out_dir:
            save_checkpoint(paths["final.sanc"], final_spec.to_text(),
                            final_result.tensors())
            train_mod.write_metrics_csv(final_metrics, paths["final_metrics.csv"])

    return PipelineResult(plan, seed_spec, final_spec, seed_metrics,
                          final_metrics, final_top1, paths)
