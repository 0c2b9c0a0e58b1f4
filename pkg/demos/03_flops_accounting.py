"""MAC accounting for the preset family.

Counts conv and dense multiply-accumulates for the baselines and their
scale-aggregation counterparts built from the shipped reference plans,
then details one block's budget utilization: the per-scale convs must fit
the budget of the 3x3 conv they replaced.
"""

from sakit import build_resnet, build_scalenet, network_flops, reference_plan
from sakit.presets import build_seed, even_allocation

r50 = build_resnet(50)
rows = [
    ("resnet50", r50),
    ("resnet101", build_resnet(101)),
    ("resnet152", build_resnet(152)),
    ("scalenet50", build_scalenet(r50, reference_plan("scalenet50"))),
    ("scalenet50-light", build_scalenet(r50, reference_plan("scalenet50-light"))),
    ("scalenet101", build_scalenet(build_resnet(101), reference_plan("scalenet101"))),
    ("scalenet152", build_scalenet(build_resnet(152), reference_plan("scalenet152"))),
    ("even-split-50", build_scalenet(r50, even_allocation(r50, [1, 2, 4, 7]))),
    ("seed-50 (4x width)", build_seed(r50, [1, 2, 4, 7])),
]
print(f"{'network':22s} {'GMACs':>8s}")
for name, spec in rows:
    print(f"{name:22s} {network_flops(spec).total_macs / 1e9:8.3f}")

print("\nbudget utilization of the first aggregation blocks (scalenet50):")
report = network_flops(build_scalenet(r50, reference_plan("scalenet50")))
print("k scale channels unit_cost  subtotal     budget  utilization")
for row in report.block_table()[:8]:
    k, scale, ch, unit, sub, budget, util = row
    print(f"{k} {scale:5d} {ch:8d} {unit:9,d} {sub:11,d} {budget:12,d}  {util:.3f}")
print("(the published block-1 allocation slightly exceeds this cost model's")
print(" budget; plans produced by the allocator always satisfy it)")
