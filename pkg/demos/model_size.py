"""
Where the parameters and FLOPs go
=================================

Builds the three preset variants, prints their totals at 224x224 and then the
per-module breakdown of the smallest one, grouped by stage.
"""

from collections import defaultdict

import numpy as np

from cloformer import Tensor, build_model, count_flops, count_macs, model_forward, no_grad, preset

for name in ("xxs", "xs", "s"):
    r = count_flops(build_model(preset(name), 0), (224, 224))
    print(f"{name:>4}: {r.total_params / 1e6:5.2f}M params  {r.total_flops / 1e9:5.2f}G MACs")

report = count_flops(build_model(preset("xxs"), 0), (224, 224))

# Group rows by their first dotted component (stem, stage1..4, head).
groups = defaultdict(lambda: [0, 0])
for row, params, flops in report.rows:
    g = groups[row.split(".")[0]]
    g[0] += params
    g[1] += flops

print()
for g, (params, flops) in groups.items():
    share = flops / report.total_flops
    print(f"{g:<8} {params:>9,d} params  {flops / 1e6:8.1f}M MACs  {share:6.1%} of compute")

# The same count is available measured rather than derived: running the
# forward pass under count_macs() sums the work each op actually did.
m = build_model(preset("xxs"), 0)
with no_grad(), count_macs() as seen:
    model_forward(Tensor(np.zeros((1, 3, 224, 224))), m)
print()
print("measured by op kind:", {k: f"{v / 1e6:.1f}M" for k, v in sorted(seen.items())})
print("measured total equals derived total:", sum(seen.values()) == report.total_flops)
