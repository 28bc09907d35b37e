"""
An MNIST subset
===============

Ten thousand training digits with 10% of the labels replaced by a wrong
class. The images come from the standard IDX files under ``data/mnist``.
A short run is enough to see how the graph behaves with ten classes.
"""
from pathlib import Path

import numpy as np

from agfn.harness import build_datasets, load_config, run_training

config = Path(__file__).resolve().parent.parent / "configs" / "mnist.cfg"
cfg = load_config(config, {"train.epochs": 15})
train, test = build_datasets(cfg)
print(f"train {train.inputs.shape}, test {test.inputs.shape}, {len(train.corrupted)} noisy labels")

# %%
# With ten classes most pairs in a batch belong to different classes. At the
# initial scale every pair gets a sizeable edge probability, so the first
# graph epochs mix features across classes.
for policy in ("none", "poisson"):
    cfg = load_config(config, {"train.epochs": 15, "train.graph_policy": policy})
    res = run_training(cfg, (train, test))
    acc = np.array([r["test_accuracy"] for r in res.records])
    density = res.records[-1]["edge_density"]
    print(f"{policy:<8s} accuracy by 5 epochs {np.round(acc[4::5], 3)}  final density {density:.2f}")
