"""
Pruning a small byte-level transformer
======================================

Train the toy model, score each layer, and compare uniform pruning with
contribution-guided pruning at the same overall sparsity.

Training for the full default schedule takes a few minutes on one core.
Pass a smaller step count on the command line for a quick look, e.g.
``python3 demos/toy_pipeline.py 150``.
"""

import sys
import time

import numpy as np

from layershap import (
    ModelConfig,
    activation_cosine,
    bundled_corpus,
    contiguous_batch,
    make_calibration,
    split_corpus,
)
from layershap.pipeline import compare
from layershap.pruning import prune_uniform
from layershap.stats import magnitude_stats
from layershap.training import TrainConfig, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else TrainConfig.steps

corpus = bundled_corpus()
train_part, held_part = split_corpus(corpus)
calib = make_calibration(train_part, count=32, length=256, seed=0)
held = contiguous_batch(held_part, 256)

t0 = time.perf_counter()
model = train(train_part, ModelConfig(seed=0), TrainConfig(steps=steps))
print(f"trained {steps} steps in {time.perf_counter() - t0:.0f}s")

###############################################################################
# Weight magnitudes per layer and matrix. Rows are layers; columns follow
# q, k, v, o, gate, up, down.

stats = magnitude_stats(model)
np.set_printoptions(precision=4, suppress=True)
print(stats.means())

###############################################################################
# Uniform against guided pruning. Contributions use a window of 3 layers.

for rho in (0.5, 0.6, 0.7):
    result = compare(model, calib, held, rho=rho, lam=0.1, window=3)
    print(f"\nrho={rho}")
    print(result.table())

print("contributions:", np.round(result.report.contributions, 4))

###############################################################################
# How far each layer's output drifts from the dense model after uniform
# pruning at 60%.

pruned = prune_uniform(model, 0.6)
print(activation_cosine(model, pruned, calib).to_csv())
