"""
Layer contributions on small synthetic games
============================================

A game assigns a value to every subset of players. Here the players are
layers and a subset is the set of layers left switched on.
"""

import itertools

import numpy as np

from layershap import exact_shapley, swsv
from layershap.coalition import table_oracle

# a three-player game where 1 and 2 only matter together
game = {
    frozenset(): 0.0,
    frozenset({1}): 0.0, frozenset({2}): 0.0, frozenset({3}): 0.0,
    frozenset({1, 2}): 0.5, frozenset({1, 3}): 0.25, frozenset({2, 3}): 0.25,
    frozenset({1, 2, 3}): 1.0,
}
report = exact_shapley(table_oracle(game), 3)
print("contributions:", report.contributions)
print("sum:", sum(report.contributions), "full value:", game[frozenset({1, 2, 3})])

###############################################################################
# A bigger game with diminishing returns. Each layer has a weight and the value
# is the square root of the summed weights of the active layers.

rng = np.random.default_rng(0)
T = 9
weights = rng.uniform(0.1, 1.0, T)
table = {}
for r in range(T + 1):
    for combo in itertools.combinations(range(1, T + 1), r):
        table[frozenset(combo)] = float(np.sqrt(sum(weights[i - 1] for i in combo)))
oracle = table_oracle(table)

exact = exact_shapley(oracle, T)
print("\nexact, %d evaluations" % exact.oracle_evaluations)
print(np.round(exact.contributions, 4))

###############################################################################
# The windowed estimator only varies the N layers around each layer and keeps
# the rest switched on. Smaller windows need far fewer evaluations.

for N in (1, 3, 5, 7, 9):
    approx = swsv(oracle, T, N)
    err = np.abs(np.array(approx.contributions) - exact.contributions).max()
    print(f"N={N}: {approx.oracle_evaluations:4d} evaluations, max abs error {err:.4f}")

# rankings tend to survive even when magnitudes shift
print("\nexact ranking:   ", np.argsort(exact.contributions)[::-1] + 1)
print("window-3 ranking:", np.argsort(swsv(oracle, T, 3).contributions)[::-1] + 1)
