"""Acceptance criteria 1-10, one test each.

Every test records a PASS/FAIL line before asserting, so the terminal summary
lists a verdict for each criterion even when some of them fail.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest

import conftest
from layershap.allocation import SparsityPlan, allocate_ratios, unclamped_ratios
from layershap.checkpoint import from_bytes, load_checkpoint, save_checkpoint, to_bytes
from layershap.cli import main
from layershap.coalition import CoalitionCache, LayerSet, exact_shapley, swsv, table_oracle
from layershap.data import bundled_corpus, contiguous_batch, make_calibration, split_corpus
from layershap.evaluation import activation_cosine, perplexity
from layershap.model import ModelConfig, init_model, loss_and_grads
from layershap.pipeline import compare
from layershap.pruning import apply_plan, magnitude_prune_matrix, prune_uniform, wanda_prune_matrix
from layershap.training import train
from oracles import permutation_shapley, random_game, sort_kept_mask, wanda_kept_mask


def verdict(n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    conftest.VERDICTS[n] = line
    print(line)
    assert ok, line


def additive(c):
    def v(s):
        return math.fsum(c[i] for i in s)
    return v


def test_1_shapley_axioms():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst_eff = worst_null = worst_add = 0.0
    for g in range(50):
        T = g % 10 + 1
        nulls = tuple(int(x) for x in rng.choice(np.arange(1, T + 1), size=rng.integers(0, T), replace=False))
        a = random_game(T, rng, nulls)
        b = random_game(T, rng)
        ab = {k: a[k] + b[k] for k in a}
        phi_a = exact_shapley(table_oracle(a), T).contributions
        phi_b = exact_shapley(table_oracle(b), T).contributions
        phi_ab = exact_shapley(table_oracle(ab), T).contributions
        full = a[frozenset(range(1, T + 1))]
        worst_eff = max(worst_eff, abs(math.fsum(phi_a) - full) / max(1.0, abs(full)))
        worst_null = max([worst_null] + [abs(phi_a[t - 1]) for t in nulls])
        worst_add = max(worst_add, max(abs(x + y - z) for x, y, z in zip(phi_a, phi_b, phi_ab)))
    elapsed = time.perf_counter() - start
    ok = worst_eff <= 1e-9 and worst_null <= 1e-12 and worst_add <= 1e-9 and elapsed < 10
    verdict(1, ok, f"efficiency {worst_eff:.1e}, null {worst_null:.1e}, additivity {worst_add:.1e}, {elapsed:.2f}s")


def test_2_permutation_oracle():
    rng = np.random.default_rng(202)
    worst = 0.0
    for T in range(1, 9):
        game = random_game(T, rng)
        got = exact_shapley(table_oracle(game), T).contributions
        want = permutation_shapley(lambda s: game[frozenset(s)], T)
        worst = max(worst, max(abs(x - y) for x, y in zip(got, want)))
    fixed = {frozenset(): 0, frozenset({1}): 0, frozenset({2}): 0, frozenset({3}): 0,
             frozenset({1, 2}): 0.5, frozenset({1, 3}): 0.25, frozenset({2, 3}): 0.25,
             frozenset({1, 2, 3}): 1.0}
    phi = exact_shapley(table_oracle(fixed), 3).contributions
    fixed_err = max(abs(x - y) for x, y in zip(phi, [0.375, 0.375, 0.25]))
    verdict(2, worst <= 1e-9 and fixed_err <= 1e-12,
            f"max deviation from permutation oracle {worst:.1e} (T<=8), fixed game {list(phi)}")


def test_3_swsv_consistency():
    rng = np.random.default_rng(303)
    worst_full = 0.0
    for T in (3, 5, 7):
        oracle = table_oracle(random_game(T, rng))
        a = exact_shapley(oracle, T).contributions
        b = swsv(oracle, T, T).contributions
        worst_full = max(worst_full, max(abs(x - y) for x, y in zip(a, b)))
    worst_add = 0.0
    for T in range(1, 11):
        c = rng.uniform(-1, 1, T).tolist()
        v = additive({t + 1: c[t] for t in range(T)})
        for N in range(1, T + 1, 2):
            phi = swsv(lambda s: v(s), T, N).contributions
            worst_add = max(worst_add, max(abs(x - y) for x, y in zip(phi, c)))
    verdict(3, worst_full <= 1e-9 and worst_add <= 1e-12,
            f"swsv(N=T) vs exact {worst_full:.1e}, additive games {worst_add:.1e}")


def test_4_evaluation_budget():
    rng = np.random.default_rng(404)
    within = True
    for T in range(1, 17):
        for N in range(1, T + 1, 2):
            w = rng.uniform(0, 1, T)
            r = swsv(lambda s: float(sum(w[t - 1] ** 2 for t in s)), T, N)
            within &= r.oracle_evaluations <= 2 * T * 2 ** (N - 1)
    w = rng.uniform(0, 1, 32)
    start = time.perf_counter()
    r = swsv(lambda s: float(np.sqrt(sum(w[t - 1] for t in s))), 32, 5)
    elapsed = time.perf_counter() - start
    ok = within and r.oracle_evaluations <= 1024 and r.subsets_per_layer == 16 and elapsed < 5
    verdict(4, ok, f"T=32 N=5: {r.oracle_evaluations} distinct evaluations, "
                   f"{r.subsets_per_layer} subsets per layer, {elapsed:.2f}s; bound held for T<=16: {within}")


def test_5_allocation_algebra():
    rng = np.random.default_rng(505)
    mean_err = 0.0
    monotone = bounded = True
    for _ in range(500):
        T = int(rng.integers(1, 40))
        phi = rng.normal(size=T)
        rho, lam = rng.uniform(0, 1), rng.uniform(0, 0.3)
        raw = unclamped_ratios(phi, rho, lam)
        mean_err = max(mean_err, abs(raw.mean() - rho))
        order = np.argsort(phi, kind="stable")
        monotone &= bool(np.all(np.diff(raw[order]) <= 1e-15))
        bounded &= bool(np.all(np.abs(raw - rho) <= 2 * lam + 1e-15))
    uniform_lam0 = allocate_ratios([0.3, 0.1, 0.9, 0.2], 0.55, 0.0).ratios == (0.55,) * 4
    uniform_eq = allocate_ratios([0.7] * 5, 0.55, 0.1).ratios == (0.55,) * 5
    example = allocate_ratios([1, 2, 3], 0.5, 0.1).ratios
    ex_ok = max(abs(x - y) for x, y in zip(example, [0.6, 0.5, 0.4])) <= 1e-12
    ok = mean_err <= 1e-12 and monotone and bounded and uniform_lam0 and uniform_eq and ex_ok
    verdict(5, ok, f"mean error {mean_err:.1e}, anti-monotone {monotone}, 2*lambda bound {bounded}, "
                   f"lambda=0 uniform {uniform_lam0}, equal-phi uniform {uniform_eq}, example {example}")


def test_6_pruner_correctness():
    rng = np.random.default_rng(606)
    mag_ok = wanda_ok = sparsity_ok = True
    for _ in range(200):
        r, c = (int(x) for x in rng.integers(1, 65, size=2))
        w = rng.standard_normal((r, c)).astype(np.float32)
        norms = rng.uniform(0, 3, c)
        ratio = float(rng.uniform(0, 1))
        m = magnitude_prune_matrix(w, ratio)
        wd = wanda_prune_matrix(w, norms, ratio)
        mag_ok &= bool(np.array_equal(m != 0, sort_kept_mask(w, ratio)))
        wanda_ok &= bool(np.array_equal(wd != 0, wanda_kept_mask(w, norms, ratio)))
        for out in (m, wd):
            sparsity_ok &= abs(float((out == 0).mean()) - ratio) <= 1 / w.size
    cfg = ModelConfig(vocab_size=32, d_model=16, n_heads=2, n_layers=4, ffn_hidden=24, max_seq_len=16, seed=6)
    model = init_model(cfg).map_arrays(lambda a: (a + rng.standard_normal(a.shape) * 0.3).astype(np.float32))
    batch = make_calibration(bytes(rng.integers(0, 32, 4096, dtype=np.uint8)), 4, 12, 0)
    identical = True
    for method in ("magnitude", "wanda"):
        plan = allocate_ratios([0.4, 0.1, 0.8, 0.3], 0.6, 0.0)
        pruned, _ = apply_plan(model, plan, method, batch)
        identical &= to_bytes(pruned) == to_bytes(prune_uniform(model, 0.6, method, batch))
    verdict(6, mag_ok and wanda_ok and sparsity_ok and identical,
            f"magnitude oracle {mag_ok}, wanda oracle {wanda_ok}, sparsity within 1/numel {sparsity_ok}, "
            f"lambda=0 bit-identical {identical}")


def test_7_toy_model_numerics(tmp_path):
    micro = ModelConfig(vocab_size=13, d_model=8, n_heads=2, n_layers=2, ffn_hidden=12, max_seq_len=8, seed=7)
    rng = np.random.default_rng(707)
    model = init_model(micro).map_arrays(lambda a: a.astype(np.float64) + rng.standard_normal(a.shape) * 0.3)
    toks = rng.integers(0, 13, size=(1, 5))  # seq_len 4 after the shift
    _, grads = loss_and_grads(model, toks)
    worst = 0.0
    eps = 1e-6
    for (_, w), (_, g) in zip(model.named_arrays(), grads.named_arrays()):
        num = np.zeros_like(w)
        for i in np.ndindex(w.shape):
            orig = w[i]
            w[i] = orig + eps
            up, _ = loss_and_grads(model, toks)
            w[i] = orig - eps
            down, _ = loss_and_grads(model, toks)
            w[i] = orig
            num[i] = (up - down) / (2 * eps)
        worst = max(worst, float(np.abs(num - g).max() / max(np.abs(num).max(), 1e-12)))

    zero = init_model(ModelConfig(n_layers=2)).map_arrays(np.zeros_like)
    batch = make_calibration(bundled_corpus(), 4, 64, 0)
    ppl = perplexity(zero, batch).ppl

    trained_like = init_model(ModelConfig(n_layers=3, seed=3))
    save_checkpoint(trained_like, tmp_path / "m.bin")
    loaded = load_checkpoint(tmp_path / "m.bin")
    round_trip = loaded.equals(trained_like) and to_bytes(loaded) == (tmp_path / "m.bin").read_bytes()
    round_trip &= to_bytes(from_bytes(to_bytes(loaded))) == to_bytes(loaded)
    verdict(7, worst <= 1e-3 and ppl == 256.0 and round_trip,
            f"gradient rel error {worst:.1e}, uniform-logits ppl {ppl!r}, round trip bit-exact {round_trip}")


SEEDS = (0, 1, 2)


@pytest.fixture(scope="session")
def trained_fixtures():
    corpus = bundled_corpus()
    train_part, held_part = split_corpus(corpus)
    models = {s: train(train_part, ModelConfig(seed=s)) for s in SEEDS}
    calib = make_calibration(train_part, 32, 256, 0)
    held = contiguous_batch(held_part, 256)
    return models, calib, held


@pytest.mark.slow
def test_8_end_to_end_direction(trained_fixtures):
    models, calib, held = trained_fixtures
    start = time.perf_counter()
    rows = []
    wins = 0
    for s in SEEDS:
        r = compare(models[s], calib, held, rho=0.6, lam=0.1, window=3, method="magnitude")
        wins += r.shapley_ppl <= r.uniform_ppl
        rows.append(f"  seed {s}: dense {r.dense_ppl:8.4f}  uniform {r.uniform_ppl:8.4f}  "
                    f"shapley {r.shapley_ppl:8.4f}  ratios {[round(x, 4) for x in r.plan.ratios]}")
    elapsed = time.perf_counter() - start
    print("\n".join(rows))
    verdict(8, wins >= 2, f"shapley <= uniform in {wins}/3 seeds (rho 0.6, magnitude, N=3, lambda 0.1)\n"
                          + "\n".join(rows))


@pytest.mark.slow
def test_trained_fixture_beats_half_vocab(trained_fixtures):
    models, _, held = trained_fixtures
    ppls = [perplexity(models[s], held).ppl for s in SEEDS]
    assert all(p < 128 for p in ppls)
    # recorded from the reference run; training is deterministic so only BLAS differences move these
    assert ppls == pytest.approx([5.1233, 5.5212, 5.2205], rel=0.02)


def test_9_similarity_sanity(tmp_path):
    cfg = ModelConfig(vocab_size=256, d_model=32, n_heads=2, n_layers=4, ffn_hidden=64, max_seq_len=64, seed=9)
    rng = np.random.default_rng(909)
    model = init_model(cfg).map_arrays(lambda a: (a + rng.standard_normal(a.shape) * 0.05).astype(np.float32))
    batch = make_calibration(bundled_corpus(), 6, 48, 9)
    same = activation_cosine(model, model, batch)
    pruned, _ = apply_plan(model, SparsityPlan(0.5, 0.1, (0.7, 0.5, 0.4, 0.6)))
    diff = activation_cosine(model, pruned, batch)
    csv = diff.to_csv().splitlines()
    csv_ok = csv[0] == "layer,similarity" and len(csv) == 5 and all(
        int(row.split(",")[0]) == i and math.isfinite(float(row.split(",")[1]))
        for i, row in enumerate(csv[1:], start=1))
    self_err = max(abs(s - 1.0) for s in same.similarities)
    verdict(9, self_err <= 1e-6 and max(diff.similarities) <= 1.0 and csv_ok,
            f"self-similarity error {self_err:.1e}, pruned {[round(s, 4) for s in diff.similarities]}, csv {csv_ok}")


def test_10_cli_determinism(tmp_path):
    corpus = tmp_path / "corpus.txt"
    corpus.write_bytes(bundled_corpus()[:40_000])
    small = ["--corpus", str(corpus), "--calib-count", "4", "--calib-len", "32", "--seed", "3"]

    def outputs(run, threads):
        d = tmp_path / f"run{run}"
        d.mkdir()
        p = lambda name: str(d / name)  # noqa: E731
        th = ["--threads", threads]
        steps = [
            ["train", "--corpus", str(corpus), "--layers", "3", "--steps", "3", "--calib-len", "64",
             "--out", p("model.bin")],
            ["shapley", "--model", p("model.bin"), "--window", "3", "--out", p("swsv.json"), *small, *th],
            ["shapley", "--model", p("model.bin"), "--exact", "--out", p("exact.json"), *small, *th],
            ["allocate", "--report", p("swsv.json"), "--rho", "0.6", "--out", p("plan.json")],
            ["prune", "--model", p("model.bin"), "--plan", p("plan.json"), "--method", "wanda",
             "--out", p("pruned.bin"), *small, *th],
            ["eval", "--model", p("pruned.bin"), "--out", p("eval.json"), "--corpus", str(corpus)],
            ["stats", "--model", p("pruned.bin"), "--out", p("stats.csv")],
            ["similarity", "--model", p("model.bin"), "--pruned", p("pruned.bin"), "--out", p("sim.csv"), *small],
            ["pipeline", "--model", p("model.bin"), "--window", "3", "--rho", "0.6", "--out", p("table.txt"),
             *small, *th],
        ]
        for argv in steps:
            assert main(argv) == 0, argv
        return {f.name: f.read_bytes() for f in sorted(d.iterdir())}

    runs = [outputs(i, t) for i, t in enumerate(("1", "4", "2"))]
    same = all(r == runs[0] for r in runs[1:])
    verdict(10, same, f"{len(runs[0])} output files byte-identical across 3 runs with --threads 1/4/2")
