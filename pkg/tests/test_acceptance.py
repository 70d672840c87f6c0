"""End-to-end acceptance criteria.

Each test prints one ``PASS``/``FAIL`` line (shown even under output
capture) and then asserts, so a red criterion is both visible and failing.
"""
import math
import time

import numpy as np
import pytest

from hypertemp import autodiff as ad
from hypertemp import geometry as geo
from hypertemp.cli import EXIT_OK, main
from hypertemp.data import LABELS, TempRelLabel, build_graph, negative_set, select_docs
from hypertemp.embed import (EmbedModel, EmbedTrainConfig, RuleConfig, combined_loss, l1_terms, l2_terms,
                             loss_l2, norm_ordering_rate, score, train_embed, tune_threshold, tune_threshold_scores)
from hypertemp.layers import HFFL, HGRU, HMLR, cross_entropy, hyper_nonlinearity
from hypertemp.metrics import ConfusionMatrix, compute_metrics
from hypertemp.relnet import Batch, RelNetConfig, RelNetModel, ablate, train_relnet
from hypertemp.synth import SynthSpec, generate
from oracles import (closure_negatives, fd_relative_error, grid_threshold_oracle, make_pair, random_ball,
                     random_graph_edges)

B, A, E, V = LABELS


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail=""):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'}: {name}" + (f" ({detail})" if detail else ""))
        return ok
    return emit


def _split(data):
    return {k: select_docs(data.pairs, v) for k, v in data.split.items()}


def test_geometry_identity_suite(report):
    start = time.perf_counter()
    worst = {"symmetry": 0.0, "triangle": 0.0, "gyro": 0.0, "exp_log": 0.0, "norm_gap": 0.0}
    rng = np.random.default_rng(0)
    for dim in (2, 16, 128):
        x, y, z = (random_ball(rng, 10_000, dim) for _ in range(3))
        dxy, dyx = geo.distance(x, y), geo.distance(y, x)
        worst["symmetry"] = max(worst["symmetry"], np.max(np.abs(dxy - dyx)))
        slack = dxy - geo.distance(x, z) - geo.distance(z, y)
        worst["triangle"] = max(worst["triangle"], np.max(slack))
        worst["gyro"] = max(worst["gyro"], np.max(np.abs(dxy - geo.ball_norm(geo.mobius_add(-x, y)))))
        worst["exp_log"] = max(worst["exp_log"], np.max(np.abs(geo.exp_map0(geo.log_map0(x)) - x)))
        gap = np.abs(geo.ball_norm(x) - geo.ball_norm(y)) - dxy
        worst["norm_gap"] = max(worst["norm_gap"], np.max(gap))
    elapsed = time.perf_counter() - start
    ok = all(v <= 1e-9 for v in worst.values()) and elapsed < 10
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", {elapsed:.1f}s"
    assert report("geometry identities within 1e-9 in under 10 s", ok, detail)


def _grad_case(kind, rng):
    """One finite-difference check at toy dims; returns the relative error."""
    if kind == "hffl":
        layer = HFFL(3, 2, activation=rng.choice(["identity", "tanh"]), rng=rng)
        layer.b.value = random_ball(rng, 1, 2, 0.5)[0]
        x = ad.Parameter(random_ball(rng, 4, 3, 0.8))
        return fd_relative_error(lambda: ad.sum(layer(x) * np.arange(1, 3)), [x, *layer.parameters().values()])
    if kind == "nonlinearity":
        x = ad.Parameter(random_ball(rng, 4, 3, 0.8))
        return fd_relative_error(lambda: ad.sum(hyper_nonlinearity(x, "tanh") * np.arange(1, 4)), [x])
    if kind == "hgru":
        cell = HGRU(2, 3, rng=rng)
        for p in cell.parameters().values():
            if p.space == ad.Parameter.HYPERBOLIC:
                p.value = rng.uniform(-0.2, 0.2, p.shape)
        xs = ad.Parameter(random_ball(rng, 6, 2, 0.6).reshape(2, 3, 2))
        return fd_relative_error(lambda: ad.sum(cell.sequence(xs)[-1] * np.arange(1, 4)),
                                 [xs, *cell.parameters().values()])
    if kind == "hmlr":
        head = HMLR(3, 4, rng=rng)
        head.p.value = random_ball(rng, 4, 3, 0.5)
        x = ad.Parameter(random_ball(rng, 5, 3, 0.8))
        labels = rng.integers(0, 4, 5)
        return fd_relative_error(lambda: cross_entropy(head(x), labels), [x, *head.parameters().values()])
    if kind == "l1":
        su, sv = ad.Parameter(random_ball(rng, 3, 2, 0.8)), ad.Parameter(random_ball(rng, 3, 2, 0.8))
        neg = ad.Parameter(random_ball(rng, 6, 2, 0.8).reshape(3, 2, 2))
        mask = np.ones((3, 2), dtype=bool)
        return fd_relative_error(lambda: ad.sum(l1_terms(su, sv, neg, mask)), [su, sv, neg])
    if kind == "l2":
        su, sv = ad.Parameter(random_ball(rng, 3, 2, 0.8)), ad.Parameter(random_ball(rng, 3, 2, 0.8))
        return fd_relative_error(lambda: ad.sum(l2_terms(su, sv)), [su, sv])
    if kind == "embed":
        m = EmbedModel(3, 2, rng=rng)
        m.projection.b.value = random_ball(rng, 1, 2, 0.2)[0]
        e = rng.normal(size=(6, 3))

        def f():
            s = m.project(e)
            return combined_loss(s[:2], s[2:4], ad.reshape(s[4:], (2, 1, 2)), np.ones((2, 1), bool), 0.5).total
        return fd_relative_error(f, list(m.parameters().values()))
    # full relation network, every layer composed
    cfg = RelNetConfig(d2=3, d3=2, d4=3, knowledge_bins=3, seed=int(rng.integers(1000)))
    m = RelNetModel(4, cfg)
    for p in m.parameters().values():
        if p.space == ad.Parameter.HYPERBOLIC:
            p.value = random_ball(rng, int(np.prod(p.shape[:-1])) or 1, p.shape[-1], 0.3).reshape(p.shape)
    pairs = [make_pair("d", f"a{i}", f"b{i}", TempRelLabel.from_index(i % 4), dim=4, length=3,
                       pos=(0, 2), kb=i % 3, rng=rng) for i in range(2)]
    batch = Batch.from_examples(pairs)
    return fd_relative_error(lambda: cross_entropy(m.forward_batch(batch), batch.labels),
                             list(m.parameters().values()))


GRAD_KINDS = ("hffl", "nonlinearity", "hgru", "hmlr", "l1", "l2", "embed", "relnet")


def test_gradient_suite(report):
    start = time.perf_counter()
    errors = {k: 0.0 for k in GRAD_KINDS}
    for seed in range(100):
        kind = GRAD_KINDS[seed % len(GRAD_KINDS)]
        errors[kind] = max(errors[kind], _grad_case(kind, np.random.default_rng(seed)))
    elapsed = time.perf_counter() - start
    ok = max(errors.values()) < 1e-4 and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errors.items()) + f", {elapsed:.1f}s"
    assert report("gradients match finite differences over 100 configurations", ok, detail)


def test_oracle_equivalence(report):
    rng = np.random.default_rng(0)
    mismatches = 0
    for i in range(1000):
        nodes, edges = random_graph_edges(rng, int(rng.integers(2, 9)), float(rng.uniform(0.1, 0.7)))
        pairs = [make_pair("d", a, b, lab) for a, b, lab in edges]
        if not pairs:
            continue
        g = build_graph(pairs)["d"]
        events = {e for a, b, _ in edges for e in (a, b)}
        mismatches += sum(negative_set(g, u) != closure_negatives(events, edges, u) for u in events)
    tune_bad = 0
    for i in range(200):
        n = int(rng.integers(1, 40))
        scores = rng.uniform(-1, 1, n)
        # snap some scores onto the grid so ties at +-t are exercised
        snap = rng.random(n) < 0.3
        scores[snap] = np.round(scores[snap], 2)
        gold = [LABELS[j] for j in rng.integers(0, 4, n)]
        tune_bad += tune_threshold_scores(scores, gold, 0.05).threshold_t != grid_threshold_oracle(scores, gold, 0.05)
    ok = mismatches == 0 and tune_bad == 0
    assert report("negative sets and threshold tuning match their oracles", ok,
                  f"{mismatches} closure mismatches, {tune_bad} threshold mismatches")


def test_hand_fixtures(report):
    results = {}
    results["angle 0"] = abs(float(loss_l2(np.array([0.6, 0.0]), np.array([0.3, 0.0])))) <= 1e-9
    results["angle pi"] = abs(float(loss_l2(np.array([0.1, 0.0]), np.array([0.3, 0.0]))) - math.pi) <= 1e-9
    madd = geo.mobius_add(np.array([0.5, 0.0]), np.array([0.5, 0.0]))
    results["mobius"] = np.max(np.abs(madd - [0.8, 0.0])) <= 1e-12
    rows = [(B, B)] * 4 + [(B, A)] + [(A, A)] * 3 + [(A, V)] + [(E, E)] + [(V, B)] + [(V, V)] * 2
    m = compute_metrics(ConfusionMatrix.from_labels([g for g, _ in rows], [p for _, p in rows]))
    results["metrics"] = (m["accuracy"] == 10 / 13 and m["precision"] == 0.8 and m["recall"] == 0.8
                          and abs(m["f1"] - 0.8) < 1e-15)
    sc = float(score(np.array([0.8, 0.0]), np.array([0.5, 0.0]), RuleConfig(0.05, 0.5))[0])
    results["score"] = abs(sc - 0.9565) <= 1e-4
    ok = all(results.values())
    detail = ", ".join(f"{k} {'ok' if v else 'off'}" for k, v in results.items()) + f", score {sc:.5f}"
    assert report("hand-derived fixtures", ok, detail)


def test_synthetic_embedding(report):
    start = time.perf_counter()
    data = generate(SynthSpec(docs=50, depth=6, noise=0.3, seed=0))
    parts = _split(data)
    cfg = EmbedTrainConfig(epochs=20, batch_size=32, lr=1e-2, seed=0)
    model, _ = train_embed(parts["train"], build_graph(parts["train"]), cfg)
    model.rules = tune_threshold(parts["dev"], model)
    ordered = [p for p in parts["test"] if p.label in (B, A)]
    pred = model.predict(ordered)
    f1 = compute_metrics(ConfusionMatrix.from_labels([p.label for p in ordered], pred))["f1"]
    order = norm_ordering_rate(model, ordered)
    elapsed = time.perf_counter() - start
    ok = f1 >= 0.90 and order >= 0.90 and elapsed < 300
    assert report("synthetic 2-D embedding reaches F1 and norm ordering of 0.90", ok,
                  f"F1 {f1:.3f}, ordering {order:.3f}, {len(ordered)} held-out pairs, {elapsed:.1f}s")


def test_synthetic_relnet(report):
    data = generate(SynthSpec(docs=50, depth=6, noise=0.3, seed=0))
    parts = _split(data)
    cfg = RelNetConfig(d2=16, d3=8, d4=16, epochs=30, lr=1e-2, batch_size=32, seed=0)
    _, hist = train_relnet(parts["train"], parts["dev"], cfg)
    accs = [r["dev_acc"] for r in hist.epochs]
    reached = next((r["epoch"] for r in hist.epochs if r["dev_acc"] >= 0.90), None)
    ablations = {}
    for flag in ("no_distance_feature", "euclidean_mlr_head"):
        _, h = train_relnet(parts["train"], parts["dev"], ablate(RelNetConfig(
            d2=16, d3=8, d4=16, epochs=3, lr=1e-2, batch_size=32, seed=0), [flag]))
        ablations[flag] = h.epochs[-1]
    logged = all(len(r) and math.isfinite(r["dev_acc"]) and math.isfinite(r["train_loss"])
                 for r in ablations.values())
    ok = reached is not None and logged
    detail = f"dev acc 0.90 at epoch {reached}, best {max(accs):.3f}; " + ", ".join(
        f"{k} dev acc {v['dev_acc']:.3f}" for k, v in ablations.items())
    assert report("synthetic HGRU network reaches dev accuracy 0.90 within 30 epochs; ablations run", ok, detail)


def test_paper_scale_documented(report):
    # not asserted: needs the real corpus and a pretrained encoder
    report("published headline results at full scale are documented as not reproducible here", True,
           "see README")


def test_determinism(tmp_path, report):
    assert main(["synth", "--docs", "12", "--depth", "4", "--dim", "6", "--seq-len", "5",
                 "--knowledge-bins", "4", "--out", str(tmp_path / "data")]) == EXIT_OK
    pairs, split = str(tmp_path / "data" / "pairs.jsonl"), str(tmp_path / "data" / "split.json")
    same = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["train-embed", "--pairs", pairs, "--split", split, "--epochs", "3", "--batch", "32",
                     "--lr", "1e-2", "--out", str(out / "embed")]) == EXIT_OK
        assert main(["train-relnet", "--pairs", pairs, "--split", split, "--epochs", "2", "--batch", "32",
                     "--lr", "1e-2", "--d2", "4", "--d3", "2", "--d4", "4", "--knowledge-bins", "4",
                     "--out", str(out / "relnet")]) == EXIT_OK
        for kind in ("embed", "relnet"):
            ck = str(out / kind / "checkpoint.json")
            assert main(["eval", "--checkpoint", ck, "--pairs", pairs, "--json", str(out / f"{kind}_eval.json")]) == 0
            assert main(["predict", "--checkpoint", ck, "--pairs", pairs, "--out", str(out / f"{kind}.jsonl")]) == 0
    files = ["embed/checkpoint.json", "embed/metrics.jsonl", "relnet/checkpoint.json", "relnet/metrics.jsonl",
             "embed_eval.json", "relnet_eval.json", "embed.jsonl", "relnet.jsonl"]
    same = [(tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files]
    ok = all(same)
    assert report("reruns give byte-identical checkpoints and logs", ok, f"{sum(same)}/{len(files)} files identical")
