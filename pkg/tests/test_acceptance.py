"""End-to-end acceptance checks.

Each test carries a ``criterion`` marker; conftest turns the outcomes into one
PASS/FAIL line per criterion in the terminal summary. Run on its own with

    python3 -m pytest tests/test_acceptance.py -v

The ablation-ordering check trains 15 models and takes about half an hour on one core.
"""

import math
import random
import time
from dataclasses import replace

import numpy as np
import pytest

from shego.backbone import Backbone, BackboneConfig
from shego.cli import main
from shego.config import config_from_dict
from shego.data.synthetic import DEFAULT_SERVICES, default_corpus_spec, spec_schema
from shego.data.vocab import normalize_text
from shego.encoder import (
    GraphEncoder,
    GraphEncoderConfig,
    asap_pool,
    gcn_layer,
    init_graph_encoder,
    normalized_adjacency,
)
from shego.evaluator import TurnPrediction, average_goal_accuracy, joint_goal_accuracy, parse_decoded, report
from shego.graph import SchemaGraph, apply_active_mask, normalize_adjacency
from shego.numerics import Tensor, finite_diff_check, precision, tensor_checksum
from shego.pipeline import build_model, build_vocabulary, load_corpus, pretrain_backbone
from shego.prompts import build_query, target_from_state
from shego.trainer import ABLATIONS, compute_loss, evaluate, train, with_ablation

from conftest import tiny_config_dict


def random_graph(rng, n, p=0.4):
    a = np.triu((rng.random((n, n)) < p).astype(float), 1)
    return a + a.T


def jitter(model, seed=0, scale=0.1):
    rng = np.random.default_rng(seed)
    for t in model.trainable().values():
        t.data = t.data + rng.normal(0.0, scale, t.data.shape)


# -- 1. gradients of the training loss -----------------------------------------------------

TWO_BY_TWO = {"dialogues": 12, "services": [
    {"name": "Flights_1", "description": "find flights", "slots": [
        {"name": "DestinationCity", "description": "destination city", "values": ["lax", "new york", "boston"]},
        {"name": "DepartureDate", "description": "date of departure", "values": ["today", "next wednesday"]}]},
    {"name": "Hotels_1", "description": "reserve hotels", "slots": [
        {"name": "Location", "description": "hotel city", "values": ["seattle", "miami"]},
        {"name": "NumberOfRooms", "description": "number of rooms", "values": ["1", "2"]}]}]}


@pytest.mark.criterion(1, "loss gradients match central differences (float64, rel < 1e-4)")
def test_loss_gradients_match_finite_differences(record_property):
    start = time.perf_counter()
    cfg = config_from_dict(tiny_config_dict(
        data={"synthetic": TWO_BY_TWO, "num_sentinels": 2},
        backbone={"d_model": 16, "num_heads": 2, "encoder_layers": 2, "decoder_layers": 2, "d_ff": 32,
                  "max_positions": 128},
        encoder={"hidden_dim": 8, "num_levels": 2},
        model={"num_prompts": 4, "mask_dropout": 0.0}))
    with precision(np.float64):
        data = load_corpus(cfg)
        assert data.schema.num_slots == 4
        vocab = build_vocabulary(data, cfg.data.num_sentinels)
        backbone, _ = pretrain_backbone(cfg, data, vocab)
        model = build_model(cfg, data.schema, vocab, backbone)
        assert model.encoder.config.num_levels == 2
        # a generic point: away from initial zeros where ReLU sits on its kink
        jitter(model)
        # top-k cluster selection makes the loss piecewise smooth; a step of 1e-3 can cross a
        # selection boundary, 1e-4 stays inside one piece while roundoff remains negligible
        batch = [ex for ex in data.splits["train"] if ex.active_slots][:2]
        result = finite_diff_check(lambda: compute_loss(batch, model), model.trainable(), epsilon=1e-4,
                                   tolerance=1e-4, max_coords=None)
    elapsed = time.perf_counter() - start
    worst = max(result.values(), key=lambda r: r.max_rel_error)
    coords = sum(r.checked for r in result.values())
    record_property("detail", f"{len(result)} tensors, {coords} coordinates, worst {worst.name} "
                              f"rel {worst.max_rel_error:.2e}, {elapsed:.0f} s")
    assert all(r.passed for r in result.values()), {r.name: r.max_rel_error for r in result.values() if not r.passed}
    assert elapsed < 120


# -- 2. the backbone stays frozen -------------------------------------------------------

@pytest.mark.criterion(2, "frozen backbone bitwise unchanged after 50 training steps")
def test_backbone_unchanged_after_fifty_steps(record_property):
    start = time.perf_counter()
    cfg = config_from_dict(tiny_config_dict(pretrain={"mode": "pretrain", "steps": 20},
                                            train={"batch_size": 2, "max_epochs": 10, "patience": 10}))
    data = load_corpus(cfg)
    vocab = build_vocabulary(data, cfg.data.num_sentinels)
    backbone, _ = pretrain_backbone(cfg, data, vocab)
    at_freeze = dict(backbone.checksums)
    snapshot = {k: t.data.copy() for k, t in backbone.params.items()}
    model = build_model(cfg, data.schema, vocab, backbone)
    examples = data.splits["train"][:10]
    state = train(cfg.train, model, examples, data.splits["dev"])
    steps = state.epoch * math.ceil(len(examples) / cfg.train.batch_size)
    assert steps == 50
    now = {k: tensor_checksum(t.data) for k, t in backbone.params.items()}
    unchanged = sum(now[k] == at_freeze[k] and t.data.tobytes() == snapshot[k].tobytes()
                    for k, t in backbone.params.items())
    elapsed = time.perf_counter() - start
    record_property("detail", f"{unchanged}/{len(now)} tensors identical after {steps} steps, {elapsed:.0f} s")
    assert unchanged == len(now) and elapsed < 60


# -- 3. graph properties ------------------------------------------------------------------

@pytest.mark.criterion(3, "GCN equivariance, readout invariance, ASAP sizes, zero-graph normalisation")
def test_graph_properties(record_property):
    rng = np.random.default_rng(0)
    gcn_worst = readout_worst = 0.0
    cfg = GraphEncoderConfig(num_levels=2, hidden_dim=6, input_dim=5, output_dim=4)
    with precision(np.float64):
        params = init_graph_encoder(cfg, rng)
        for _ in range(20):
            n = int(rng.integers(2, 11))
            a, x, w = random_graph(rng, n), rng.normal(size=(n, 5)), rng.normal(size=(5, 3))
            perm = rng.permutation(n)
            p = np.eye(n)[perm]
            out = gcn_layer(Tensor(x), normalized_adjacency(a), Tensor(w)).data
            out_p = gcn_layer(Tensor(p @ x), normalized_adjacency(p @ a @ p.T), Tensor(w)).data
            gcn_worst = max(gcn_worst, np.abs(p @ out - out_p).max())
            keys = tuple(("S_1", f"s{i}") for i in range(n))
            g = GraphEncoder(cfg, SchemaGraph(a.astype(np.int8), keys), params).encode(x).global_vector.data
            g_p = GraphEncoder(cfg, SchemaGraph((p @ a @ p.T).astype(np.int8), keys), params).encode(p @ x)
            readout_worst = max(readout_worst, np.abs(g - g_p.global_vector.data).max())
        asap = {k[len("l0.asap."):]: v for k, v in params.items() if k.startswith("l0.asap.")}
        sizes_ok = all(
            asap_pool(Tensor(rng.normal(size=(n, 6))), random_graph(rng, n), asap, k).node_features.shape[-2]
            == math.ceil(k * n)
            for n in range(1, 11) for k in (0.25, 0.5, 0.75))
    ident = all(np.array_equal(normalize_adjacency(np.zeros((n, n))), np.eye(n)) for n in range(1, 11))
    record_property("detail", f"GCN max dev {gcn_worst:.1e}, readout max dev {readout_worst:.1e}, "
                              f"ASAP sizes {'ok' if sizes_ok else 'wrong'}, identity {'exact' if ident else 'inexact'}")
    assert gcn_worst < 1e-6 and readout_worst < 1e-6 and sizes_ok and ident


# -- 4. active-slot masking -------------------------------------------------------------

@pytest.mark.criterion(4, "masking zeroes inactive rows, is idempotent, all-active is identity")
def test_active_masking(record_property):
    rng = np.random.default_rng(1)
    trials = 200
    for _ in range(trials):
        m, d = int(rng.integers(1, 12)), int(rng.integers(1, 8))
        feats = rng.normal(size=(m, d))
        active = rng.random(m) < 0.5
        once = apply_active_mask(feats, active).features
        assert np.all(once[~active] == 0.0)
        assert once[active].tobytes() == feats[active].tobytes()
        assert apply_active_mask(once, active).features.tobytes() == once.tobytes()
        assert apply_active_mask(feats, np.ones(m, bool)).features.tobytes() == feats.tobytes()
    record_property("detail", f"{trials} random feature matrices")


# -- 5. metric oracles -----------------------------------------------------------------

def brute_force(pairs):
    def norm(v):
        return " ".join(str(v).lower().split()) or "none"

    hits = active = correct = 0
    for p, g in pairs:
        keys = set(p) | set(g)
        hits += all(norm(p.get(k, "none")) == norm(g.get(k, "none")) for k in keys)
        for k in keys:
            if norm(g.get(k, "none")) != "none":
                active += 1
                correct += norm(p.get(k, "none")) == norm(g.get(k, "none"))
    return hits / len(pairs), correct / active


@pytest.mark.criterion(5, "JGA/AGA equal a brute-force scorer; Avg. JGA of {0.8, 0.6} is 0.7")
def test_metric_oracles(record_property):
    rng = random.Random(0)
    values = ["x", "Y", "none", "two  words", "z"]
    for _ in range(100):
        pairs = []
        for _ in range(rng.randint(1, 15)):
            gold = {s: rng.choice(values) for s in "abcd" if rng.random() < 0.8}
            gold["a"] = rng.choice(["x", "z"])  # at least one active slot
            pred = {s: gold.get(s, "none") if rng.random() < 0.7 else rng.choice(values) for s in "abcd"}
            pairs.append((pred, gold))
        preds = [TurnPrediction(f"d{i}", i, "A_1", p, g) for i, (p, g) in enumerate(pairs)]
        jga, aga = brute_force(pairs)
        assert joint_goal_accuracy(preds) == jga and average_goal_accuracy(preds) == aga
    domains = [TurnPrediction(f"f{i}", 0, "Flights_1", {"x": "1" if i < 4 else "2"}, {"x": "1"}) for i in range(5)]
    domains += [TurnPrediction(f"h{i}", 0, "Hotels_1", {"x": "1" if i < 3 else "2"}, {"x": "1"}) for i in range(5)]
    avg = report(domains).avg_jga
    record_property("detail", f"100 random sets agree exactly; Avg. JGA {avg:.12f}")
    assert abs(avg - 0.7) < 1e-12


# -- 6. rendering round trip -------------------------------------------------------------

@pytest.mark.criterion(6, "parse_decoded inverts target rendering on 200 random states")
def test_target_round_trip(record_property):
    schema = spec_schema(default_corpus_spec())
    rng = np.random.default_rng(0)
    failures = 0
    for _ in range(200):
        svc = DEFAULT_SERVICES[int(rng.integers(len(DEFAULT_SERVICES)))]
        state = {s.name: normalize_text(str(rng.choice(s.values))) if rng.random() < 0.6 else "none"
                 for s in svc.slots}
        q = build_query(schema, svc.name)
        failures += parse_decoded(target_from_state(state, q).tokens, q) != state
    record_property("detail", f"{failures} failures in 200")
    assert failures == 0


# -- 7. the full model can fit its training set ----------------------------------------------

@pytest.mark.slow
@pytest.mark.criterion(7, "full model reaches training JGA >= 0.95 within 300 epochs (< 15 min)")
def test_full_model_overfits_training_set(record_property):
    start = time.perf_counter()
    cfg = config_from_dict({"train": {"max_epochs": 300, "patience": 300, "stop_at": 0.95,
                                      "stop_metric": "dev_jga"}})
    data = load_corpus(cfg)
    assert len(data.schema.services) == 3 and data.schema.num_slots == 10
    vocab = build_vocabulary(data, cfg.data.num_sentinels)
    backbone, _ = pretrain_backbone(cfg, data, vocab)
    model = build_model(cfg, data.schema, vocab, backbone)
    examples = data.splits["train"]
    state = train(cfg.train, model, examples, examples, check_every_step=False)
    jga = evaluate(model, examples).overall_jga
    elapsed = time.perf_counter() - start
    record_property("detail", f"train JGA {jga:.3f} after {state.epoch} epochs "
                              f"({len(examples)} turns), {elapsed / 60:.1f} min")
    assert jga >= 0.95 and state.epoch <= 300 and elapsed < 15 * 60


# -- 8. ablation ordering ------------------------------------------------------------------

ABLATION_DIALOGUES = 100
ABLATION_SEEDS = (0, 1, 2)
ABLATION_MAX_EPOCHS = 100
ABLATION_PATIENCE = 40


def run_ablation(variants=tuple(ABLATIONS), seeds=ABLATION_SEEDS):
    """Test-split Avg. JGA for every (variant, seed); corpus and backbone are shared."""
    cfg = config_from_dict({"data": {"synthetic": {"dialogues": ABLATION_DIALOGUES}},
                            "train": {"max_epochs": ABLATION_MAX_EPOCHS, "patience": ABLATION_PATIENCE}})
    data = load_corpus(cfg)
    vocab = build_vocabulary(data, cfg.data.num_sentinels)
    backbone, _ = pretrain_backbone(cfg, data, vocab)
    scores = {}
    for seed in seeds:
        for name in variants:
            tcfg = replace(with_ablation(cfg.train, name), seed=seed)
            model = build_model(cfg, data.schema, vocab, backbone, ablation=name, seed=seed)
            state = train(tcfg, model, data.splits["train"], data.splits["dev"], check_every_step=False)
            scores[name, seed] = evaluate(model, data.splits["test"]).avg_jga
            print(f"  seed {seed} {name:<16} best epoch {state.best_epoch:>3}  test Avg. JGA {scores[name, seed]:.3f}",
                  flush=True)
    return scores


@pytest.mark.slow
@pytest.mark.criterion(8, "ablation ordering: full >= w/o-SlotConnect, w/o-Active&GP lowest in >= 2 of 3 seeds")
def test_ablation_ordering(record_property):
    scores = run_ablation()
    mean = {name: np.mean([scores[name, s] for s in ABLATION_SEEDS]) for name in ABLATIONS}
    lowest = sum(
        min(ABLATIONS, key=lambda name: (scores[name, s], name != "w/o-Active&GP")) == "w/o-Active&GP"
        for s in ABLATION_SEEDS)
    summary = ", ".join(f"{name} {mean[name]:.3f}" for name in ABLATIONS)
    record_property("detail", f"mean test Avg. JGA: {summary}; w/o-Active&GP lowest in {lowest}/3 seeds")
    assert mean["full"] >= mean["w/o-SlotConnect"] and lowest >= 2


# -- 9. deterministic training runs ---------------------------------------------------------

@pytest.mark.criterion(9, "two identical train runs give byte-identical metrics CSVs")
def test_train_command_is_deterministic(tmp_path, record_property):
    import yaml

    cfg = tmp_path / "run.yaml"
    cfg.write_text(yaml.safe_dump(tiny_config_dict(dialogues=20, pretrain={"mode": "pretrain", "steps": 30},
                                                   train={"max_epochs": 4, "patience": 4})))
    assert main(["pretrain", "--config", str(cfg), "--out-dir", str(tmp_path / "pre")]) == 0
    ckpt = str(tmp_path / "pre" / "backbone.ckpt")
    for run in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--backbone", ckpt, "--out-dir", str(tmp_path / run)]) == 0
    a, b = (tmp_path / "a/metrics.csv").read_bytes(), (tmp_path / "b/metrics.csv").read_bytes()
    record_property("detail", f"{len(a.splitlines()) - 1} epochs, {len(a)} bytes, identical={a == b}")
    assert a == b


# -- 10. decoding contract -----------------------------------------------------------------

def constant_head(bb, column_values):
    """Make the output logits a constant row: column -> value, everything else 0."""
    bb.params["dec.ln_f.g"].data[:] = 0.0
    bb.params["dec.ln_f.b"].data[:] = 1.0 / bb.config.d_model
    head = np.zeros_like(bb.params["lm_head"].data)
    for col, val in column_values.items():
        head[:, col] = val
    bb.params["lm_head"].data = head


@pytest.mark.criterion(10, "greedy decoding stops by 100 tokens and breaks ties deterministically")
def test_decoding_contract(record_property):
    rng = np.random.default_rng(0)
    longest = 0
    for seed in range(10):
        cfg = BackboneConfig(vocab_size=30, d_model=16, num_heads=2, encoder_layers=1, decoder_layers=1, d_ff=32,
                             max_positions=128)
        bb = Backbone.create(cfg, seed)
        if seed % 2:
            constant_head(bb, {int(rng.integers(2, 30)): 1.0})  # never emits EOS
        ids = rng.integers(2, 30, size=(3, 6))
        out = bb.greedy_decode(bb.embed(ids), np.ones((3, 6), bool))
        longest = max(longest, max(len(o) for o in out))
    assert longest == 100

    tied = Backbone.create(BackboneConfig(vocab_size=30, d_model=16, num_heads=2, encoder_layers=1,
                                          decoder_layers=1, d_ff=32, max_positions=128), 0)
    constant_head(tied, {5: 2.0, 11: 2.0, 20: 2.0})
    x = tied.embed(np.array([[3, 4, 6, 7]]))
    runs = [tied.greedy_decode(x, np.ones((1, 4), bool), max_len=12, use_cache=c) for c in (True, False, True)]
    assert runs[0] == runs[1] == runs[2] == [[5] * 12]

    cfg = config_from_dict(tiny_config_dict(model={"num_prompts": 4, "max_decode": 100}))
    data = load_corpus(cfg)
    vocab = build_vocabulary(data, cfg.data.num_sentinels)
    backbone, _ = pretrain_backbone(cfg, data, vocab)
    model = build_model(cfg, data.schema, vocab, backbone)
    word = vocab.id("lax")
    constant_head(backbone, {word: 1.0, word + 1: 1.0})
    decoded = [model.decode(data.splits["dev"][:3]) for _ in range(2)]
    assert decoded[0] == decoded[1]
    assert all(len(row) == 100 and set(row) == {"lax"} for row in decoded[0])
    record_property("detail", f"longest decode {longest} tokens; ties resolve to the lowest id with and without cache")
