"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v` (add -s to see the PASS lines
as they happen). Oracles live in tests/oracles.py and share no code with the
package.
"""

import dataclasses
import json
import math
import shutil
import threading
import time

import numpy as np
import pytest

from oracles import (
    brute_force_branching_weight,
    brute_force_knapsack,
    naive_hanging_node,
    naive_score,
)
from ttptagger import evaluate, postprocess, stix_export, synthetic
from ttptagger.attack_kb import AssociationStats, TacticDef, TechniqueDef, Taxonomy, parse_bundle
from ttptagger.branching import Edge, maximum_branching
from ttptagger.classifier import Prediction, PredictionSet, TrainConfig
from ttptagger.evaluate import cross_validate, f_beta, majority_baseline, score
from ttptagger.ingest import Document, TrainingStore
from ttptagger.postprocess import HangingNodeConfig, direct_mapping, hanging_node, knapsack_extend


def done(criterion: str) -> None:
    print(f"[acceptance] {criterion}: PASS")


def toy_taxonomy(membership: dict[str, set[str]]) -> Taxonomy:
    tactic_ids = sorted({ta for m in membership.values() for ta in m})
    tactics = tuple(
        TacticDef(id=t, name=t, stix_id=f"x-mitre-tactic--{t}", shortname=t.lower())
        for t in tactic_ids
    )
    techniques = tuple(
        TechniqueDef(id=t, name=t, stix_id=f"attack-pattern--{t}", tactic_ids=frozenset(m))
        for t, m in sorted(membership.items())
    )
    return Taxonomy(
        tactics=tactics,
        techniques=techniques,
        membership={t.id: t.tactic_ids for t in techniques},
        stix_index={},
        version="toy",
    )


def pset(tactics: dict[str, float], techniques: dict[str, float], doc_id="doc") -> PredictionSet:
    def block(confs):
        return tuple(
            Prediction(label_id=lbl, raw_score=2 * c - 1, confidence=c, decided=c >= 0.5)
            for lbl, c in sorted(confs.items())
        )

    return PredictionSet(doc_id=doc_id, tactics=block(tactics), techniques=block(techniques))


def test_c01_metrics_match_bruteforce_oracle():
    """score() vs a naive set-comparison oracle: 1000 instances, 20 labels, 1e-12."""
    labels = [f"L{k:02d}" for k in range(20)]
    rng = np.random.default_rng(1001)
    start = time.monotonic()
    for _ in range(1000):
        gold, pred = {}, {}
        for d in range(25):
            gold[f"d{d}"] = {l for l in labels if rng.random() < 0.25}
            pred[f"d{d}"] = {l for l in labels if rng.random() < 0.25}
        got = score(gold, pred, labels).as_tuple()
        want = naive_score(gold, pred, labels)
        for g, w in zip(got, want):
            assert abs(g - w) <= 1e-12
    elapsed = time.monotonic() - start
    assert elapsed < 5.0, f"metrics oracle sweep took {elapsed:.2f}s"
    done("C1 metrics-oracle (1000 instances, <5s)")


def test_c02_f_beta_spot_values():
    assert f_beta(1.0, 1.0) == 1.0
    assert abs(f_beta(2 / 3, 1 / 2) - 0.625) <= 1e-12
    done("C2 f-beta spot values")


def test_c03_direct_mapping_perfection():
    """Gold techniques through direct mapping give 100% tactic metrics exactly."""
    rng = np.random.default_rng(33)
    bundle = synthetic.synthetic_taxonomy_bundle(n_tactics=5, n_techniques=20, seed=42)
    taxonomy, _ = parse_bundle(bundle)
    entries = synthetic.synthetic_entries(taxonomy, n_docs=120, seed=9)
    gold_tactics = {}
    mapped_tactics = {}
    tactic_ids = taxonomy.tactic_ids()
    for entry in entries:
        doc_id = entry.document.doc_id
        gold_tactics[doc_id] = set(entry.tactic_labels)
        tech_conf = {
            t: (0.9 if t in entry.technique_labels else float(rng.random() * 0.4))
            for t in taxonomy.technique_ids()
        }
        tac_conf = {t: float(rng.random()) for t in tactic_ids}
        out = direct_mapping(pset(tac_conf, tech_conf, doc_id=doc_id), taxonomy)
        mapped_tactics[doc_id] = {p.label_id for p in out.tactics if p.decided}
    report = score(gold_tactics, mapped_tactics, tactic_ids)
    assert report.as_tuple() == (1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    done("C3 direct-mapping perfection (exact 100%)")


def test_c04_hanging_node_matches_naive_checker():
    """10,000 random confidence assignments over 3 tactics / 6 techniques."""
    membership = {
        "T0001": {"TA0001"},
        "T0002": {"TA0001", "TA0002"},
        "T0003": {"TA0002"},
        "T0004": {"TA0003"},
        "T0005": {"TA0002", "TA0003"},
        "T0006": {"TA0001", "TA0003"},
    }
    taxonomy = toy_taxonomy(membership)
    cfg = HangingNodeConfig()
    rng = np.random.default_rng(44)
    for _ in range(10_000):
        tac = {t: float(rng.random()) for t in ("TA0001", "TA0002", "TA0003")}
        tec = {t: float(rng.random()) for t in membership}
        pred = pset(tac, tec)
        out = hanging_node(pred, cfg, taxonomy)
        want_tac, want_tec = naive_hanging_node(
            tac, tec,
            {p.label_id for p in pred.tactics if p.decided},
            {p.label_id for p in pred.techniques if p.decided},
            {k: set(v) for k, v in membership.items()},
            cfg.th, cfg.a, cfg.b, cfg.c, cfg.d,
        )
        assert {p.label_id for p in out.tactics if p.decided} == want_tac
        assert {p.label_id for p in out.techniques if p.decided} == want_tec
        assert [p.confidence for p in out.tactics] == [p.confidence for p in pred.tactics]
        assert [p.confidence for p in out.techniques] == [p.confidence for p in pred.techniques]
    done("C4 hanging-node oracle (10,000 assignments, exact)")


def test_c05_edmonds_matches_enumeration():
    """200 random weighted digraphs with <=5 nodes, exact weight equality."""
    rng = np.random.default_rng(55)
    for trial in range(200):
        n = int(rng.integers(2, 6))
        edges = []
        for s in range(n):
            for d in range(n):
                if s == d or rng.random() < 0.45:
                    continue
                w = float(np.round(rng.random() * 2 - (0.6 if trial % 3 == 0 else 0.0), 3))
                edges.append(Edge(f"n{s}", f"n{d}", w))
        chosen = maximum_branching(edges)
        indeg = {}
        for e in chosen:
            indeg[e.dst] = indeg.get(e.dst, 0) + 1
        assert all(v <= 1 for v in indeg.values())
        got = sum(e.weight for e in chosen)
        want = brute_force_branching_weight([(e.src, e.dst, e.weight) for e in edges])
        assert abs(got - want) <= 1e-9
    done("C5 Edmonds branching oracle (200 digraphs, exact)")


def test_c06_knapsack_matches_exhaustive_search():
    """200 random association instances with <=12 candidates, exact value."""
    rng = np.random.default_rng(66)
    for _ in range(200):
        n_dec = int(rng.integers(1, 4))
        n_cand = int(rng.integers(1, 13))
        decided = [f"D{k}" for k in range(n_dec)]
        cands = [f"C{k:02d}" for k in range(n_cand)]
        support = {t: int(rng.integers(1, 20)) for t in decided + cands}
        joint = {}
        for c in cands:
            for d in decided:
                if rng.random() < 0.7:
                    cap = min(support[c], support[d])
                    joint[tuple(sorted((c, d)))] = int(rng.integers(1, cap + 1))
        stats = AssociationStats(
            support=support, joint=joint, total_users=50,
            labels=frozenset(decided + cands),
        )
        capacity = int(rng.integers(0, 5))
        penalty = 0.1
        pred = pset({}, {**{d: 0.9 for d in decided}, **{c: 0.2 for c in cands}})
        out = knapsack_extend(pred, stats, capacity=capacity, penalty=penalty)
        added = {p.label_id for p in out.techniques if p.decided} - set(decided)

        # independent value computation and exhaustive subset optimum
        values, names = [], []
        for c in cands:
            linked = [d for d in decided if joint.get(tuple(sorted((c, d))), 0) > 0]
            if not linked:
                continue
            gain = sum(
                math.log1p(joint[tuple(sorted((c, d)))] / support[d]) for d in linked
            )
            values.append(gain - penalty)
            names.append(c)
        want_value, _ = brute_force_knapsack(values, [1] * len(values), capacity)
        got_value = sum(values[names.index(a)] for a in added)
        assert abs(got_value - want_value) <= 1e-12
        assert len(added) <= capacity
    done("C6 knapsack oracle (200 instances, exact)")


def test_c07_synthetic_end_to_end_cross_validation():
    """200 docs, 5 tactics, 20 techniques, seed 42: macro F0.5 gates, <60s."""
    start = time.monotonic()
    bundle = synthetic.synthetic_taxonomy_bundle(n_tactics=5, n_techniques=20, seed=42)
    taxonomy, _ = parse_bundle(bundle)
    store = TrainingStore(entries=synthetic.synthetic_entries(taxonomy, n_docs=200, seed=42))
    cv = cross_validate(store, taxonomy, TrainConfig(seed=42, folds=5), "hanging-node")
    elapsed = time.monotonic() - start
    assert cv.tactics.macro_f05 >= 0.90, f"tactics macro F0.5 {cv.tactics.macro_f05:.4f}"
    assert cv.techniques.macro_f05 >= 0.80, f"techniques macro F0.5 {cv.techniques.macro_f05:.4f}"
    assert elapsed < 60.0, f"end-to-end CV took {elapsed:.1f}s"
    done(
        f"C7 synthetic end-to-end (tactics {cv.tactics.macro_f05:.3f} >= 0.90, "
        f"techniques {cv.techniques.macro_f05:.3f} >= 0.80, {elapsed:.1f}s < 60s)"
    )


def test_c08_majority_baseline_analytic_precision():
    """Baseline micro precision equals the prevalence ratio to 1e-12."""
    rng = np.random.default_rng(88)
    labels = [f"L{k}" for k in range(6)]
    weights = [0.85, 0.4, 0.3, 0.25, 0.2, 0.1]
    train = []
    for _ in range(400):
        s = {l for l, w in zip(labels, weights) if rng.random() < w}
        train.append(s or {"L0"})
    gold = {}
    for d in range(500):
        s = {l for l, w in zip(labels, weights) if rng.random() < w}
        gold[f"t{d}"] = s
    preds = majority_baseline(train, len(gold))
    majority_label = next(iter(preds[0]))
    pred_map = {doc: preds[k] for k, doc in enumerate(sorted(gold))}
    report = score(gold, pred_map, labels)
    prevalence = sum(1 for s in gold.values() if majority_label in s) / len(gold)
    assert abs(report.micro_precision - prevalence) <= 1e-12
    done("C8 majority baseline analytic precision (1e-12)")


def test_c09_stix_round_trip(attack_taxonomy):
    doc = Document(doc_id="r1", source="a.txt", text="Attackers phished then encrypted hosts.")
    pred = pset(
        {"TA0001": 0.9, "TA0040": 0.8, "TA0005": 0.2},
        {"T1566": 0.95, "T1486": 0.7, "T1003": 0.1},
    )
    first = stix_export.export_json(pred, doc, attack_taxonomy, "Incident", "2026-04-01T00:00:00Z")
    second = stix_export.export_json(pred, doc, attack_taxonomy, "Incident", "2026-04-01T00:00:00Z")
    assert first.encode() == second.encode()
    parsed = json.loads(first)
    refs = set(parsed["objects"][0]["object_refs"])
    want = {attack_taxonomy.stix_id_of(l) for l in ("TA0001", "TA0040", "T1566", "T1486")}
    assert refs == want
    assert parsed["objects"][0]["description"] == doc.text
    done("C9 STIX round-trip (byte-identical, refs resolve)")


def test_c10_service_contract(tmp_path, cli_workspace, small_entries):
    from fastapi.testclient import TestClient

    from ttptagger.service import create_app

    model_path = tmp_path / "model.bundle.json"
    store_path = tmp_path / "store.jsonl"
    shutil.copy(cli_workspace["model"], model_path)
    shutil.copy(cli_workspace["store"], store_path)
    app = create_app(model_path, store_path)
    engine = app.state.engine
    with TestClient(app) as client:
        # predict
        resp = client.post("/api/predict", json={"text": small_entries[0].document.text})
        assert resp.status_code == 200
        body = resp.json()
        assert body["tactics"] and body["techniques"]

        # durable feedback: entry visible in the store file once 201 arrives
        resp = client.post(
            "/api/feedback",
            json={"text": "observed lateral movement", "tactics": ["TA0001"], "techniques": []},
        )
        assert resp.status_code == 201
        assert resp.json()["doc_id"] in store_path.read_text()
        assert client.post(
            "/api/feedback", json={"text": "x", "techniques": ["T9999"]}
        ).status_code == 422

        # single-flight retrain: concurrent second request is rejected
        release = threading.Event()
        engine.train_fn = lambda: (
            release.wait(10),
            dataclasses.replace(engine.bundle, trained_at="2031-01-01T00:00:00Z"),
        )[1]
        assert client.post("/api/retrain").status_code == 202
        assert client.post("/api/retrain").status_code == 409
        release.set()
        for _ in range(200):
            if not engine.retrain_running():
                break
            time.sleep(0.02)
        assert client.get("/api/model").json()["trained_at"] == "2031-01-01T00:00:00Z"
    done("C10 service contract (predict/feedback/retrain, 409 single-flight)")
