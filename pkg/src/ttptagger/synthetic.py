"""Deterministic synthetic taxonomy bundles and labeled corpora.

Used by the test harness and as a quick way to try the tool without a real
report corpus: every label is keyed to three distinctive tokens planted in
the documents that carry it, plus shared noise vocabulary.

Run `python -m ttptagger.synthetic --out-dir demo` to write a taxonomy bundle
and training store ready for the train/evaluate/serve commands.
"""

from __future__ import annotations

import argparse
import json
import uuid
from pathlib import Path

import numpy as np

from .attack_kb import Taxonomy, parse_bundle
from .ingest import Document, LabeledDocument, TrainingStore

_NS = uuid.UUID("7a3a83a6-9bf3-4a55-a5b2-6c3fd1d7c006")
_FIXED_STAMP = "2026-01-01T00:00:00Z"

_NOISE_WORDS = [
    "server", "network", "windows", "system", "file", "process", "user",
    "attack", "campaign", "malware", "binary", "payload", "registry",
    "domain", "email", "report", "analysis", "observed", "actors", "infra",
    "command", "memory", "disk", "service", "update", "module", "stage",
    "victim", "targets", "access", "session", "machine", "endpoint",
    "traffic", "samples", "loader", "variant", "toolkit", "backdoor", "data",
]


def _b26(n: int, width: int = 3) -> str:
    out = []
    for _ in range(width):
        out.append(chr(ord("a") + n % 26))
        n //= 26
    return "".join(reversed(out))


def tactic_tokens(i: int) -> list[str]:
    return [f"goal{_b26(i)}{s}" for s in ("one", "two", "three")]


def technique_tokens(k: int) -> list[str]:
    return [f"sig{_b26(k)}{s}" for s in ("one", "two", "three")]


def synthetic_taxonomy_bundle(
    n_tactics: int = 5, n_techniques: int = 20, n_groups: int = 8, seed: int = 42
) -> dict:
    """A small STIX 2.0 bundle: tactics, techniques and groups that use them.

    Technique k belongs to tactic k % n_tactics, and with probability 1/3 to
    a second tactic, so some techniques span two goals like the real matrix.
    """
    rng = np.random.default_rng(seed)
    objects: list[dict] = [
        {
            "type": "x-mitre-collection",
            "id": f"x-mitre-collection--{uuid.uuid5(_NS, 'collection')}",
            "name": "synthetic",
            "x_mitre_version": f"synthetic-{seed}",
        }
    ]
    shortnames = []
    for i in range(n_tactics):
        short = f"synthetic-goal-{_b26(i)}"
        shortnames.append(short)
        objects.append(
            {
                "type": "x-mitre-tactic",
                "id": f"x-mitre-tactic--{uuid.uuid5(_NS, f'tactic{i}')}",
                "name": f"Goal {_b26(i).upper()}",
                "x_mitre_shortname": short,
                "external_references": [
                    {"source_name": "mitre-attack", "external_id": f"TA{i + 1:04d}"}
                ],
            }
        )
    technique_stix = []
    for k in range(n_techniques):
        phases = [{"kill_chain_name": "synthetic", "phase_name": shortnames[k % n_tactics]}]
        if rng.random() < 1 / 3:
            other = int(rng.integers(n_tactics))
            if shortnames[other] != phases[0]["phase_name"]:
                phases.append({"kill_chain_name": "synthetic", "phase_name": shortnames[other]})
        sid = f"attack-pattern--{uuid.uuid5(_NS, f'technique{k}')}"
        technique_stix.append(sid)
        objects.append(
            {
                "type": "attack-pattern",
                "id": sid,
                "name": f"Signature {_b26(k).upper()}",
                "kill_chain_phases": phases,
                "external_references": [
                    {"source_name": "mitre-attack", "external_id": f"T{k + 1:04d}"}
                ],
            }
        )
    for g in range(n_groups):
        gid = f"intrusion-set--{uuid.uuid5(_NS, f'group{g}')}"
        objects.append({"type": "intrusion-set", "id": gid, "name": f"Group {_b26(g).upper()}"})
        used = rng.choice(n_techniques, size=int(rng.integers(2, 5)), replace=False)
        for k in sorted(int(u) for u in used):
            objects.append(
                {
                    "type": "relationship",
                    "id": f"relationship--{uuid.uuid5(_NS, f'uses{g}:{k}')}",
                    "relationship_type": "uses",
                    "source_ref": gid,
                    "target_ref": technique_stix[k],
                }
            )
    return {"type": "bundle", "id": f"bundle--{uuid.uuid5(_NS, 'bundle')}", "objects": objects}


def synthetic_entries(
    taxonomy: Taxonomy, n_docs: int = 200, seed: int = 42, noise_tokens: int = 12
) -> list[LabeledDocument]:
    """Labeled documents whose tactic ground truth is exactly the member-union
    of their technique ground truth.

    Document d always carries technique d % N (uniform coverage), plus up to
    two random extras. Signature tokens repeat enough to survive the
    top-half feature selection against the shared noise vocabulary.
    """
    rng = np.random.default_rng(seed)
    technique_ids = taxonomy.technique_ids()
    n = len(technique_ids)
    entries = []
    for d in range(n_docs):
        chosen = {technique_ids[d % n]}
        for _ in range(int(rng.integers(0, 3))):
            chosen.add(technique_ids[int(rng.integers(n))])
        tactic_set: set[str] = set()
        words: list[str] = []
        for tid in sorted(chosen):
            k = technique_ids.index(tid)
            words.extend(technique_tokens(k) * 3)
            for tac in sorted(taxonomy.membership[tid]):
                tactic_set.add(tac)
                words.extend(tactic_tokens(int(tac[2:]) - 1) * 2)
        noise = rng.choice(len(_NOISE_WORDS), size=noise_tokens, replace=True)
        words.extend(_NOISE_WORDS[int(i)] for i in noise)
        perm = rng.permutation(len(words))
        text = " ".join(words[int(i)] for i in perm)
        entries.append(
            LabeledDocument(
                document=Document(doc_id=f"synth-{d:04d}", source="synthetic", text=text),
                tactic_labels=frozenset(tactic_set),
                technique_labels=frozenset(chosen),
                added_at=_FIXED_STAMP,
            )
        )
    return entries


def synthetic_store(
    path, taxonomy: Taxonomy, n_docs: int = 200, seed: int = 42
) -> TrainingStore:
    store = TrainingStore.create(path)
    for entry in synthetic_entries(taxonomy, n_docs=n_docs, seed=seed):
        store.append_feedback(entry, taxonomy)
    return store


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="generate a synthetic demo dataset")
    parser.add_argument("--out-dir", default="demo")
    parser.add_argument("--docs", type=int, default=200)
    parser.add_argument("--tactics", type=int, default=5)
    parser.add_argument("--techniques", type=int, default=20)
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args(argv)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = synthetic_taxonomy_bundle(args.tactics, args.techniques, seed=args.seed)
    bundle_path = out / "taxonomy.json"
    bundle_path.write_text(json.dumps(bundle, indent=2, sort_keys=True) + "\n", "utf-8")
    taxonomy, _ = parse_bundle(bundle)
    synthetic_store(out / "train.jsonl", taxonomy, n_docs=args.docs, seed=args.seed)
    print(f"wrote {bundle_path} and {out / 'train.jsonl'} ({args.docs} docs)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
