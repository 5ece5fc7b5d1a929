import json
from pathlib import Path

import pytest

from ttptagger import synthetic
from ttptagger.attack_kb import build_association_stats, parse_bundle
from ttptagger.ingest import TrainingStore

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def attack_bundle() -> dict:
    """Pinned Enterprise-style bundle snapshot with known golden counts."""
    with open(FIXTURES / "attack_bundle.json") as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def attack_taxonomy(attack_bundle):
    taxonomy, _ = parse_bundle(attack_bundle)
    return taxonomy


@pytest.fixture(scope="session")
def attack_stats(attack_bundle, attack_taxonomy):
    stats, _ = build_association_stats(attack_bundle, attack_taxonomy)
    return stats


@pytest.fixture(scope="session")
def synth_bundle() -> dict:
    return synthetic.synthetic_taxonomy_bundle(n_tactics=5, n_techniques=20, seed=42)


@pytest.fixture(scope="session")
def synth_taxonomy(synth_bundle):
    taxonomy, _ = parse_bundle(synth_bundle)
    return taxonomy


@pytest.fixture(scope="session")
def synth_stats(synth_bundle, synth_taxonomy):
    stats, _ = build_association_stats(synth_bundle, synth_taxonomy)
    return stats


@pytest.fixture(scope="session")
def synth_entries(synth_taxonomy):
    return synthetic.synthetic_entries(synth_taxonomy, n_docs=200, seed=42)


@pytest.fixture(scope="session")
def synth_store(synth_entries):
    """In-memory 200-document synthetic store."""
    return TrainingStore(entries=list(synth_entries))


@pytest.fixture(scope="session")
def small_bundle() -> dict:
    """Tiny taxonomy (3 tactics / 6 techniques) for fast end-to-end tests."""
    return synthetic.synthetic_taxonomy_bundle(n_tactics=3, n_techniques=6, n_groups=4, seed=7)


@pytest.fixture(scope="session")
def small_taxonomy(small_bundle):
    taxonomy, _ = parse_bundle(small_bundle)
    return taxonomy


@pytest.fixture(scope="session")
def small_stats(small_bundle, small_taxonomy):
    stats, _ = build_association_stats(small_bundle, small_taxonomy)
    return stats


@pytest.fixture(scope="session")
def small_entries(small_taxonomy):
    return synthetic.synthetic_entries(small_taxonomy, n_docs=40, seed=7)


@pytest.fixture(scope="session")
def small_store(small_entries):
    return TrainingStore(entries=list(small_entries))


@pytest.fixture(scope="session")
def cli_workspace(tmp_path_factory, small_bundle, small_taxonomy, small_entries):
    """Taxonomy bundle, training store and a trained model on disk."""
    from ttptagger.cli import main

    ws = tmp_path_factory.mktemp("cli")
    taxonomy_path = ws / "taxonomy.json"
    taxonomy_path.write_text(json.dumps(small_bundle), "utf-8")
    store_path = ws / "train.jsonl"
    store = TrainingStore.create(store_path)
    for entry in small_entries:
        store.append_feedback(entry, small_taxonomy)
    model_path = ws / "model.bundle.json"
    rc = main([
        "train",
        "--store", str(store_path),
        "--taxonomy", str(taxonomy_path),
        "--model", str(model_path),
        "--postprocess", "hanging-node",
        "--min-df", "1",
        "--seed", "7",
    ])
    assert rc == 0 and model_path.exists()
    return {"dir": ws, "taxonomy": taxonomy_path, "store": store_path, "model": model_path}
