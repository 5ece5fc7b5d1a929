"""Export prediction results as a STIX 2.0 bundle.

The bundle holds a single Report object whose description is the original
report text and whose object_refs point at the STIX ids of every decided
tactic and technique. Identifiers derive from a fixed UUID namespace over
(title, published), so identical inputs export byte-identically.
"""

from __future__ import annotations

import json
import logging
import uuid

from .attack_kb import Taxonomy, UnknownLabelError
from .classifier import PredictionSet
from .ingest import Document, now_iso

logger = logging.getLogger(__name__)

REPORT_NAMESPACE = uuid.UUID("ab51ee36-3637-41a1-9d3b-5fa138c33f01")


class ExportError(ValueError):
    """A decided label cannot be resolved to a STIX object."""


def export(
    pred: PredictionSet,
    doc: Document,
    taxonomy: Taxonomy,
    title: str,
    published: str | None = None,
) -> dict:
    """Build the STIX 2.0 bundle for one prediction.

    `published` defaults to the current time; pass it explicitly when a
    reproducible export is needed.
    """
    published = published or now_iso()
    decided = [p.label_id for p in pred.tactics if p.decided]
    decided += [p.label_id for p in pred.techniques if p.decided]
    refs = []
    for label in sorted(decided):
        try:
            refs.append(taxonomy.stix_id_of(label))
        except UnknownLabelError as exc:
            raise ExportError(f"decided label {label} has no STIX id in the taxonomy") from exc
    if not refs:
        logger.warning("no decided labels for %s; exporting a report with empty object_refs", doc.doc_id)

    report_id = f"report--{uuid.uuid5(REPORT_NAMESPACE, f'report|{title}|{published}')}"
    bundle_id = f"bundle--{uuid.uuid5(REPORT_NAMESPACE, f'bundle|{title}|{published}')}"
    report = {
        "type": "report",
        "id": report_id,
        "created": published,
        "modified": published,
        "published": published,
        "name": title,
        "description": doc.text,
        "labels": ["threat-report"],
        "object_refs": refs,
    }
    return {"type": "bundle", "id": bundle_id, "spec_version": "2.0", "objects": [report]}


def export_json(
    pred: PredictionSet,
    doc: Document,
    taxonomy: Taxonomy,
    title: str,
    published: str | None = None,
) -> str:
    """Stable text form: lexicographic key order, two-space indent."""
    bundle = export(pred, doc, taxonomy, title, published)
    return json.dumps(bundle, sort_keys=True, indent=2) + "\n"
