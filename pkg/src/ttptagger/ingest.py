"""Report ingestion and the labeled training store.

Covers HTML paragraph extraction, token cleaning, the append-only JSON-lines
store that feedback flows into, and bootstrapping that store from a local
corpus directory keyed by URL hash.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from html.parser import HTMLParser
from importlib import resources
from pathlib import Path

from .attack_kb import Taxonomy

_TOKEN_RE = re.compile(r"[a-z]+")
_SKIP_TAGS = {"script", "style"}


class EmptyTextError(ValueError):
    """Document yields no usable text."""


class LabelValidationError(ValueError):
    """Feedback entry references labels the taxonomy does not know."""


class DuplicateDocumentError(ValueError):
    """doc_id already present in the store."""


@dataclass(frozen=True)
class Document:
    doc_id: str
    source: str
    text: str


@dataclass(frozen=True)
class LabeledDocument:
    document: Document
    tactic_labels: frozenset[str]
    technique_labels: frozenset[str]
    added_at: str

    def to_json(self) -> dict:
        return {
            "doc_id": self.document.doc_id,
            "source": self.document.source,
            "text": self.document.text,
            "tactics": sorted(self.tactic_labels),
            "techniques": sorted(self.technique_labels),
            "added_at": self.added_at,
        }

    @classmethod
    def from_json(cls, row: dict) -> "LabeledDocument":
        return cls(
            document=Document(doc_id=row["doc_id"], source=row.get("source", ""), text=row["text"]),
            tactic_labels=frozenset(row.get("tactics", [])),
            technique_labels=frozenset(row.get("techniques", [])),
            added_at=row.get("added_at", ""),
        )


def now_iso() -> str:
    # microsecond resolution: this also serves as the model version stamp
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def load_stopwords() -> frozenset[str]:
    """Bundled English stopword list, one word per line."""
    text = resources.files("ttptagger").joinpath("data/stopwords.txt").read_text("utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


class _ParagraphExtractor(HTMLParser):
    """Collects text found inside <p> elements, skipping script/style bodies."""

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self._p_depth = 0
        self._skip_depth = 0
        self.chunks: list[str] = []

    def handle_starttag(self, tag, attrs):
        if tag == "p":
            self._p_depth += 1
        elif tag in _SKIP_TAGS:
            self._skip_depth += 1

    def handle_endtag(self, tag):
        if tag == "p":
            self._p_depth = max(0, self._p_depth - 1)
        elif tag in _SKIP_TAGS:
            self._skip_depth = max(0, self._skip_depth - 1)

    def handle_data(self, data):
        if self._p_depth > 0 and self._skip_depth == 0:
            self.chunks.append(data)


def extract_html_text(html: bytes | str) -> str:
    """Concatenate the text of paragraph elements, in document order.

    Content outside <p> tags (navigation, scripts, comments) is dropped.
    Raises EmptyTextError when no paragraph text survives.
    """
    if isinstance(html, bytes):
        html = html.decode("utf-8", errors="replace")
    parser = _ParagraphExtractor()
    parser.feed(html)
    parser.close()
    text = " ".join(" ".join(parser.chunks).split())
    if not text:
        raise EmptyTextError("no paragraph text found")
    return text


def clean_text(raw: str, stopwords: frozenset[str]) -> list[str]:
    """Lowercased alphabetic tokens of length >= 2, stopwords removed, order kept."""
    return [
        tok
        for tok in _TOKEN_RE.findall(raw.lower())
        if len(tok) >= 2 and tok not in stopwords
    ]


class TrainingStore:
    """Append-only sequence of labeled documents backed by a JSON-lines file.

    One JSON object per line: {doc_id, source, text, tactics, techniques,
    added_at}. Appends are serialized through a single writer lock and fsynced
    before returning, so a caller observing a successful append can rely on
    the entry being on disk. Readers see a consistent prefix.
    """

    def __init__(self, path: str | os.PathLike | None = None,
                 entries: list[LabeledDocument] | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: list[LabeledDocument] = list(entries or [])
        self._ids = {e.document.doc_id for e in self._entries}
        if len(self._ids) != len(self._entries):
            raise DuplicateDocumentError("duplicate doc_id in initial entries")
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path: str | os.PathLike) -> "TrainingStore":
        entries = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    entries.append(LabeledDocument.from_json(json.loads(line)))
                except (json.JSONDecodeError, KeyError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad store line: {exc}") from exc
        return cls(path=path, entries=entries)

    @classmethod
    def create(cls, path: str | os.PathLike) -> "TrainingStore":
        store = cls(path=path)
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).touch()
        return store

    @property
    def entries(self) -> tuple[LabeledDocument, ...]:
        return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def append_feedback(self, entry: LabeledDocument, taxonomy: Taxonomy) -> None:
        """Validate against the taxonomy and persist at the end of the store."""
        unknown = (entry.tactic_labels | entry.technique_labels) - taxonomy.label_ids()
        if unknown:
            raise LabelValidationError(f"unknown labels: {sorted(unknown)}")
        bad_tactics = entry.tactic_labels - {t.id for t in taxonomy.tactics}
        bad_techniques = entry.technique_labels - set(taxonomy.membership)
        if bad_tactics or bad_techniques:
            raise LabelValidationError(
                f"labels in wrong scope: {sorted(bad_tactics | bad_techniques)}"
            )
        with self._lock:
            if entry.document.doc_id in self._ids:
                raise DuplicateDocumentError(entry.document.doc_id)
            if self.path is not None:
                line = json.dumps(entry.to_json(), ensure_ascii=False, sort_keys=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            self._entries.append(entry)
            self._ids.add(entry.document.doc_id)


def filter_trainable_labels(store: TrainingStore, min_reports: int = 5) -> tuple[list[str], list[str]]:
    """Split stored ground truth into trainable tactic and technique labels.

    Techniques with fewer than `min_reports` positive documents are dropped;
    tactics are exempt from the threshold (any tactic with at least one
    positive document stays). Raising min_reports never adds a label.
    """
    if min_reports < 1:
        raise ValueError("min_reports must be >= 1")
    tactic_counts: dict[str, int] = {}
    technique_counts: dict[str, int] = {}
    for entry in store.entries:
        for t in entry.tactic_labels:
            tactic_counts[t] = tactic_counts.get(t, 0) + 1
        for t in entry.technique_labels:
            technique_counts[t] = technique_counts.get(t, 0) + 1
    tactics = sorted(tactic_counts)
    techniques = sorted(t for t, c in technique_counts.items() if c >= min_reports)
    return tactics, techniques


def url_key(url: str) -> str:
    return hashlib.sha256(url.encode("utf-8")).hexdigest()


def bootstrap_store(
    bundle: dict,
    taxonomy: Taxonomy,
    corpus_dir: str | os.PathLike,
    store_path: str | os.PathLike,
    stopwords: frozenset[str] | None = None,
) -> tuple[TrainingStore, list[str]]:
    """Build a training store by matching bundle reference URLs to local files.

    The corpus directory holds pre-fetched reports named `<sha256(url)>.txt`
    or `<sha256(url)>.html`; nothing is fetched from the network. A report
    referenced by an attack-pattern (or by a `uses` relationship targeting
    one) is labeled with that technique; reports referenced by tactic objects
    get the tactic. Tactic ground truth is completed with the member tactics
    of each technique label, mirroring how tactics attach to reports through
    their techniques.
    """
    stopwords = stopwords if stopwords is not None else load_stopwords()
    corpus_dir = Path(corpus_dir)
    diagnostics: list[str] = []

    url_tactics: dict[str, set[str]] = {}
    url_techniques: dict[str, set[str]] = {}

    def note_refs(obj: dict, tactic_ids: set[str], technique_ids: set[str]) -> None:
        for ref in obj.get("external_references", []) or []:
            url = ref.get("url")
            if not url or ref.get("source_name") == "mitre-attack":
                continue
            url_tactics.setdefault(url, set()).update(tactic_ids)
            url_techniques.setdefault(url, set()).update(technique_ids)

    stix_to_technique = taxonomy.stix_index
    tactic_by_stix = {t.stix_id: t.id for t in taxonomy.tactics}
    for obj in bundle.get("objects", []):
        otype = obj.get("type")
        retired = bool(obj.get("revoked")) or bool(obj.get("x_mitre_deprecated"))
        if retired:
            continue
        if otype == "attack-pattern":
            tid = stix_to_technique.get(obj.get("id", ""))
            if tid:
                note_refs(obj, set(), {tid})
        elif otype == "x-mitre-tactic":
            tac = tactic_by_stix.get(obj.get("id", ""))
            if tac:
                note_refs(obj, {tac}, set())
        elif otype == "relationship" and obj.get("relationship_type") == "uses":
            tid = stix_to_technique.get(obj.get("target_ref", ""))
            if tid:
                note_refs(obj, set(), {tid})

    store = TrainingStore.create(store_path)
    matched = 0
    for url in sorted(url_tactics):
        key = url_key(url)
        text = None
        txt_path = corpus_dir / f"{key}.txt"
        html_path = corpus_dir / f"{key}.html"
        try:
            if txt_path.exists():
                text = txt_path.read_text("utf-8", errors="replace")
            elif html_path.exists():
                text = extract_html_text(html_path.read_bytes())
        except EmptyTextError:
            diagnostics.append(f"{url}: no paragraph text in corpus file; skipped")
            continue
        if text is None:
            diagnostics.append(f"{url}: no corpus file {key}.txt|.html; skipped")
            continue
        tokens = clean_text(text, stopwords)
        if not tokens:
            diagnostics.append(f"{url}: empty after cleaning; skipped")
            continue
        techniques = frozenset(url_techniques[url])
        tactics = set(url_tactics[url])
        for tid in techniques:
            tactics |= taxonomy.membership.get(tid, frozenset())
        entry = LabeledDocument(
            document=Document(doc_id=key, source=url, text=" ".join(tokens)),
            tactic_labels=frozenset(tactics),
            technique_labels=techniques,
            added_at=now_iso(),
        )
        store.append_feedback(entry, taxonomy)
        matched += 1
    diagnostics.append(f"bootstrap: matched {matched} of {len(url_tactics)} referenced urls")
    return store, diagnostics
