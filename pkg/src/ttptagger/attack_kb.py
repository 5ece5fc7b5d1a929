"""ATT&CK Enterprise knowledge base: taxonomy and technique co-occurrence statistics.

Parses a STIX 2.0 bundle into the tactic/technique label space used by the
classifiers, and counts how often technique pairs are used together by the
same group, malware or tool.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from itertools import combinations

TACTIC_ID_RE = re.compile(r"^TA\d+$")
TECHNIQUE_ID_RE = re.compile(r"^T\d+(\.\d+)?$")

# STIX object types whose `uses` relationships count as one "user" each.
USER_OBJECT_TYPES = ("intrusion-set", "malware", "tool")


class BundleParseError(ValueError):
    """The input is not a usable STIX bundle."""


class UnknownLabelError(KeyError):
    """A tactic/technique id is not part of the taxonomy."""


@dataclass(frozen=True)
class TacticDef:
    id: str          # ATT&CK external id, e.g. TA0001
    name: str
    stix_id: str
    shortname: str   # kill-chain phase name, e.g. "initial-access"


@dataclass(frozen=True)
class TechniqueDef:
    id: str          # ATT&CK external id, e.g. T1134
    name: str
    stix_id: str
    tactic_ids: frozenset[str]


@dataclass(frozen=True)
class Taxonomy:
    """Immutable label space; safe to share across threads."""

    tactics: tuple[TacticDef, ...]
    techniques: tuple[TechniqueDef, ...]
    membership: dict[str, frozenset[str]]   # technique id -> tactic ids
    stix_index: dict[str, str]              # stix id -> label id (sub-technique ids map to their parent)
    version: str = "unknown"

    def tactic_ids(self) -> list[str]:
        return [t.id for t in self.tactics]

    def technique_ids(self) -> list[str]:
        return [t.id for t in self.techniques]

    def label_ids(self) -> set[str]:
        return {t.id for t in self.tactics} | {t.id for t in self.techniques}

    def name_of(self, label_id: str) -> str:
        for t in self.tactics:
            if t.id == label_id:
                return t.name
        for t in self.techniques:
            if t.id == label_id:
                return t.name
        raise UnknownLabelError(label_id)

    def stix_id_of(self, label_id: str) -> str:
        for t in self.tactics:
            if t.id == label_id:
                return t.stix_id
        for t in self.techniques:
            if t.id == label_id:
                return t.stix_id
        raise UnknownLabelError(label_id)


@dataclass(frozen=True)
class AssociationStats:
    """Technique usage counts across groups/malware/tools.

    `joint` is keyed by the sorted pair tuple; `labels` is the technique id
    universe so lookups can distinguish "known, count 0" from "unknown".
    """

    support: dict[str, int]
    joint: dict[tuple[str, str], int]
    total_users: int
    labels: frozenset[str]

    def support_of(self, tid: str) -> int:
        if tid not in self.labels:
            raise UnknownLabelError(tid)
        return self.support.get(tid, 0)

    def joint_of(self, i: str, j: str) -> int:
        if i not in self.labels:
            raise UnknownLabelError(i)
        if j not in self.labels:
            raise UnknownLabelError(j)
        if i == j:
            return self.support.get(i, 0)
        return self.joint.get(_pair(i, j), 0)


def _pair(i: str, j: str) -> tuple[str, str]:
    return (i, j) if i <= j else (j, i)


def _external_id(obj: dict) -> str | None:
    for ref in obj.get("external_references", []) or []:
        if ref.get("source_name") == "mitre-attack" and ref.get("external_id"):
            return ref["external_id"]
    return None


def _is_retired(obj: dict) -> bool:
    return bool(obj.get("revoked")) or bool(obj.get("x_mitre_deprecated"))


def load_bundle(path) -> dict:
    """Read a bundle JSON file; raises BundleParseError on malformed input."""
    try:
        with open(path, "rb") as fh:
            bundle = json.load(fh)
    except json.JSONDecodeError as exc:
        raise BundleParseError(f"malformed bundle JSON: {exc}") from exc
    if not isinstance(bundle, dict) or not isinstance(bundle.get("objects"), list):
        raise BundleParseError("bundle must be a JSON object with an 'objects' array")
    return bundle


def parse_bundle(bundle: dict | str | bytes) -> tuple[Taxonomy, list[str]]:
    """Build the label taxonomy from an Enterprise ATT&CK STIX 2.0 bundle.

    Returns (taxonomy, diagnostics). Revoked/deprecated objects are dropped,
    sub-techniques (dotted ids) are folded into their parent, and techniques
    whose kill-chain phases match no tactic are excluded with a diagnostic.
    Deterministic: output depends only on bundle content, not object order.
    """
    if isinstance(bundle, (str, bytes)):
        try:
            bundle = json.loads(bundle)
        except json.JSONDecodeError as exc:
            raise BundleParseError(f"malformed bundle JSON: {exc}") from exc
    if not isinstance(bundle, dict) or not isinstance(bundle.get("objects"), list):
        raise BundleParseError("bundle must be a JSON object with an 'objects' array")

    objects = bundle["objects"]
    diagnostics: list[str] = []

    version = "unknown"
    for obj in objects:
        if obj.get("type") == "x-mitre-collection" and obj.get("x_mitre_version"):
            version = str(obj["x_mitre_version"])

    # First pass: tactics, keyed by kill-chain shortname.
    tactics_by_short: dict[str, TacticDef] = {}
    for obj in objects:
        if obj.get("type") != "x-mitre-tactic" or _is_retired(obj):
            continue
        ext_id = _external_id(obj)
        shortname = obj.get("x_mitre_shortname", "")
        if not ext_id or not TACTIC_ID_RE.match(ext_id):
            diagnostics.append(f"tactic {obj.get('id', '?')} has no usable external id")
            continue
        tactics_by_short[shortname] = TacticDef(
            id=ext_id, name=obj.get("name", ext_id), stix_id=obj["id"], shortname=shortname
        )

    # Second pass: techniques. Sub-techniques contribute membership and a
    # stix-id alias to their parent; parents must exist on their own.
    parents: dict[str, dict] = {}
    subs: list[dict] = []
    for obj in objects:
        if obj.get("type") != "attack-pattern":
            continue
        if _is_retired(obj):
            continue
        ext_id = _external_id(obj)
        if not ext_id or not TECHNIQUE_ID_RE.match(ext_id):
            diagnostics.append(f"attack-pattern {obj.get('id', '?')} has no usable external id")
            continue
        if "." in ext_id:
            subs.append(obj)
        else:
            if ext_id in parents:
                diagnostics.append(f"duplicate technique id {ext_id}; keeping first")
                continue
            parents[ext_id] = obj

    def phase_tactics(obj: dict) -> tuple[frozenset[str], list[str]]:
        found: set[str] = set()
        notes: list[str] = []
        for phase in obj.get("kill_chain_phases", []) or []:
            name = phase.get("phase_name", "")
            tac = tactics_by_short.get(name)
            if tac is None:
                notes.append(f"technique {_external_id(obj)}: unmatched kill-chain phase '{name}'")
            else:
                found.add(tac.id)
        return frozenset(found), notes

    membership: dict[str, set[str]] = {}
    stix_index: dict[str, str] = {t.stix_id: t.id for t in tactics_by_short.values()}
    names: dict[str, tuple[str, str]] = {}   # technique id -> (name, stix id)

    for ext_id in sorted(parents):
        obj = parents[ext_id]
        tacs, notes = phase_tactics(obj)
        diagnostics.extend(notes)
        if not tacs:
            diagnostics.append(f"technique {ext_id} resolves to no tactic; excluded")
            continue
        membership[ext_id] = set(tacs)
        names[ext_id] = (obj.get("name", ext_id), obj["id"])
        stix_index[obj["id"]] = ext_id

    for obj in sorted(subs, key=lambda o: _external_id(o) or ""):
        ext_id = _external_id(obj)
        parent_id = ext_id.split(".")[0]
        if parent_id not in membership:
            diagnostics.append(f"sub-technique {ext_id} has no parent technique in bundle; skipped")
            continue
        tacs, notes = phase_tactics(obj)
        diagnostics.extend(notes)
        membership[parent_id] |= tacs
        stix_index[obj["id"]] = parent_id

    tactics = tuple(sorted(tactics_by_short.values(), key=lambda t: t.id))
    techniques = tuple(
        TechniqueDef(
            id=tid,
            name=names[tid][0],
            stix_id=names[tid][1],
            tactic_ids=frozenset(membership[tid]),
        )
        for tid in sorted(membership)
    )
    taxonomy = Taxonomy(
        tactics=tactics,
        techniques=techniques,
        membership={t.id: t.tactic_ids for t in techniques},
        stix_index=stix_index,
        version=version,
    )
    return taxonomy, diagnostics


def build_association_stats(bundle: dict, taxonomy: Taxonomy) -> tuple[AssociationStats, list[str]]:
    """Count technique usage per group/malware/tool and pairwise co-occurrence.

    Each user object contributes +1 support for every distinct technique it
    uses and +1 to the joint count of every unordered pair it uses. Groups,
    malware and tools are weighted equally.
    """
    if not isinstance(bundle, dict) or not isinstance(bundle.get("objects"), list):
        raise BundleParseError("bundle must be a JSON object with an 'objects' array")

    objects = bundle["objects"]
    diagnostics: list[str] = []

    users: set[str] = set()
    for obj in objects:
        if obj.get("type") in USER_OBJECT_TYPES and not _is_retired(obj):
            users.add(obj["id"])

    used_by: dict[str, set[str]] = {u: set() for u in users}
    for obj in objects:
        if obj.get("type") != "relationship" or obj.get("relationship_type") != "uses":
            continue
        if _is_retired(obj):
            continue
        src = obj.get("source_ref", "")
        dst = obj.get("target_ref", "")
        if src not in users or not dst.startswith("attack-pattern--"):
            continue
        tid = taxonomy.stix_index.get(dst)
        if tid is None or tid not in taxonomy.membership:
            diagnostics.append(f"uses relationship to unknown technique {dst}; skipped")
            continue
        used_by[src].add(tid)

    support: dict[str, int] = {}
    joint: dict[tuple[str, str], int] = {}
    total_users = 0
    for user in sorted(used_by):
        techniques = used_by[user]
        if not techniques:
            continue
        total_users += 1
        for tid in techniques:
            support[tid] = support.get(tid, 0) + 1
        for i, j in combinations(sorted(techniques), 2):
            key = _pair(i, j)
            joint[key] = joint.get(key, 0) + 1

    stats = AssociationStats(
        support=support,
        joint=joint,
        total_users=total_users,
        labels=frozenset(taxonomy.membership),
    )
    return stats, diagnostics


def conditional_probability(stats: AssociationStats, i: str, j: str) -> float:
    """P(i | j) estimated from co-usage counts; 0 when j was never seen."""
    sj = stats.support_of(j)
    if sj == 0:
        return 0.0
    return stats.joint_of(i, j) / sj
