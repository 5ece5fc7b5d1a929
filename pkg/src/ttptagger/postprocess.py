"""Hierarchy-aware post-processing of prediction sets.

Every strategy is a pure function: it takes a PredictionSet plus the
artifacts it needs (taxonomy membership, boost factors, association rules,
a technique branching, co-usage statistics) and returns a new PredictionSet.
Strategies based on the tactic/technique relationship edit decided sets or
confidences; strategies based on technique co-usage only ever add labels.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

from .attack_kb import AssociationStats, Taxonomy, conditional_probability
from .branching import Edge, maximum_branching
from .classifier import Prediction, PredictionSet, TrainConfig

logger = logging.getLogger(__name__)

STRATEGY_NONE = "none"
HANGING_NODE = "hanging-node"
CONFIDENCE_PROPAGATION = "confidence-propagation"
RARE_RULES = "rare-rules"
STEINER = "steiner"
KNAPSACK = "knapsack"
DIRECT_MAPPING = "direct-mapping"
TACTICS_AS_FEATURES = "tactics-as-features"

ALL_STRATEGIES = (
    STRATEGY_NONE,
    HANGING_NODE,
    CONFIDENCE_PROPAGATION,
    RARE_RULES,
    STEINER,
    KNAPSACK,
    DIRECT_MAPPING,
    TACTICS_AS_FEATURES,
)

DEFAULT_CANDIDATES = (HANGING_NODE, CONFIDENCE_PROPAGATION)


class StrategyConfigError(ValueError):
    """Post-processing configuration violates its invariants."""


@dataclass(frozen=True)
class HangingNodeConfig:
    th: float = 0.5
    a: float = 0.55
    b: float = 0.05
    c: float = 0.95
    d: float = 0.30

    def validate(self) -> "HangingNodeConfig":
        if not (self.b < self.d < self.th < self.a < self.c):
            raise StrategyConfigError(
                f"thresholds must satisfy b < d < th < a < c, got "
                f"b={self.b} d={self.d} th={self.th} a={self.a} c={self.c}"
            )
        return self


@dataclass(frozen=True)
class BoostMatrix:
    """technique-id, tactic-id -> additive boost factor, member pairs only."""

    entries: dict[tuple[str, str], float]

    def get(self, technique: str, tactic: str) -> float:
        return self.entries.get((technique, tactic), 0.0)


@dataclass(frozen=True)
class RuleSet:
    pairs: tuple[tuple[str, str], ...]
    threshold: float


@dataclass(frozen=True)
class Branching:
    edges: tuple[Edge, ...]

    def children(self) -> dict[str, list[Edge]]:
        out: dict[str, list[Edge]] = {}
        for e in self.edges:
            out.setdefault(e.src, []).append(e)
        return out


@dataclass(frozen=True)
class SteinerConfig:
    k: int = 15

    def validate(self) -> "SteinerConfig":
        if self.k < 1:
            raise StrategyConfigError("K must be >= 1")
        return self


# --- tactic/technique relationship strategies ---------------------------------

def direct_mapping(pred: PredictionSet, taxonomy: Taxonomy) -> PredictionSet:
    """Decide tactics purely from the decided techniques' memberships.

    The output decided tactic set is exactly the union of member tactics of
    the decided techniques; techniques and all confidences are untouched.
    """
    implied: set[str] = set()
    for te in pred.techniques:
        if te.decided:
            implied |= taxonomy.membership.get(te.label_id, frozenset())
    tactics = tuple(replace(ta, decided=ta.label_id in implied) for ta in pred.tactics)
    return replace(pred, tactics=tactics)


def tactics_as_features(tactic_confidences: list[float], x: dict[int, float], dim: int) -> dict[int, float]:
    """Append tactic confidences after the text features of a single vector.

    `dim` is the text-feature dimension; the caller must pass one confidence
    per trainable tactic in the fixed tactic order.
    """
    if dim < 0 or any(k >= dim for k in x):
        raise ValueError("text features exceed the declared dimension")
    out = dict(x)
    for offset, conf in enumerate(tactic_confidences):
        out[dim + offset] = float(conf)
    return out


def confidence_propagation(pred: PredictionSet, boosts: BoostMatrix, taxonomy: Taxonomy) -> PredictionSet:
    """Add boosted member-tactic confidence onto each technique confidence.

    conf'(te) = clamp(conf(te) + sum boost(te, ta) * conf(ta), 0, 1) and the
    decision is re-taken at 0.5. Tactic predictions are unchanged.
    """
    tactic_conf = {ta.label_id: ta.confidence for ta in pred.tactics}
    techniques = []
    for te in pred.techniques:
        bump = sum(
            boosts.get(te.label_id, tac) * tactic_conf.get(tac, 0.0)
            for tac in taxonomy.membership.get(te.label_id, frozenset())
        )
        conf = min(max(te.confidence + bump, 0.0), 1.0)
        techniques.append(replace(te, confidence=conf, decided=conf >= 0.5))
    return replace(pred, techniques=tuple(techniques))


def hanging_node(pred: PredictionSet, cfg: HangingNodeConfig, taxonomy: Taxonomy) -> PredictionSet:
    """Repair near-threshold tactic/technique disagreements.

    For each member pair, judged on the original confidences: a technique
    predicted well above threshold pulls an almost-predicted tactic in; a
    barely-predicted technique whose tactic scored low is dropped. Both rules
    may fire on the same pair. Confidences are never modified.
    """
    cfg.validate()
    tactic_conf = {ta.label_id: ta.confidence for ta in pred.tactics}
    add_tactics: set[str] = set()
    drop_techniques: set[str] = set()
    for te in pred.techniques:
        for tac in taxonomy.membership.get(te.label_id, frozenset()):
            if tac not in tactic_conf:
                continue
            ta_conf = tactic_conf[tac]
            if te.confidence > cfg.a and cfg.b < ta_conf < cfg.th:
                add_tactics.add(tac)
            if cfg.th < te.confidence < cfg.c and ta_conf < cfg.d:
                drop_techniques.add(te.label_id)
    tactics = tuple(
        replace(ta, decided=True) if ta.label_id in add_tactics else ta for ta in pred.tactics
    )
    techniques = tuple(
        replace(te, decided=False) if te.label_id in drop_techniques else te
        for te in pred.techniques
    )
    return replace(pred, tactics=tactics, techniques=techniques)


# --- technique co-usage strategies ---------------------------------------------

def kulczynski(stats: AssociationStats, i: str, j: str) -> float:
    """Symmetric mean of the two conditional supports; 0 on zero support."""
    if i == j:
        return 1.0 if stats.support_of(i) > 0 else 0.0
    si, sj = stats.support_of(i), stats.support_of(j)
    if si == 0 or sj == 0:
        return 0.0
    joint = stats.joint_of(i, j)
    return 0.5 * (joint / si + joint / sj)


def build_rare_rules(stats: AssociationStats, variance_cutoff: float = 0.05) -> RuleSet:
    """Admit technique pairs whose Kulczynski measure clears a data-driven bar.

    The nonzero measures sorted ascending form a curve. Low variance: the bar
    is the curve minimum plus the median of consecutive differences. High
    variance: the bar is the mean of the values strictly below the curve mean.
    """
    measured: list[tuple[float, tuple[str, str]]] = []
    for (i, j), joint in stats.joint.items():
        if joint <= 0:
            continue
        m = kulczynski(stats, i, j)
        if m > 0:
            measured.append((m, (i, j)))
    if len(measured) < 2:
        return RuleSet(pairs=(), threshold=math.inf)

    curve = sorted(m for m, _ in measured)
    mean = sum(curve) / len(curve)
    variance = sum((v - mean) ** 2 for v in curve) / len(curve)
    if variance < variance_cutoff:
        diffs = sorted(b - a for a, b in zip(curve, curve[1:]))
        mid = len(diffs) // 2
        median = diffs[mid] if len(diffs) % 2 else 0.5 * (diffs[mid - 1] + diffs[mid])
        threshold = curve[0] + median
    else:
        below = [v for v in curve if v < mean]
        threshold = sum(below) / len(below)
    pairs = tuple(sorted(p for m, p in measured if m >= threshold))
    return RuleSet(pairs=pairs, threshold=threshold)


def apply_rules(pred: PredictionSet, rules: RuleSet) -> PredictionSet:
    """Complete rule pairs: when exactly one side is decided the other joins.

    Judged against the input decided set in a single pass (no cascading);
    never removes a label. The new member inherits the larger of the two
    confidences.
    """
    conf = {te.label_id: te.confidence for te in pred.techniques}
    decided = {te.label_id for te in pred.techniques if te.decided}
    promote: dict[str, float] = {}
    for i, j in rules.pairs:
        if i not in conf or j not in conf:
            continue
        if (i in decided) == (j in decided):
            continue
        missing, present = (i, j) if j in decided else (j, i)
        cand = max(conf[missing], conf[present])
        promote[missing] = max(promote.get(missing, 0.0), cand)
    techniques = tuple(
        replace(te, decided=True, confidence=promote[te.label_id])
        if te.label_id in promote
        else te
        for te in pred.techniques
    )
    return replace(pred, techniques=techniques)


def build_branching(stats: AssociationStats) -> Branching:
    """Reduce the co-usage graph to a maximum-weight directed forest.

    Every pair used together yields one candidate edge pointing from the
    technique with the smaller conditional toward the other (the edge weight
    is the conditional probability of the target given the source); ties
    point away from the lexicographically smaller id. Edmonds' algorithm
    keeps the heaviest acyclic in-degree<=1 subset.
    """
    candidates: list[Edge] = []
    for i, j in sorted(stats.joint):
        if stats.joint[(i, j)] <= 0:
            continue
        p_i_given_j = conditional_probability(stats, i, j)
        p_j_given_i = conditional_probability(stats, j, i)
        if p_i_given_j <= p_j_given_i:
            src, dst, weight = i, j, p_j_given_i
        else:
            src, dst, weight = j, i, p_i_given_j
        candidates.append(Edge(src=src, dst=dst, weight=weight))
    return Branching(edges=tuple(maximum_branching(candidates)))


def steiner_extend(pred: PredictionSet, branching: Branching, cfg: SteinerConfig | None = None) -> PredictionSet:
    """Pull in forest descendants of the decided techniques.

    Undecided descendants are ranked by the weight of the edge entering them
    and the top K join the decided set (confidence raised to the entering
    weight when that is higher). Never removes labels.
    """
    cfg = (cfg or SteinerConfig()).validate()
    present = {te.label_id for te in pred.techniques}
    decided = {te.label_id for te in pred.techniques if te.decided}
    if not decided:
        return pred

    children = branching.children()
    entering: dict[str, float] = {}
    stack = sorted(decided)
    seen = set(stack)
    while stack:
        node = stack.pop()
        for edge in children.get(node, []):
            if edge.dst in seen:
                continue
            seen.add(edge.dst)
            entering[edge.dst] = edge.weight
            stack.append(edge.dst)

    candidates = sorted(
        ((lbl, w) for lbl, w in entering.items() if lbl in present and lbl not in decided),
        key=lambda kv: (-kv[1], kv[0]),
    )[: cfg.k]
    chosen = dict(candidates)
    techniques = tuple(
        replace(te, decided=True, confidence=max(te.confidence, chosen[te.label_id]))
        if te.label_id in chosen
        else te
        for te in pred.techniques
    )
    return replace(pred, techniques=techniques)


def knapsack_candidates(
    pred: PredictionSet, stats: AssociationStats, penalty: float = 0.1
) -> list[tuple[str, float]]:
    """Undecided techniques co-used with a decided one, with log-likelihood gain."""
    decided = [te.label_id for te in pred.techniques if te.decided]
    known = stats.labels
    out = []
    for te in pred.techniques:
        if te.decided or te.label_id not in known:
            continue
        linked = [j for j in decided if j in known and stats.joint_of(te.label_id, j) > 0]
        if not linked:
            continue
        gain = sum(math.log1p(conditional_probability(stats, te.label_id, j)) for j in linked)
        out.append((te.label_id, gain - penalty))
    return sorted(out)


def solve_knapsack(values: list[float], weights: list[int], capacity: int) -> list[int]:
    """Exact 0-1 knapsack by dynamic programming; returns chosen item indices."""
    if capacity < 0:
        raise ValueError("capacity must be >= 0")
    n = len(values)
    table = [[0.0] * (capacity + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        v, wt = values[i - 1], weights[i - 1]
        for w in range(capacity + 1):
            keep_out = table[i - 1][w]
            if wt <= w:
                table[i][w] = max(keep_out, table[i - 1][w - wt] + v)
            else:
                table[i][w] = keep_out
    chosen = []
    w = capacity
    for i in range(n, 0, -1):
        if table[i][w] != table[i - 1][w]:
            chosen.append(i - 1)
            w -= weights[i - 1]
    return sorted(chosen)


def knapsack_extend(
    pred: PredictionSet,
    stats: AssociationStats,
    capacity: int = 3,
    penalty: float = 0.1,
) -> PredictionSet:
    """Add the bounded set of extra techniques that maximizes the summed
    log-likelihood gain, solved as an exact 0-1 knapsack (unit weights)."""
    if not any(te.decided for te in pred.techniques) or capacity == 0:
        return pred
    cands = knapsack_candidates(pred, stats, penalty)
    if not cands:
        return pred
    chosen_idx = solve_knapsack([v for _, v in cands], [1] * len(cands), capacity)
    chosen = {cands[k][0] for k in chosen_idx}
    techniques = tuple(
        replace(te, decided=True) if te.label_id in chosen else te for te in pred.techniques
    )
    return replace(pred, techniques=techniques)


# --- artifacts, dispatch, auto-selection ---------------------------------------

def build_boost_matrix(entries, taxonomy: Taxonomy) -> BoostMatrix:
    """Boost(te, ta) = P(te | ta) estimated from training-store co-labeling."""
    tactic_docs: dict[str, int] = {}
    pair_docs: dict[tuple[str, str], int] = {}
    for entry in entries:
        for tac in entry.tactic_labels:
            tactic_docs[tac] = tactic_docs.get(tac, 0) + 1
        for te in entry.technique_labels:
            for tac in taxonomy.membership.get(te, frozenset()):
                if tac in entry.tactic_labels:
                    pair_docs[(te, tac)] = pair_docs.get((te, tac), 0) + 1
    entries_out = {
        (te, tac): count / tactic_docs[tac]
        for (te, tac), count in pair_docs.items()
        if tactic_docs.get(tac, 0) > 0
    }
    return BoostMatrix(entries=entries_out)


def strategy_config(strategy: str, config: TrainConfig) -> dict:
    """The per-strategy parameters recorded inside a model bundle."""
    if strategy == HANGING_NODE:
        return {"th": config.hn_th, "a": config.hn_a, "b": config.hn_b,
                "c": config.hn_c, "d": config.hn_d}
    if strategy == STEINER:
        return {"k": config.steiner_k}
    if strategy == KNAPSACK:
        return {"capacity": config.knapsack_capacity, "penalty": config.knapsack_penalty}
    if strategy == RARE_RULES:
        return {"variance_cutoff": config.rare_rules_variance_cutoff}
    if strategy not in ALL_STRATEGIES:
        raise StrategyConfigError(f"unknown strategy {strategy!r}")
    return {}


@dataclass
class PostprocessContext:
    """Everything apply_strategy may need, regardless of the strategy chosen."""

    taxonomy: Taxonomy
    hanging: HangingNodeConfig
    boosts: BoostMatrix
    rules: RuleSet | None = None
    branching: Branching | None = None
    stats: AssociationStats | None = None
    steiner: SteinerConfig = SteinerConfig()
    knapsack_capacity: int = 3
    knapsack_penalty: float = 0.1


def apply_strategy(pred: PredictionSet, strategy: str, ctx: PostprocessContext) -> PredictionSet:
    if strategy in (STRATEGY_NONE, TACTICS_AS_FEATURES):
        # tactics-as-features changes the technique models, not the outputs
        return pred
    if strategy == DIRECT_MAPPING:
        return direct_mapping(pred, ctx.taxonomy)
    if strategy == HANGING_NODE:
        return hanging_node(pred, ctx.hanging, ctx.taxonomy)
    if strategy == CONFIDENCE_PROPAGATION:
        return confidence_propagation(pred, ctx.boosts, ctx.taxonomy)
    if strategy == RARE_RULES:
        if ctx.rules is None:
            raise StrategyConfigError("rare-rules needs association statistics")
        return apply_rules(pred, ctx.rules)
    if strategy == STEINER:
        if ctx.branching is None:
            raise StrategyConfigError("steiner needs association statistics")
        return steiner_extend(pred, ctx.branching, ctx.steiner)
    if strategy == KNAPSACK:
        if ctx.stats is None:
            raise StrategyConfigError("knapsack needs association statistics")
        return knapsack_extend(pred, ctx.stats, ctx.knapsack_capacity, ctx.knapsack_penalty)
    raise StrategyConfigError(f"unknown strategy {strategy!r}")


def build_artifacts(entries, taxonomy: Taxonomy, config: TrainConfig, stats: AssociationStats | None) -> dict:
    """Serializable post-processing artifacts embedded in the model bundle."""
    boosts = build_boost_matrix(entries, taxonomy)
    artifacts: dict = {
        "boosts": {f"{te}|{ta}": round(v, 12) for (te, ta), v in sorted(boosts.entries.items())},
    }
    if stats is not None:
        rules = build_rare_rules(stats, config.rare_rules_variance_cutoff)
        branching = build_branching(stats)
        artifacts["rules"] = {
            "pairs": [list(p) for p in rules.pairs],
            "threshold": None if math.isinf(rules.threshold) else rules.threshold,
        }
        artifacts["branching"] = [[e.src, e.dst, e.weight] for e in branching.edges]
        artifacts["stats"] = {
            "support": dict(sorted(stats.support.items())),
            "joint": {f"{i}|{j}": c for (i, j), c in sorted(stats.joint.items())},
            "total_users": stats.total_users,
            "labels": sorted(stats.labels),
        }
    return artifacts


def context_from_artifacts(taxonomy: Taxonomy, artifacts: dict, config: TrainConfig) -> PostprocessContext:
    """Rebuild a PostprocessContext from the bundle's serialized artifacts."""
    boosts = BoostMatrix(
        entries={tuple(k.split("|", 1)): float(v) for k, v in artifacts.get("boosts", {}).items()}
    )
    rules = None
    if "rules" in artifacts:
        raw = artifacts["rules"]
        rules = RuleSet(
            pairs=tuple(tuple(p) for p in raw.get("pairs", [])),
            threshold=math.inf if raw.get("threshold") is None else float(raw["threshold"]),
        )
    branching = None
    if "branching" in artifacts:
        branching = Branching(
            edges=tuple(Edge(src=s, dst=d, weight=float(w)) for s, d, w in artifacts["branching"])
        )
    stats = None
    if "stats" in artifacts:
        raw = artifacts["stats"]
        stats = AssociationStats(
            support={k: int(v) for k, v in raw.get("support", {}).items()},
            joint={tuple(k.split("|", 1)): int(v) for k, v in raw.get("joint", {}).items()},
            total_users=int(raw.get("total_users", 0)),
            labels=frozenset(raw.get("labels", [])),
        )
    return PostprocessContext(
        taxonomy=taxonomy,
        hanging=HangingNodeConfig(
            th=config.hn_th, a=config.hn_a, b=config.hn_b, c=config.hn_c, d=config.hn_d
        ),
        boosts=boosts,
        rules=rules,
        branching=branching,
        stats=stats,
        steiner=SteinerConfig(k=config.steiner_k),
        knapsack_capacity=config.knapsack_capacity,
        knapsack_penalty=config.knapsack_penalty,
    )


def auto_select(
    store,
    taxonomy: Taxonomy,
    config: TrainConfig,
    stats: AssociationStats | None = None,
    candidates: tuple[str, ...] = DEFAULT_CANDIDATES,
) -> tuple[str, dict, dict | None]:
    """Pick the candidate strategy with the best cross-validated technique
    macro F0.5; exact ties and too-small stores fall back to the first
    candidate (the near-threshold repair strategy).

    Returns (strategy id, strategy config, per-strategy CV results or None).
    """
    from . import evaluate   # deferred: evaluate drives the training pipeline

    fallback = candidates[0]
    if len(store) < config.folds:
        logger.warning(
            "store too small for %d-fold evaluation; defaulting to %s", config.folds, fallback
        )
        return fallback, strategy_config(fallback, config), None

    results = evaluate.cross_validate_multi(store, taxonomy, config, list(candidates), stats=stats)
    best = fallback
    best_score = -1.0
    for cand in candidates:
        score = results[cand].techniques.macro_f05
        if score > best_score:
            best, best_score = cand, score
    logger.info(
        "auto-selected post-processing %s (technique macro F0.5 %.4f)", best, best_score
    )
    return best, strategy_config(best, config), results
