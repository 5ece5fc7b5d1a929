"""Maximum-weight branching (optimum directed forest) via Edmonds' algorithm.

A branching is an edge set where every node has in-degree at most one and no
directed cycle exists. The solver greedily keeps the best positive incoming
edge per node, contracts any cycle that forms, adjusts the weights of edges
entering the cycle by the cost of the cycle edge they would displace, and
recurses; the expansion step drops exactly one edge per cycle.
"""

from __future__ import annotations

from dataclasses import dataclass

# prefix for contracted-cycle node names; must not collide with real node ids
_SUPER = "#cycle#"


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    weight: float


def maximum_branching(edges: list[Edge]) -> list[Edge]:
    """Return a maximum-weight branching over the given edges.

    Only edges with positive weight can improve a branching, so non-positive
    edges are ignored. Deterministic: candidates are processed in sorted
    (dst, src) order and ties on weight keep the first candidate seen.
    """
    order = sorted(range(len(edges)), key=lambda k: (edges[k].dst, edges[k].src))
    arcs = [(edges[k].src, edges[k].dst, float(edges[k].weight)) for k in order]
    chosen_local = _solve(arcs)
    return [edges[order[k]] for k in sorted(chosen_local)]


def _solve(arcs: list[tuple[str, str, float]]) -> set[int]:
    """Return indices into `arcs` forming a maximum-weight branching."""
    best_in: dict[str, int] = {}
    for k, (src, dst, w) in enumerate(arcs):
        if src == dst or w <= 0.0:
            continue
        cur = best_in.get(dst)
        if cur is None or w > arcs[cur][2]:
            best_in[dst] = k

    cycle = _find_cycle({dst: arcs[k][0] for dst, k in best_in.items()})
    if cycle is None:
        return set(best_in.values())

    cycle_set = set(cycle)
    cycle_arc = {v: best_in[v] for v in cycle}          # cycle node -> arc entering it
    min_idx = min(cycle_arc.values(), key=lambda k: arcs[k][2])
    min_w = arcs[min_idx][2]
    super_node = _SUPER + min(cycle_set)

    # Contract the cycle. Every reduced arc remembers which arc of this level
    # it stands for, and (for arcs entering the cycle) which cycle arc it
    # would displace if chosen.
    reduced: list[tuple[str, str, float]] = []
    mapping: list[tuple[int, int | None]] = []
    for k, (src, dst, w) in enumerate(arcs):
        inside_src = src in cycle_set
        inside_dst = dst in cycle_set
        if inside_src and inside_dst:
            continue
        if inside_dst:
            displaced = cycle_arc[dst]
            reduced.append((src, super_node, w - arcs[displaced][2] + min_w))
            mapping.append((k, displaced))
        elif inside_src:
            reduced.append((super_node, dst, w))
            mapping.append((k, None))
        else:
            reduced.append((src, dst, w))
            mapping.append((k, None))

    chosen: set[int] = set()
    displaced_by_entry: int | None = None
    for rk in _solve(reduced):
        orig, displaced = mapping[rk]
        chosen.add(orig)
        if displaced is not None:
            displaced_by_entry = displaced

    # exactly one cycle arc is dropped: the displaced one, or the minimum
    drop = displaced_by_entry if displaced_by_entry is not None else min_idx
    for v in cycle:
        if cycle_arc[v] != drop:
            chosen.add(cycle_arc[v])
    return chosen


def _find_cycle(parent: dict[str, str]) -> list[str] | None:
    done: set[str] = set()
    for start in sorted(parent):
        if start in done:
            continue
        seen: dict[str, int] = {}
        node, steps = start, 0
        path: list[str] = []
        while node in parent and node not in done:
            if node in seen:
                return path[seen[node]:]
            seen[node] = steps
            path.append(node)
            node = parent[node]
            steps += 1
        done.update(path)
    return None
