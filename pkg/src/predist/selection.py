"""Super-link selection: greedy planners, clustering, and a brute-force oracle.

All planners return a ``Plan`` whose super-link paths are pairwise
node-disjoint, whose total cost respects the budget (unless overshoot is
explicitly allowed), and whose objective value is recomputed from scratch at
construction time.
"""
from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass

from .errors import TopologyFormatError
from .latency import (
    Assignment,
    LatencyModel,
    PathSpec,
    SuperLink,
    model_for,
    reconstruct_path,
)
from .topology import PhysicalParams, RequestSet, Topology

log = logging.getLogger(__name__)

Candidate = SuperLink

_MAX_BRUTE_FORCE = 20
_KMEANS_PATIENCE = 5
_KMEANS_MAX_ITERS = 100


@dataclass(frozen=True)
class Plan:
    """A selected super-link set with its request assignment and bookkeeping."""

    sls: tuple[SuperLink, ...]
    assignment: Assignment
    objective_s: float
    total_cost: float
    notes: tuple[str, ...] = ()


def make_plan(
    model: LatencyModel,
    sls,
    requests: RequestSet,
    notes: tuple[str, ...] = (),
) -> Plan:
    sls = tuple(sls)
    _check_disjoint(sls, "plan super-links")
    objective, assignment = model.aggregate_latency(requests, sls)
    return Plan(sls, assignment, objective, sum(sl.cost for sl in sls), notes)


def baseline_plan(topo: Topology, requests: RequestSet, params: PhysicalParams) -> Plan:
    """Plan with no super-links: every request is served by its direct tree."""
    return make_plan(model_for(topo, params), (), requests)


def _check_disjoint(sls, what: str) -> None:
    seen: set[int] = set()
    for sl in sls:
        nodes = sl.node_set()
        if not seen.isdisjoint(nodes):
            raise ValueError(f"{what} must be pairwise node-disjoint")
        seen.update(nodes)


# ---------------------------------------------------------------------------
# Candidate enumeration
# ---------------------------------------------------------------------------

def enumerate_candidates(
    topo: Topology, params: PhysicalParams, tau_s: float | None = None
) -> tuple[Candidate, ...]:
    """One candidate per unordered node pair: its best path and optimal tree.

    Candidates whose stock cannot be rebuilt within a slot
    (stock_target * ep_latency >= tau) are dropped.
    """
    model = model_for(topo, params)
    out = []
    for u in range(topo.n):
        for v in range(u + 1, topo.n):
            path = model.best_path(u, v)
            if path is None:
                continue
            sl = model.superlink(path)
            if sl.is_valid(params, tau_s):
                out.append(sl)
    return tuple(out)


# ---------------------------------------------------------------------------
# Greedy over given disjoint candidates
# ---------------------------------------------------------------------------

def greedy_disjoint(
    candidates,
    requests: RequestSet,
    budget: float,
    params: PhysicalParams,
    topo: Topology,
    allow_overshoot: bool = False,
) -> Plan:
    """Ratio greedy over pairwise-disjoint candidates.

    Iteratively adds the affordable candidate with the highest latency
    reduction per unit cost, stopping when nothing affordable still helps.
    With ``allow_overshoot`` the loop instead only checks the budget before
    each pick, so the final selection may exceed it once.
    """
    model = model_for(topo, params)
    candidates = tuple(candidates)
    _check_disjoint(candidates, "candidates")
    pairs = [(r.s, r.d) for r in requests.pairs]
    weights = [r.weight for r in requests.pairs]
    cur = [model.direct_latency(s, d) for s, d in pairs]

    remaining = sorted(candidates, key=lambda c: (c.a, c.b, c.path.n_links))
    chosen: list[SuperLink] = []
    cost = 0.0
    while remaining:
        if allow_overshoot and cost >= budget:
            break
        best_key = None
        best_c = None
        for c in remaining:
            if not allow_overshoot and cost + c.cost > budget:
                continue
            benefit = 0.0
            for p, (s, d) in enumerate(pairs):
                lat = model.sl_use(s, d, c).latency_s
                if lat < cur[p]:
                    benefit += weights[p] * (cur[p] - lat)
            if benefit <= 0.0:
                continue
            key = (-benefit / c.cost, c.a, c.b, c.path.n_links)
            if best_key is None or key < best_key:
                best_key, best_c = key, c
        if best_c is None:
            break
        chosen.append(best_c)
        cost += best_c.cost
        remaining.remove(best_c)
        for p, (s, d) in enumerate(pairs):
            lat = model.sl_use(s, d, best_c).latency_s
            if lat < cur[p]:
                cur[p] = lat
    return make_plan(model, chosen, requests)


# ---------------------------------------------------------------------------
# Generalized greedy
# ---------------------------------------------------------------------------

def _rank_key(benefit: float, delta: float, u: int, v: int, n_links: int, branch: int):
    """Option ordering: cost-reducing improvements first (by benefit), then
    by benefit-per-cost ratio; deterministic lexicographic tie-breaks."""
    if delta <= 0.0:
        return (0, -benefit, u, v, n_links, branch)
    return (1, -(benefit / delta), u, v, n_links, branch)


class _ObjectiveState:
    """Per-pair latency bookkeeping for fast benefit evaluation."""

    def __init__(self, model: LatencyModel, requests: RequestSet):
        self.model = model
        self.pairs = [(r.s, r.d) for r in requests.pairs]
        self.weights = [r.weight for r in requests.pairs]
        self.direct = [model.direct_latency(s, d) for s, d in self.pairs]
        self.sls: list[SuperLink] = []
        self.table: list[list[float]] = [[] for _ in self.pairs]
        self.cur = list(self.direct)
        self.cost = 0.0
        self.objective = sum(w * c for w, c in zip(self.weights, self.cur))

    def pair_latency(self, p: int, sl: SuperLink) -> float:
        s, d = self.pairs[p]
        return self.model.sl_use(s, d, sl).latency_s

    def append_eval(self, sl: SuperLink) -> float:
        """Benefit of adding ``sl`` on top of the current set."""
        benefit = 0.0
        for p in range(len(self.pairs)):
            lat = self.pair_latency(p, sl)
            if lat < self.cur[p]:
                benefit += self.weights[p] * (self.cur[p] - lat)
        return benefit

    def update_eval(self, keep: list[int], sl: SuperLink) -> tuple[float, float]:
        """(benefit, new_cost) of replacing the set with kept SLs plus ``sl``."""
        new_obj = 0.0
        for p in range(len(self.pairs)):
            best = self.direct[p]
            row = self.table[p]
            for i in keep:
                if row[i] < best:
                    best = row[i]
            lat = self.pair_latency(p, sl)
            if lat < best:
                best = lat
            new_obj += self.weights[p] * best
        new_cost = sum(self.sls[i].cost for i in keep) + sl.cost
        return self.objective - new_obj, new_cost

    def set_sls(self, sls: list[SuperLink]) -> None:
        self.sls = list(sls)
        self.table = [
            [self.pair_latency(p, sl) for sl in self.sls]
            for p in range(len(self.pairs))
        ]
        self.cur = [
            min([self.direct[p]] + self.table[p]) for p in range(len(self.pairs))
        ]
        self.cost = sum(sl.cost for sl in self.sls)
        self.objective = sum(w * c for w, c in zip(self.weights, self.cur))


def generalized_greedy(
    topo: Topology,
    requests: RequestSet,
    budget: float,
    params: PhysicalParams,
    shortest_only: bool = False,
    allow_delete: bool = True,
    allow_overshoot: bool = False,
) -> Plan:
    """Greedy super-link selection over all node pairs with two move types.

    Per iteration and per node pair (u, v) not already selected:

    * update: take the pair's overall best path, drop already-selected
      super-links whose paths intersect it, and add the pair (only when
      ``allow_delete``); ranked by benefit over cost change.
    * append: add the pair routed through the residual graph that avoids all
      selected paths (with ``shortest_only`` the overall best path is used
      instead and the move is only valid when already disjoint).

    The best-ranked feasible move is applied until no move improves the
    objective or fits the budget. ``shortest_only`` yields the shortest-path
    variant; ``shortest_only`` plus ``allow_delete=False`` yields the plain
    greedy that never reroutes nor deletes.
    """
    model = model_for(topo, params)
    state = _ObjectiveState(model, requests)
    tau = params.tau_s
    n = topo.n

    base_cache: dict[tuple[int, int], SuperLink | None] = {}

    def base_candidate(u: int, v: int) -> SuperLink | None:
        key = (u, v)
        if key not in base_cache:
            path = model.best_path(u, v)
            sl = model.superlink(path) if path is not None else None
            if sl is not None and not sl.is_valid(params, tau):
                sl = None
            base_cache[key] = sl
        return base_cache[key]

    iteration = 0
    while True:
        iteration += 1
        if iteration > 4 * n * n:
            log.warning("greedy iteration cap reached; returning current plan")
            break
        if allow_overshoot and state.cost >= budget:
            break

        selected_pairs = {(sl.a, sl.b) for sl in state.sls}
        blocked = frozenset().union(*[sl.node_set() for sl in state.sls]) if state.sls else frozenset()
        node_sets = [sl.node_set() for sl in state.sls]
        residual_pred: dict[int, dict] = {}

        def residual_path(u: int, v: int) -> PathSpec | None:
            if u in blocked or v in blocked:
                return None
            pred = residual_pred.get(u)
            if pred is None:
                _, _, pred = model.sssp(u, blocked)
                residual_pred[u] = pred
            nodes = reconstruct_path(pred, u, v)
            return PathSpec(nodes) if nodes is not None else None

        best_key = None
        best_set: list[SuperLink] | None = None
        for u in range(n):
            for v in range(u + 1, n):
                if (u, v) in selected_pairs:
                    continue

                if allow_delete:
                    sl_u = base_candidate(u, v)
                    if sl_u is not None:
                        sl_nodes = sl_u.node_set()
                        keep = [
                            i for i, ns in enumerate(node_sets)
                            if ns.isdisjoint(sl_nodes)
                        ]
                        benefit, new_cost = state.update_eval(keep, sl_u)
                        delta = new_cost - state.cost
                        if benefit > 0.0 and (allow_overshoot or new_cost <= budget):
                            key = _rank_key(benefit, delta, u, v, sl_u.path.n_links, 0)
                            if best_key is None or key < best_key:
                                best_key = key
                                best_set = [state.sls[i] for i in keep] + [sl_u]

                if shortest_only:
                    sl_a = base_candidate(u, v)
                    if sl_a is not None and not sl_a.node_set().isdisjoint(blocked):
                        sl_a = None
                else:
                    path_a = residual_path(u, v)
                    sl_a = None
                    if path_a is not None:
                        cand = model.superlink(path_a)
                        if cand.is_valid(params, tau):
                            sl_a = cand
                if sl_a is not None:
                    benefit = state.append_eval(sl_a)
                    new_cost = state.cost + sl_a.cost
                    if benefit > 0.0 and (allow_overshoot or new_cost <= budget):
                        key = _rank_key(benefit, sl_a.cost, u, v, sl_a.path.n_links, 1)
                        if best_key is None or key < best_key:
                            best_key = key
                            best_set = state.sls + [sl_a]

        if best_set is None:
            break
        state.set_sls(best_set)

    return make_plan(model, state.sls, requests)


def naive_select(
    topo: Topology,
    requests: RequestSet,
    budget: float,
    params: PhysicalParams,
    allow_overshoot: bool = False,
) -> Plan:
    """Generalized greedy restricted to sub-paths of each request's best path."""
    model = model_for(topo, params)
    cands: dict[tuple[int, ...], SuperLink] = {}
    for req in requests.pairs:
        path = model.best_path(req.s, req.d)
        if path is None:
            continue
        nodes = path.nodes
        for i in range(len(nodes) - 1):
            for j in range(i + 1, len(nodes)):
                sl = model.superlink(PathSpec(nodes[i : j + 1]))
                if sl.is_valid(params):
                    cands[sl.path.nodes] = sl
    ordered = sorted(cands.values(), key=lambda c: (c.a, c.b, c.path.nodes))
    return _greedy_over_fixed_candidates(
        model, requests, budget, ordered, allow_overshoot
    )


def _greedy_over_fixed_candidates(
    model: LatencyModel,
    requests: RequestSet,
    budget: float,
    candidates: list[SuperLink],
    allow_overshoot: bool,
) -> Plan:
    """Greedy with deletions where every candidate carries a fixed path."""
    state = _ObjectiveState(model, requests)
    while True:
        if allow_overshoot and state.cost >= budget:
            break
        taken = {sl.path.nodes for sl in state.sls}
        node_sets = [sl.node_set() for sl in state.sls]
        best_key = None
        best_set: list[SuperLink] | None = None
        for c in candidates:
            if c.path.nodes in taken:
                continue
            c_nodes = c.node_set()
            keep = [i for i, ns in enumerate(node_sets) if ns.isdisjoint(c_nodes)]
            benefit, new_cost = state.update_eval(keep, c)
            delta = new_cost - state.cost
            if benefit <= 0.0 or not (allow_overshoot or new_cost <= budget):
                continue
            key = _rank_key(benefit, delta, c.a, c.b, c.path.n_links, 0)
            if best_key is None or key < best_key:
                best_key = key
                best_set = [state.sls[i] for i in keep] + [c]
        if best_set is None:
            break
        state.set_sls(best_set)
    return make_plan(model, state.sls, requests)


# ---------------------------------------------------------------------------
# Clustering
# ---------------------------------------------------------------------------

def clustering_select(
    topo: Topology,
    requests: RequestSet,
    budget: float,
    params: PhysicalParams,
    seed: int = 0,
) -> Plan:
    """Try k-means plans for every cluster count and keep the best objective."""
    best: Plan | None = None
    for k in range(1, len(requests) + 1):
        plan = kmeans_plan(topo, requests, k, budget, params, seed + k)
        if best is None or plan.objective_s < best.objective_s:
            best = plan
    assert best is not None
    return best


def kmeans_plan(
    topo: Topology,
    requests: RequestSet,
    k: int,
    budget: float,
    params: PhysicalParams,
    seed: int,
) -> Plan:
    """Cluster request pairs around k super-link centroids.

    Alternates (a) assigning each pair to the centroid serving it fastest and
    (b) exhaustively rescanning all candidates for the centroid minimizing
    each cluster's weighted latency, keeping centroids node-disjoint. Stops
    once the best-seen centroid set has not improved for five iterations,
    then trims super-link paths one endpoint link at a time (cheapest
    objective loss per unit cost saved) until the budget holds.
    """
    if not 1 <= k <= len(requests):
        raise ValueError("k must be in 1..len(requests)")
    model = model_for(topo, params)
    cands = enumerate_candidates(topo, params)
    notes: list[str] = []
    if not cands:
        return make_plan(model, (), requests, ("no valid super-link candidates",))

    pairs = [(r.s, r.d) for r in requests.pairs]
    weights = [r.weight for r in requests.pairs]
    cand_nodes = [c.node_set() for c in cands]

    rng = random.Random(seed)
    order = list(range(len(cands)))
    rng.shuffle(order)
    centroids: list[SuperLink] = []
    used: set[int] = set()
    for idx in order:
        if len(centroids) == k:
            break
        if used.isdisjoint(cand_nodes[idx]):
            centroids.append(cands[idx])
            used.update(cand_nodes[idx])
    if len(centroids) < k:
        notes.append(
            f"only {len(centroids)} disjoint centroids available for k={k}"
        )
        log.warning("kmeans: %s", notes[-1])

    def objective_of(sls: list[SuperLink]) -> float:
        total = 0.0
        for p, (s, d) in enumerate(pairs):
            best = model.direct_latency(s, d)
            for sl in sls:
                lat = model.sl_use(s, d, sl).latency_s
                if lat < best:
                    best = lat
            total += weights[p] * best
        return total

    best_set = list(centroids)
    best_obj = objective_of(centroids)
    stall = 0
    iters = 0
    while stall < _KMEANS_PATIENCE and iters < _KMEANS_MAX_ITERS:
        iters += 1
        # Assignment stage: nearest centroid by per-pair latency.
        members: list[list[int]] = [[] for _ in centroids]
        for p, (s, d) in enumerate(pairs):
            best_j = 0
            best_lat = model.sl_use(s, d, centroids[0]).latency_s
            for j in range(1, len(centroids)):
                lat = model.sl_use(s, d, centroids[j]).latency_s
                if lat < best_lat:
                    best_j, best_lat = j, lat
            members[best_j].append(p)
        # Update stage: exhaustive centroid rescan, keeping disjointness.
        for j in range(len(centroids)):
            if not members[j]:
                continue
            others: set[int] = set()
            for jj, c in enumerate(centroids):
                if jj != j:
                    others.update(c.path.nodes)

            def cluster_latency(c: SuperLink) -> float:
                total = 0.0
                for p in members[j]:
                    s, d = pairs[p]
                    total += weights[p] * model.sl_use(s, d, c).latency_s
                return total

            best_c = centroids[j]
            best_val = cluster_latency(best_c)
            for idx, c in enumerate(cands):
                if not cand_nodes[idx].isdisjoint(others):
                    continue
                val = cluster_latency(c)
                if val < best_val:
                    best_c, best_val = c, val
            centroids[j] = best_c
        obj = objective_of(centroids)
        if obj < best_obj - 1e-15:
            best_obj = obj
            best_set = list(centroids)
            stall = 0
        else:
            stall += 1

    repaired = _budget_repair(model, best_set, requests, budget, params)
    return make_plan(model, repaired, requests, tuple(notes))


def _budget_repair(
    model: LatencyModel,
    sls: list[SuperLink],
    requests: RequestSet,
    budget: float,
    params: PhysicalParams,
) -> list[SuperLink]:
    """Trim endpoint links (or drop single-link SLs) until the budget holds."""
    pairs = [(r.s, r.d) for r in requests.pairs]
    weights = [r.weight for r in requests.pairs]

    def objective_of(cur: list[SuperLink]) -> float:
        total = 0.0
        for p, (s, d) in enumerate(pairs):
            best = model.direct_latency(s, d)
            for sl in cur:
                lat = model.sl_use(s, d, sl).latency_s
                if lat < best:
                    best = lat
            total += weights[p] * best
        return total

    sls = list(sls)
    while sum(sl.cost for sl in sls) > budget:
        base_obj = objective_of(sls)
        best_key = None
        best_next: list[SuperLink] | None = None
        for j, sl in enumerate(sls):
            options: list[SuperLink | None] = []
            if sl.path.n_links == 1:
                options.append(None)
            else:
                for side in (0, 1):
                    nodes = sl.path.nodes[1:] if side == 0 else sl.path.nodes[:-1]
                    trimmed = model.superlink(PathSpec(nodes))
                    if trimmed.is_valid(params):
                        options.append(trimmed)
                if not options:
                    options.append(None)
            for opt_idx, replacement in enumerate(options):
                nxt = sls[:j] + ([replacement] if replacement else []) + sls[j + 1 :]
                saved = sl.cost - (replacement.cost if replacement else 0.0)
                if saved <= 0.0:
                    continue
                lost = objective_of(nxt) - base_obj
                key = (lost / saved, j, opt_idx)
                if best_key is None or key < best_key:
                    best_key, best_next = key, nxt
        if best_next is None:
            break
        sls = best_next
    return sls


# ---------------------------------------------------------------------------
# Brute force oracle
# ---------------------------------------------------------------------------

def brute_force(
    candidates,
    requests: RequestSet,
    budget: float,
    params: PhysicalParams,
    topo: Topology,
) -> Plan:
    """Exhaustive search over disjoint, budget-feasible candidate subsets."""
    candidates = tuple(candidates)
    if len(candidates) > _MAX_BRUTE_FORCE:
        raise ValueError(
            f"brute force is limited to {_MAX_BRUTE_FORCE} candidates, "
            f"got {len(candidates)}"
        )
    model = model_for(topo, params)
    pairs = [(r.s, r.d) for r in requests.pairs]
    weights = [r.weight for r in requests.pairs]
    direct = [model.direct_latency(s, d) for s, d in pairs]
    lat = [
        [model.sl_use(s, d, c).latency_s for c in candidates]
        for (s, d) in pairs
    ]
    node_sets = [c.node_set() for c in candidates]

    best = (sum(w * d for w, d in zip(weights, direct)), 0, ())

    def dfs(start: int, chosen: tuple[int, ...], cost: float, cur: list[float]):
        nonlocal best
        obj = sum(w * c for w, c in zip(weights, cur))
        key = (obj, len(chosen), chosen)
        if key < best:
            best = key
        for i in range(start, len(candidates)):
            c = candidates[i]
            if cost + c.cost > budget:
                continue
            if any(not node_sets[i].isdisjoint(node_sets[j]) for j in chosen):
                continue
            nxt = [min(cur[p], lat[p][i]) for p in range(len(pairs))]
            dfs(i + 1, chosen + (i,), cost + c.cost, nxt)

    dfs(0, (), 0.0, list(direct))
    return make_plan(model, [candidates[i] for i in best[2]], requests)


# ---------------------------------------------------------------------------
# Plan file I/O
# ---------------------------------------------------------------------------

def save_plan(plan: Plan, path: str) -> None:
    payload = {
        "sls": [
            {
                "A": sl.a,
                "B": sl.b,
                "path": list(sl.path.nodes),
                "ep_latency_s": sl.ep_latency_s,
                "cost": sl.cost,
                "stock_target": sl.stock_target,
            }
            for sl in plan.sls
        ],
        "assignment": [
            {
                "s": s,
                "d": d,
                "sl_index": entry.sl_index,
                "shape": entry.shape,
                "latency_s": entry.latency_s,
            }
            for (s, d), entry in sorted(plan.assignment.entries.items())
        ],
        "psi_s": plan.objective_s,
        "total_cost": plan.total_cost,
        "notes": list(plan.notes),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_plan(
    path: str, topo: Topology, requests: RequestSet, params: PhysicalParams
) -> Plan:
    """Rebuild a plan from its file; trees and the assignment are re-derived."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise TopologyFormatError(
            f"{path}: parse error at line {exc.lineno}: {exc.msg}"
        ) from exc
    model = model_for(topo, params)
    try:
        sls = [
            model.superlink(PathSpec(tuple(int(x) for x in rec["path"])))
            for rec in payload["sls"]
        ]
        notes = tuple(payload.get("notes", ()))
    except (KeyError, TypeError, ValueError) as exc:
        raise TopologyFormatError(f"{path}: malformed plan field: {exc}") from exc
    return make_plan(model, sls, requests, notes)
