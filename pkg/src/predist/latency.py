"""Analytic latency model for entangled-pair generation.

Builds on three primitives:

* link-level pair generation over a fiber (heralded attempt rounds),
* merging two stochastically regenerating pairs at a relay via a joint
  measurement (the swap recursion used by the tree optimizer), and
* merging a regenerating pair with an always-available stored pair
  (how a super-link's stocked pairs enter a request tree).

``LatencyModel`` caches shortest paths, optimal swap trees, and derived
latencies for one (topology, params) combination; the module-level functions
are thin wrappers around a small cache of models.
"""
from __future__ import annotations

import functools
import heapq
import math
from dataclasses import dataclass

from .topology import PhysicalParams, Topology

UNREACHABLE = math.inf


# ---------------------------------------------------------------------------
# Scalar primitives
# ---------------------------------------------------------------------------

def link_success_probability(length_km: float, params: PhysicalParams) -> float:
    """Per-attempt success probability of generating a pair over one fiber link."""
    return (
        params.g_p ** 2
        * params.p_op
        * math.exp(-length_km / (2.0 * params.l_att_km))
    )


def link_attempt_period(length_km: float, params: PhysicalParams) -> float:
    """Duration of one synchronized attempt round: photon emission plus heralding."""
    return params.g_t_s + length_km / params.c_sig_km_s


def link_latency(length_km: float, params: PhysicalParams) -> float:
    """Expected time to generate one pair over a single link."""
    if length_km <= 0.0:
        raise ValueError("length_km must be positive")
    return link_attempt_period(length_km, params) / link_success_probability(
        length_km, params
    )


def swap_latency(
    t_left: float, t_right: float, params: PhysicalParams, t_c: float
) -> float:
    """Expected latency of merging two independently regenerating pairs.

    Each attempt waits for both children (expected 3/2 of the slower child for
    exponential-like regeneration), runs the joint measurement, and notifies
    the endpoints; failures repeat the whole cycle.
    """
    return (1.5 * max(t_left, t_right) + params.t_b_s + t_c) / params.p_b


def stocked_swap_latency(t_child: float, params: PhysicalParams, t_c: float) -> float:
    """Expected latency of merging a regenerating pair with a stored pair.

    The stored side is always available, so each attempt waits only for the
    regenerating child.
    """
    return (t_child + params.t_b_s + t_c) / params.p_b


def expected_stock(params: PhysicalParams) -> int:
    """Pairs to keep stocked per super-link: expected consumption per request.

    A stocked pair survives two joint measurements on its way into a request
    pair, so 1/p_b^2 pairs are consumed on average; stock is the ceiling.
    """
    raw = 1.0 / (params.p_b * params.p_b)
    return math.ceil(raw - 1e-9)


# ---------------------------------------------------------------------------
# Paths and swap trees
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PathSpec:
    """A simple path given as an ordered node-id sequence (at least one link)."""

    nodes: tuple[int, ...]

    def __post_init__(self):
        if len(self.nodes) < 2:
            raise ValueError("path needs at least two nodes")
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("path must be simple (no repeated node)")

    @property
    def n_links(self) -> int:
        return len(self.nodes) - 1

    def links(self) -> tuple[tuple[int, int], ...]:
        return tuple(zip(self.nodes[:-1], self.nodes[1:]))

    def reversed(self) -> "PathSpec":
        return PathSpec(tuple(reversed(self.nodes)))


@dataclass(frozen=True)
class TreeNode:
    """One vertex of a swap tree over path-index interval [lo, hi].

    Leaves (hi == lo + 1) are path links. Internal nodes record the split
    index (the relay performing the merge), the classical-notification delay
    used at that merge, and the expected latency of the subtree.
    """

    lo: int
    hi: int
    latency_s: float
    split: int | None = None
    tc_s: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.split is None


@dataclass(frozen=True)
class SwappingTree:
    """Merge schedule over a path's links, with per-node expected latencies."""

    path: PathSpec
    link_lengths_km: tuple[float, ...]
    root: TreeNode

    @property
    def latency_s(self) -> float:
        return self.root.latency_s

    def leaves(self) -> list[TreeNode]:
        out: list[TreeNode] = []

        def walk(node: TreeNode) -> None:
            if node.is_leaf:
                out.append(node)
            else:
                walk(node.left)
                walk(node.right)

        walk(self.root)
        return out


def validate_tree(tree: SwappingTree, params: PhysicalParams, rel_tol: float = 1e-12) -> None:
    """Check leaf ordering and the latency recursion at every internal node."""
    leaves = tree.leaves()
    if [(lf.lo, lf.hi) for lf in leaves] != [
        (i, i + 1) for i in range(tree.path.n_links)
    ]:
        raise ValueError("in-order leaves do not match the path's link sequence")

    def walk(node: TreeNode) -> None:
        if node.is_leaf:
            expected = link_latency(tree.link_lengths_km[node.lo], params)
        else:
            walk(node.left)
            walk(node.right)
            expected = swap_latency(
                node.left.latency_s, node.right.latency_s, params, node.tc_s
            )
        if abs(node.latency_s - expected) > rel_tol * max(abs(expected), 1e-300):
            raise ValueError(
                f"node ({node.lo}, {node.hi}) latency {node.latency_s} "
                f"violates the recursion (expected {expected})"
            )

    walk(tree.root)


def sl_cost(sl: "SuperLink", params: PhysicalParams) -> float:
    """Expected link-level generation attempts consumed per pair at the root.

    Walks the tree carrying per-node multiplicities: producing one pair at a
    node takes 1/p_b pairs from each child, and each link pair costs
    1/P_link attempts.
    """
    return tree_cost(sl.tree, params)


def tree_cost(tree: SwappingTree, params: PhysicalParams) -> float:
    inv_pb = 1.0 / params.p_b

    def rec(node: TreeNode, mult: float) -> float:
        if node.is_leaf:
            p = link_success_probability(tree.link_lengths_km[node.lo], params)
            return mult / p
        return rec(node.left, mult * inv_pb) + rec(node.right, mult * inv_pb)

    return rec(tree.root, 1.0)


# ---------------------------------------------------------------------------
# Super-links and assignments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SuperLink:
    """A node pair kept stocked with pairs, with the path and tree that feed it."""

    a: int
    b: int
    path: PathSpec
    tree: SwappingTree
    ep_latency_s: float
    cost: float
    stock_target: int

    def node_set(self) -> frozenset[int]:
        return frozenset(self.path.nodes)

    def link_set(self) -> frozenset[tuple[int, int]]:
        return frozenset(
            (u, v) if u < v else (v, u) for u, v in self.path.links()
        )

    def is_valid(self, params: PhysicalParams, tau_s: float | None = None) -> bool:
        """Stock must be rebuildable within one request slot."""
        tau = params.tau_s if tau_s is None else tau_s
        return self.stock_target * self.ep_latency_s < tau


@dataclass(frozen=True)
class SlUse:
    """How one request pair would use one super-link, and at what latency."""

    latency_s: float
    shape: str | None = None  # "left": merge source side first; "right": dest side
    a_end: int | None = None  # super-link endpoint playing the source side
    b_end: int | None = None
    conn_a: PathSpec | None = None  # source connector path (None when degenerate)
    conn_b: PathSpec | None = None


@dataclass(frozen=True)
class AssignmentEntry:
    kind: str  # "direct" | "sl"
    latency_s: float
    sl_index: int | None = None
    shape: str | None = None
    a_end: int | None = None
    b_end: int | None = None
    conn_a: PathSpec | None = None
    conn_b: PathSpec | None = None
    direct_path: PathSpec | None = None


@dataclass(frozen=True, eq=False)
class Assignment:
    """Chosen serving strategy per request pair (direct tree or one super-link)."""

    entries: dict[tuple[int, int], AssignmentEntry]

    def __getitem__(self, pair: tuple[int, int]) -> AssignmentEntry:
        return self.entries[pair]

    def __eq__(self, other) -> bool:
        return isinstance(other, Assignment) and self.entries == other.entries


# ---------------------------------------------------------------------------
# The cached model
# ---------------------------------------------------------------------------

class LatencyModel:
    """Shortest paths, optimal swap trees, and latencies for one network.

    All lookups are cached; instances are cheap to query from planners and
    the simulator. Shared, read-only state: safe for concurrent readers.
    """

    def __init__(self, topo: Topology, params: PhysicalParams):
        self.topo = topo
        self.params = params
        self._adj = topo.adjacency()
        self._xy = [topo.xy(i) for i in range(topo.n)]
        self._sssp_cache: dict[int, tuple[dict, dict, dict]] = {}
        self._path_cache: dict[tuple[int, int], PathSpec | None] = {}
        self._tree_cache: dict[tuple[int, ...], SwappingTree] = {}
        self._sl_cache: dict[tuple[int, ...], SuperLink] = {}
        self._use_cache: dict[tuple, SlUse] = {}

    # -- geometry ----------------------------------------------------------

    def distance(self, u: int, v: int) -> float:
        ux, uy = self._xy[u]
        vx, vy = self._xy[v]
        return math.hypot(ux - vx, uy - vy)

    def swap_tc(self, swap: int, end_i: int, end_j: int) -> float:
        """Classical-notification delay for a merge at ``swap`` producing (end_i, end_j)."""
        if self.params.fixed_tc_s is not None:
            return self.params.fixed_tc_s
        return max(self.distance(swap, end_i), self.distance(swap, end_j)) / self.params.c_sig_km_s

    # -- shortest paths ----------------------------------------------------

    def sssp(self, src: int, blocked: frozenset[int] = frozenset()):
        """Dijkstra minimizing (hop count, total length); deterministic ties.

        Returns (hops, dist, pred) dicts. Results for the unblocked graph are
        cached per source; blocked variants are recomputed on each call.
        """
        if not blocked and src in self._sssp_cache:
            return self._sssp_cache[src]
        hops: dict[int, int] = {src: 0}
        dist: dict[int, float] = {src: 0.0}
        pred: dict[int, int] = {src: -1}
        heap = [(0, 0.0, src)]
        settled: set[int] = set()
        while heap:
            h, dl, u = heapq.heappop(heap)
            if u in settled:
                continue
            settled.add(u)
            for v, length in self._adj[u]:
                if v in settled or v in blocked:
                    continue
                nh, nd = h + 1, dl + length
                if v not in hops or (nh, nd) < (hops[v], dist[v]):
                    hops[v], dist[v], pred[v] = nh, nd, u
                    heapq.heappush(heap, (nh, nd, v))
        result = (hops, dist, pred)
        if not blocked:
            self._sssp_cache[src] = result
        return result

    def best_path(self, u: int, v: int) -> PathSpec | None:
        """Minimum-hop path (ties by length) between two nodes, or None."""
        if u == v:
            raise ValueError("path endpoints must differ")
        key = (u, v)
        if key in self._path_cache:
            return self._path_cache[key]
        _, _, pred = self.sssp(u)
        path = reconstruct_path(pred, u, v)
        spec = PathSpec(path) if path is not None else None
        self._path_cache[key] = spec
        if spec is not None:
            self._path_cache[(v, u)] = spec.reversed()
        else:
            self._path_cache[(v, u)] = None
        return spec

    def path_excluding(
        self, u: int, v: int, blocked: frozenset[int]
    ) -> PathSpec | None:
        """Minimum-hop path avoiding the blocked nodes entirely."""
        if u in blocked or v in blocked:
            return None
        _, _, pred = self.sssp(u, blocked)
        path = reconstruct_path(pred, u, v)
        return PathSpec(path) if path is not None else None

    # -- trees and latencies -------------------------------------------------

    def path_lengths(self, path: PathSpec) -> tuple[float, ...]:
        return tuple(self.topo.edge_length(a, b) for a, b in path.links())

    def tree(self, path: PathSpec) -> SwappingTree:
        cached = self._tree_cache.get(path.nodes)
        if cached is None:
            cached = self._build_tree(path)
            self._tree_cache[path.nodes] = cached
        return cached

    def _build_tree(self, path: PathSpec) -> SwappingTree:
        """Interval DP over the path links minimizing the swap recursion."""
        params = self.params
        nodes = path.nodes
        lengths = self.path_lengths(path)
        m = len(lengths)
        lat = [[0.0] * (m + 1) for _ in range(m + 1)]
        split = [[-1] * (m + 1) for _ in range(m + 1)]
        tc = [[0.0] * (m + 1) for _ in range(m + 1)]
        for i in range(m):
            lat[i][i + 1] = link_latency(lengths[i], params)
        for span in range(2, m + 1):
            for i in range(0, m - span + 1):
                j = i + span
                best = math.inf
                best_k = -1
                best_tc = 0.0
                for k in range(i + 1, j):
                    t_c = self.swap_tc(nodes[k], nodes[i], nodes[j])
                    cand = swap_latency(lat[i][k], lat[k][j], params, t_c)
                    if cand < best:
                        best, best_k, best_tc = cand, k, t_c
                lat[i][j] = best
                split[i][j] = best_k
                tc[i][j] = best_tc

        def build(i: int, j: int) -> TreeNode:
            if j == i + 1:
                return TreeNode(i, j, lat[i][j])
            k = split[i][j]
            return TreeNode(i, j, lat[i][j], k, tc[i][j], build(i, k), build(k, j))

        return SwappingTree(path, lengths, build(0, m))

    def superlink(self, path: PathSpec) -> SuperLink:
        """Super-link over a path, canonicalized so the smaller endpoint is first."""
        if path.nodes[0] > path.nodes[-1]:
            path = path.reversed()
        cached = self._sl_cache.get(path.nodes)
        if cached is None:
            tree = self.tree(path)
            cached = SuperLink(
                a=path.nodes[0],
                b=path.nodes[-1],
                path=path,
                tree=tree,
                ep_latency_s=tree.latency_s,
                cost=tree_cost(tree, self.params),
                stock_target=expected_stock(self.params),
            )
            self._sl_cache[path.nodes] = cached
        return cached

    def direct_latency(self, u: int, v: int) -> float:
        path = self.best_path(u, v)
        if path is None:
            return UNREACHABLE
        return self.tree(path).latency_s

    # -- super-link-aided latency -------------------------------------------

    def sl_use(self, s: int, d: int, sl: SuperLink) -> SlUse:
        key = (s, d, sl.path.nodes)
        cached = self._use_cache.get(key)
        if cached is None:
            cached = self._compute_sl_use(s, d, sl)
            self._use_cache[key] = cached
        return cached

    def _compute_sl_use(self, s: int, d: int, sl: SuperLink) -> SlUse:
        best: SlUse | None = None
        for a_end, b_end in ((sl.a, sl.b), (sl.b, sl.a)):
            t_sa = 0.0 if s == a_end else self.direct_latency(s, a_end)
            t_bd = 0.0 if d == b_end else self.direct_latency(b_end, d)
            if t_sa == UNREACHABLE or t_bd == UNREACHABLE:
                continue
            for shape in ("left", "right"):
                lat = self._shape_latency(shape, s, d, a_end, b_end, t_sa, t_bd)
                if best is None or lat < best.latency_s:
                    best = SlUse(
                        latency_s=lat,
                        shape=shape,
                        a_end=a_end,
                        b_end=b_end,
                        conn_a=None if s == a_end else self.best_path(s, a_end),
                        conn_b=None if d == b_end else self.best_path(b_end, d),
                    )
        if best is None:
            return SlUse(latency_s=UNREACHABLE)
        return best

    def _shape_latency(
        self,
        shape: str,
        s: int,
        d: int,
        a_end: int,
        b_end: int,
        t_sa: float,
        t_bd: float,
    ) -> float:
        """Latency of serving (s, d) through a stocked (a_end, b_end) pair.

        "left" merges the source connector with the stocked pair first (at
        a_end) and finishes at b_end; "right" mirrors this. Degenerate
        connectors (request endpoint coincides with a super-link endpoint)
        contribute zero latency and skip their merge level.
        """
        params = self.params
        if s == a_end and d == b_end:
            return 0.0
        if s == a_end:
            return stocked_swap_latency(t_bd, params, self.swap_tc(b_end, s, d))
        if d == b_end:
            return stocked_swap_latency(t_sa, params, self.swap_tc(a_end, s, b_end))
        if shape == "left":
            t_sb = stocked_swap_latency(t_sa, params, self.swap_tc(a_end, s, b_end))
            return swap_latency(t_sb, t_bd, params, self.swap_tc(b_end, s, d))
        t_ad = stocked_swap_latency(t_bd, params, self.swap_tc(b_end, a_end, d))
        return swap_latency(t_sa, t_ad, params, self.swap_tc(a_end, s, d))

    # -- objective -----------------------------------------------------------

    def aggregate_latency(
        self, requests, sls: tuple[SuperLink, ...]
    ) -> tuple[float, Assignment]:
        """Weighted expected request latency with per-pair direct fallback."""
        entries: dict[tuple[int, int], AssignmentEntry] = {}
        total = 0.0
        for req in requests.pairs:
            entry = self.best_entry(req.s, req.d, sls)
            entries[(req.s, req.d)] = entry
            total += req.weight * entry.latency_s
        return total, Assignment(entries)

    def best_entry(
        self, s: int, d: int, sls: tuple[SuperLink, ...]
    ) -> AssignmentEntry:
        direct = self.direct_latency(s, d)
        best = AssignmentEntry(
            kind="direct", latency_s=direct, direct_path=self.best_path(s, d)
        )
        for idx, sl in enumerate(sls):
            use = self.sl_use(s, d, sl)
            if use.latency_s < best.latency_s:
                best = AssignmentEntry(
                    kind="sl",
                    latency_s=use.latency_s,
                    sl_index=idx,
                    shape=use.shape,
                    a_end=use.a_end,
                    b_end=use.b_end,
                    conn_a=use.conn_a,
                    conn_b=use.conn_b,
                )
        return best


def reconstruct_path(pred: dict[int, int], src: int, dst: int) -> tuple[int, ...] | None:
    """Walk a predecessor map back from dst to src; None when unreachable."""
    if dst not in pred:
        return None
    path = [dst]
    while path[-1] != src:
        path.append(pred[path[-1]])
    path.reverse()
    return tuple(path)


@functools.lru_cache(maxsize=16)
def model_for(topo: Topology, params: PhysicalParams) -> LatencyModel:
    """Shared model cache keyed by the (hashable) topology and params."""
    return LatencyModel(topo, params)


# ---------------------------------------------------------------------------
# Functional wrappers
# ---------------------------------------------------------------------------

def optimal_tree(path: PathSpec, params: PhysicalParams, topo: Topology) -> SwappingTree:
    """Latency-optimal swap tree over a path (interval dynamic program)."""
    return model_for(topo, params).tree(path)


def direct_latency(s: int, d: int, params: PhysicalParams, topo: Topology) -> float:
    """Expected latency of serving (s, d) without any super-link."""
    return model_for(topo, params).direct_latency(s, d)


def sl_aided_latency(
    s: int, d: int, sl: SuperLink, params: PhysicalParams, topo: Topology
) -> SlUse:
    """Best latency, tree shape, and connectors for serving (s, d) via ``sl``."""
    return model_for(topo, params).sl_use(s, d, sl)


def aggregate_latency(
    requests, sls, params: PhysicalParams, topo: Topology
) -> tuple[float, Assignment]:
    """Objective value (weighted expected latency) and the realizing assignment."""
    return model_for(topo, params).aggregate_latency(requests, tuple(sls))
