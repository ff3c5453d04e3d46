"""Matching-graph construction, exact MWPM decoding, and LER estimation.

The decoder is exact: syndromes are matched on the complete graph of
shortest paths between fired detectors (plus one virtual boundary node), and
the minimum-weight perfect matching is solved exactly, by exhaustive
enumeration for up to five fired detectors, by a subset-DP for up to
eighteen, and by a blossom solver above that. Batched decoding deduplicates
syndromes and reuses all-pairs shortest paths; weights never tie generically,
and ties that do occur are broken deterministically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import networkx as nx
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import DataError
from .model import DEM, Detector, Hyperedge, merge_prob
from .sampler import ShotSet

try:
    from numba import njit

    _HAVE_NUMBA = True
except Exception:  # pragma: no cover - numba is an optional accelerator
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


_WEIGHT_CLAMP = (1e-12, 0.49)
_Z95 = 1.959963984540054
_ENUM_MAX = 5
_DP_MAX = 18


def decompose_hyperedges(dem: DEM) -> DEM:
    """Reduce every hyperedge to degree <= 2 by absorbing it into edges.

    A hyperedge of degree >= 3 must admit a partition of its detector set into
    detector sets of existing degree <= 2 edges; its probability is then
    merged into every component edge of the partition with the fewest
    components (ties broken lexicographically) and the hyperedge dropped.
    Graph-like models pass through unchanged.
    """
    low: dict[tuple[int, ...], list[int]] = {}
    for i, e in enumerate(dem.hyperedges):
        if e.degree <= 2:
            low.setdefault(e.detectors, []).append(i)
    extra: dict[int, float] = {}
    dropped: set[int] = set()
    for i, e in enumerate(dem.hyperedges):
        if e.degree <= 2:
            continue
        if e.probability is None:
            raise DataError(f"hyperedge {e.detectors} has no probability to decompose")
        partition = _best_partition(e.detectors, set(low))
        if partition is None:
            raise DataError(
                f"hyperedge {e.detectors} admits no decomposition into existing edges"
            )
        dropped.add(i)
        for part in partition:
            j = low[part][0]
            extra[j] = merge_prob(extra.get(j, 0.0), e.probability)
    if not dropped:
        return dem
    edges: list[Hyperedge] = []
    fams: list[str] = []
    flips: list[tuple[int, ...]] = []
    for i, e in enumerate(dem.hyperedges):
        if i in dropped:
            continue
        p = e.probability
        if i in extra:
            p = merge_prob(p, extra[i])  # type: ignore[arg-type]
        edges.append(Hyperedge(e.detectors, e.observables, p))
        if dem.edge_families is not None:
            fams.append(dem.edge_families[i])
        if dem.data_flips is not None:
            flips.append(dem.data_flips[i])
    return DEM(
        detectors=dem.detectors,
        hyperedges=tuple(edges),
        num_observables=dem.num_observables,
        edge_families=tuple(fams) if dem.edge_families is not None else None,
        data_flips=tuple(flips) if dem.data_flips is not None else None,
        num_data=dem.num_data,
    )


def _best_partition(
    detectors: tuple[int, ...], parts: set[tuple[int, ...]]
) -> tuple[tuple[int, ...], ...] | None:
    """Exact cover of ``detectors`` by available parts, fewest pieces first."""
    best: list[tuple[tuple[int, ...], ...]] = []

    def rec(remaining: tuple[int, ...], chosen: tuple[tuple[int, ...], ...]) -> None:
        if not remaining:
            best.append(chosen)
            return
        lo = remaining[0]
        rest = remaining[1:]
        if (lo,) in parts:
            rec(rest, chosen + ((lo,),))
        for other in rest:
            pair = (lo, other)
            if pair in parts:
                rec(tuple(x for x in rest if x != other), chosen + (pair,))

    rec(detectors, ())
    if not best:
        return None
    return min(best, key=lambda c: (len(c), c))


class MatchingGraph:
    """Weighted decoding graph over detectors plus one boundary node.

    Edge weights are ln((1-p)/p) after clamping p into [1e-12, 0.49];
    parallel edges between a node pair are first merged (probabilities
    XOR-combined) and keep the observable mask of their most likely member.
    """

    def __init__(
        self,
        num_detectors: int,
        num_observables: int,
        edges: list[tuple[int, int, float, int]],
    ) -> None:
        self.num_detectors = num_detectors
        self.num_observables = num_observables
        self.boundary = num_detectors
        self.edges = edges  # (u, v, weight, mask) with v possibly the boundary
        self._fw: tuple[np.ndarray, np.ndarray] | None = None
        self._csgraph: csr_matrix | None = None
        self._pair_mask = {(min(u, v), max(u, v)): m for u, v, _, m in edges}

    def shortest_paths(self) -> tuple[np.ndarray, np.ndarray]:
        """All-pairs distances and path observable masks (cached)."""
        if self._fw is None:
            n = self.num_detectors + 1
            dist = np.full((n, n), np.inf)
            np.fill_diagonal(dist, 0.0)
            mask = np.zeros((n, n), dtype=np.int64)
            for u, v, w, m in self.edges:
                if w < dist[u, v]:
                    dist[u, v] = dist[v, u] = w
                    mask[u, v] = mask[v, u] = m
            for k in range(n):
                alt = dist[:, k, None] + dist[None, k, :]
                better = alt < dist
                np.copyto(dist, alt, where=better)
                np.copyto(mask, mask[:, k, None] ^ mask[None, k, :], where=better)
            self._fw = (dist, mask)
        return self._fw

    def csgraph(self) -> csr_matrix:
        if self._csgraph is None:
            n = self.num_detectors + 1
            us = np.array([e[0] for e in self.edges], dtype=np.int64)
            vs = np.array([e[1] for e in self.edges], dtype=np.int64)
            ws = np.array([e[2] for e in self.edges])
            self._csgraph = csr_matrix(
                (np.r_[ws, ws], (np.r_[us, vs], np.r_[vs, us])), shape=(n, n)
            )
        return self._csgraph


def build_matching_graph(dem: DEM) -> MatchingGraph:
    """Decoding graph of a graph-like DEM (degree <= 2 everywhere)."""
    boundary = dem.num_detectors
    groups: dict[tuple[int, int], list[tuple[float, int]]] = {}
    order: list[tuple[int, int]] = []
    for e in dem.hyperedges:
        if e.degree > 2:
            raise DataError(
                f"hyperedge {e.detectors} has degree {e.degree}; decompose first"
            )
        if e.probability is None:
            raise DataError("matching graph needs concrete probabilities")
        pair = (e.detectors[0], boundary) if e.degree == 1 else (e.detectors[0], e.detectors[1])
        if pair not in groups:
            groups[pair] = []
            order.append(pair)
        groups[pair].append((e.probability, e.observables))
    edges: list[tuple[int, int, float, int]] = []
    for pair in order:
        members = groups[pair]
        p = 0.0
        for q, _ in members:
            p = merge_prob(p, q)
        mask = max(members, key=lambda t: t[0])[1]
        p = min(max(p, _WEIGHT_CLAMP[0]), _WEIGHT_CLAMP[1])
        w = math.log((1.0 - p) / p)
        edges.append((pair[0], pair[1], w, mask))
    return MatchingGraph(dem.num_detectors, dem.num_observables, edges)


# ---------------------------------------------------------------------------
# Matching solvers.


def _matchings_with_boundary(k: int) -> np.ndarray:
    """All pairings of k nodes where each node pairs up or takes the boundary.

    Returned as an (M, k) int8 partner table with -1 meaning boundary.
    """
    results: list[tuple[int, ...]] = []
    partner: list[int | None] = [None] * k

    def rec(pos: int) -> None:
        if pos == k:
            results.append(tuple(x if x is not None else -1 for x in partner))
            return
        if partner[pos] is not None:
            rec(pos + 1)
            return
        partner[pos] = -1
        rec(pos + 1)
        partner[pos] = None
        for j in range(pos + 1, k):
            if partner[j] is None:
                partner[pos] = j
                partner[j] = pos
                rec(pos + 1)
                partner[pos] = None
                partner[j] = None

    rec(0)
    return np.array(results, dtype=np.int8).reshape(len(results), k)


_PATTERN_CACHE: dict[int, np.ndarray] = {}


def _patterns(k: int) -> np.ndarray:
    if k not in _PATTERN_CACHE:
        _PATTERN_CACHE[k] = _matchings_with_boundary(k)
    return _PATTERN_CACHE[k]


def _dp_match_py(W: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """Subset-DP minimum-weight matching with per-node boundary option.

    Returns total cost and a partner vector (-1 = boundary). O(2^k * k).
    """
    k = b.shape[0]
    size = 1 << k
    dp = np.full(size, np.inf)
    choice = np.full(size, -3, dtype=np.int32)
    dp[0] = 0.0
    for s in range(1, size):
        i = 0
        while not (s >> i) & 1:
            i += 1
        si = s & ~(1 << i)
        best = b[i] + dp[si]
        pick = -2
        for j in range(i + 1, k):
            if (s >> j) & 1:
                c = W[i, j] + dp[si & ~(1 << j)]
                if c < best:
                    best = c
                    pick = j
        dp[s] = best
        choice[s] = pick
    pairing = np.full(k, -1, dtype=np.int32)
    s = size - 1
    while s:
        i = 0
        while not (s >> i) & 1:
            i += 1
        j = choice[s]
        s &= ~(1 << i)
        if j >= 0:
            pairing[i] = j
            pairing[j] = i
            s &= ~(1 << j)
    return dp[size - 1], pairing


_dp_match = njit(cache=True)(_dp_match_py) if _HAVE_NUMBA else _dp_match_py


def _blossom_match(W: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """Exact matching via blossom on the duplicated-boundary construction.

    Node i may pair with node j (cost W[i, j]) or with its private virtual
    boundary copy (cost b[i]); virtual copies pair with each other for free,
    which makes a perfect matching always exist when costs are finite.
    """
    k = b.shape[0]
    graph = nx.Graph()
    graph.add_nodes_from(range(2 * k))
    for i in range(k):
        if np.isfinite(b[i]):
            graph.add_edge(i, k + i, weight=-float(b[i]))
        for j in range(i + 1, k):
            if np.isfinite(W[i, j]):
                graph.add_edge(i, j, weight=-float(W[i, j]))
            graph.add_edge(k + i, k + j, weight=0.0)
    mate = nx.max_weight_matching(graph, maxcardinality=True)
    if len(mate) * 2 != 2 * k:
        raise DataError("matching infeasible: a fired detector is disconnected")
    pairing = np.full(k, -1, dtype=np.int32)
    cost = 0.0
    for a, c in mate:
        a, c = min(a, c), max(a, c)
        if a < k and c < k:
            pairing[a] = c
            pairing[c] = a
            cost += W[a, c]
        elif a < k <= c:
            if c != k + a:
                raise DataError("matching infeasible: a fired detector is disconnected")
            cost += b[a]
    return cost, pairing


def _solve_matching(W: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    k = b.shape[0]
    if k == 0:
        return 0.0, np.zeros(0, dtype=np.int32)
    if k <= _DP_MAX:
        cost, pairing = _dp_match(np.ascontiguousarray(W), np.ascontiguousarray(b))
        if not np.isfinite(cost):
            raise DataError("matching infeasible: a fired detector is disconnected")
        return float(cost), pairing
    return _blossom_match(W, b)


def _pairing_mask(
    pairing: np.ndarray, mask_ff: np.ndarray, mask_fb: np.ndarray
) -> int:
    out = 0
    for i, j in enumerate(pairing):
        if j == -1:
            out ^= int(mask_fb[i])
        elif i < j:
            out ^= int(mask_ff[i, j])
    return out


# ---------------------------------------------------------------------------
# Batched decoding.
#
# The hot path is re-decoding one fixed syndrome table under many candidate
# weight assignments (reward evaluation), so the whole matching runs as one
# numba kernel over (candidate, unique syndrome). Matching a pair never pays
# off when its path costs at least as much as sending both nodes to the
# boundary, and ties break toward the boundary, so each fired set splits
# into independent components under dist[i, j] < b[i] + b[j]. Within a
# component the members are time-ordered and matchable partners sit at most
# W index positions apart, so a sliding-window DP over the open members
# solves each component in O(kc * 2^W) instead of O(2^kc); components with
# a wide window fall back to the subset DP, and only components too large
# for that are flagged for the per-row blossom solver.

_FRONT_W = 12


def _match_masks_kernel_py(dists, masks, fired_flat, offsets, out, feasible, hard):
    n_cand = dists.shape[0]
    n_rows = offsets.shape[0] - 1
    boundary = dists.shape[1] - 1
    kmax = 0
    for r in range(n_rows):
        kr = offsets[r + 1] - offsets[r]
        if kr > kmax:
            kmax = kr
    if kmax == 0:
        return
    # Workspaces are allocated once and reused across rows; every cell read
    # in a row is written first, so no clearing between rows is needed.
    b = np.empty(kmax, np.float64)
    adj = np.empty((kmax, kmax), np.bool_)
    visited = np.empty(kmax, np.bool_)
    comp = np.empty(kmax, np.int64)
    stack = np.empty(kmax, np.int64)
    dp = np.empty(1 << min(kmax, _DP_MAX), np.float64)
    choice = np.empty(1 << min(kmax, _DP_MAX), np.int8)
    m_front = 1 << min(max(kmax - 1, 1), _FRONT_W)
    fcur = np.empty(m_front, np.float64)
    fnxt = np.empty(m_front, np.float64)
    fpre = np.empty((kmax, m_front), np.int16)
    fcho = np.empty((kmax, m_front), np.int8)
    for c in range(n_cand):
        dist = dists[c]
        mask = masks[c]
        for r in range(n_rows):
            lo = offsets[r]
            k = offsets[r + 1] - lo
            if k == 0:
                continue
            if k == 1:
                g0 = fired_flat[lo]
                if dist[g0, boundary] == np.inf:
                    feasible[c, r] = False
                else:
                    out[c, r] = mask[g0, boundary]
                continue
            for i in range(k):
                b[i] = dist[fired_flat[lo + i], boundary]
                visited[i] = False
            for i in range(k):
                gi = fired_flat[lo + i]
                adj[i, i] = False
                for j in range(i + 1, k):
                    hit = dist[gi, fired_flat[lo + j]] < b[i] + b[j]
                    adj[i, j] = hit
                    adj[j, i] = hit
            acc = np.int64(0)
            ok = True
            tough = False
            for seed in range(k):
                if visited[seed]:
                    continue
                visited[seed] = True
                stack[0] = seed
                top = 1
                kc = 0
                while top:
                    top -= 1
                    u = stack[top]
                    comp[kc] = u
                    kc += 1
                    for v in range(k):
                        if adj[u, v] and not visited[v]:
                            visited[v] = True
                            stack[top] = v
                            top += 1
                if kc == 1:
                    if b[seed] == np.inf:
                        ok = False
                        break
                    acc ^= mask[fired_flat[lo + seed], boundary]
                    continue
                for a in range(1, kc):
                    key = comp[a]
                    t = a - 1
                    while t >= 0 and comp[t] > key:
                        comp[t + 1] = comp[t]
                        t -= 1
                    comp[t + 1] = key
                W = 1
                for a in range(kc):
                    ua = comp[a]
                    for a2 in range(a + 1, kc):
                        if adj[ua, comp[a2]] and a2 - a > W:
                            W = a2 - a
                if W <= _FRONT_W:
                    M = 1 << W
                    wm = M - 1
                    fcur[0] = 0.0
                    for t in range(kc):
                        ut = comp[t]
                        gt = fired_flat[lo + ut]
                        bt = b[ut]
                        # A member only stays open when a later partner exists.
                        can_open = False
                        for a in range(t + 1, kc):
                            if adj[ut, comp[a]]:
                                can_open = True
                                break
                        lim = M if t >= W else (1 << t)
                        nlim = M if t + 1 >= W else (1 << (t + 1))
                        for S in range(nlim):
                            fnxt[S] = np.inf
                        for S in range(lim):
                            base = fcur[S]
                            if base == np.inf:
                                continue
                            # Oldest window slot falls out after this step; an
                            # open member there has no later partner and must
                            # close at the boundary now.
                            epay = 0.0
                            if (S >> (W - 1)) & 1:
                                epay = b[comp[t - W]]
                            ssh = (S << 1) & wm
                            cost = base + bt + epay
                            if cost < fnxt[ssh]:
                                fnxt[ssh] = cost
                                fpre[t, ssh] = S
                                fcho[t, ssh] = -1
                            if can_open:
                                sn = ssh | 1
                                cost = base + epay
                                if cost < fnxt[sn]:
                                    fnxt[sn] = cost
                                    fpre[t, sn] = S
                                    fcho[t, sn] = -2
                            for q in range(W):
                                if (S >> q) & 1:
                                    up = comp[t - 1 - q]
                                    if adj[ut, up]:
                                        pay = epay
                                        if q == W - 1:
                                            pay = 0.0
                                        cost = base + dist[gt, fired_flat[lo + up]] + pay
                                        sn = ((S & ~(1 << q)) << 1) & wm
                                        if cost < fnxt[sn]:
                                            fnxt[sn] = cost
                                            fpre[t, sn] = S
                                            fcho[t, sn] = q
                        for S in range(nlim):
                            fcur[S] = fnxt[S]
                    best = np.inf
                    bidx = 0
                    for S in range(M):
                        cost = fcur[S]
                        if cost == np.inf:
                            continue
                        for q in range(W):
                            if (S >> q) & 1:
                                cost += b[comp[kc - 1 - q]]
                        if cost < best:
                            best = cost
                            bidx = S
                    if best == np.inf:
                        ok = False
                        break
                    S = bidx
                    for q in range(W):
                        if (S >> q) & 1:
                            acc ^= mask[fired_flat[lo + comp[kc - 1 - q]], boundary]
                    for t in range(kc - 1, -1, -1):
                        ch = int(fcho[t, S])
                        sp = int(fpre[t, S])
                        gt = fired_flat[lo + comp[t]]
                        if ch == -1:
                            acc ^= mask[gt, boundary]
                        elif ch >= 0:
                            acc ^= mask[gt, fired_flat[lo + comp[t - 1 - ch]]]
                        if ((sp >> (W - 1)) & 1) and ch != W - 1:
                            acc ^= mask[fired_flat[lo + comp[t - W]], boundary]
                        S = sp
                elif kc <= _DP_MAX:
                    size = 1 << kc
                    dp[0] = 0.0
                    for s in range(1, size):
                        i = 0
                        while not (s >> i) & 1:
                            i += 1
                        si = s & ~(1 << i)
                        gi = fired_flat[lo + comp[i]]
                        best = b[comp[i]] + dp[si]
                        pick = -2
                        for j in range(i + 1, kc):
                            if (s >> j) & 1:
                                cost = dist[gi, fired_flat[lo + comp[j]]] + dp[si & ~(1 << j)]
                                if cost < best:
                                    best = cost
                                    pick = j
                        dp[s] = best
                        choice[s] = pick
                    if dp[size - 1] == np.inf:
                        ok = False
                        break
                    s = size - 1
                    while s:
                        i = 0
                        while not (s >> i) & 1:
                            i += 1
                        pick = int(choice[s])
                        gi = fired_flat[lo + comp[i]]
                        s &= ~(1 << i)
                        if pick >= 0:
                            acc ^= mask[gi, fired_flat[lo + comp[pick]]]
                            s &= ~(1 << pick)
                        else:
                            acc ^= mask[gi, boundary]
                else:
                    tough = True
                    break
            if tough:
                hard[c, r] = True
            elif not ok:
                feasible[c, r] = False
            else:
                out[c, r] = acc


_match_masks_kernel = (
    njit(cache=True, nogil=True)(_match_masks_kernel_py)
    if _HAVE_NUMBA
    else _match_masks_kernel_py
)


def _fired_layout(syndromes: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ks = syndromes.sum(axis=1, dtype=np.int64)
    offsets = np.zeros(ks.shape[0] + 1, dtype=np.int64)
    np.cumsum(ks, out=offsets[1:])
    fired_flat = np.nonzero(syndromes)[1].astype(np.int64)
    return ks, offsets, fired_flat


def _decode_unique_many(graphs, syndromes: np.ndarray) -> np.ndarray:
    """Predicted observable masks, (len(graphs), m), sharing one fired layout."""
    m = syndromes.shape[0]
    n_cand = len(graphs)
    _, offsets, fired_flat = _fired_layout(syndromes)
    pairs = [g.shortest_paths() for g in graphs]
    dists = np.stack([p[0] for p in pairs])
    masks = np.stack([p[1] for p in pairs])
    out = np.zeros((n_cand, m), dtype=np.int64)
    feasible = np.ones((n_cand, m), dtype=np.bool_)
    hard = np.zeros((n_cand, m), dtype=np.bool_)
    _match_masks_kernel(dists, masks, fired_flat, offsets, out, feasible, hard)
    if not feasible.all():
        raise DataError("matching infeasible: a fired detector is disconnected")
    boundary = graphs[0].boundary
    for c, r in zip(*np.nonzero(hard)):
        ids = fired_flat[offsets[r] : offsets[r + 1]]
        grid = np.ix_(ids, ids)
        dist, mask = pairs[c]
        _, pairing = _solve_matching(dist[grid], dist[ids, boundary])
        out[c, r] = _pairing_mask(pairing, mask[grid], mask[ids, boundary])
    return out


def _decode_unique(graph: MatchingGraph, syndromes: np.ndarray) -> np.ndarray:
    """Predicted observable masks for unique syndrome rows (m, D)."""
    if _HAVE_NUMBA:
        return _decode_unique_many([graph], syndromes)[0]
    dist, mask = graph.shortest_paths()
    boundary = graph.boundary
    m = syndromes.shape[0]
    out = np.zeros(m, dtype=np.int64)
    ks = syndromes.sum(axis=1, dtype=np.int64)
    for k in np.unique(ks):
        rows = np.flatnonzero(ks == k)
        if k == 0:
            continue
        ids = np.nonzero(syndromes[rows])[1].reshape(len(rows), k)
        b = dist[ids, boundary]
        bm = mask[ids, boundary]
        if k == 1:
            if not np.all(np.isfinite(b)):
                raise DataError("matching infeasible: a fired detector is disconnected")
            out[rows] = bm[:, 0]
            continue
        W = dist[ids[:, :, None], ids[:, None, :]]
        Wm = mask[ids[:, :, None], ids[:, None, :]]
        if k <= _ENUM_MAX:
            out[rows] = _enum_group(W, Wm, b, bm)
        else:
            for r, row in enumerate(rows):
                cost, pairing = _solve_matching(W[r], b[r])
                out[row] = _pairing_mask(pairing, Wm[r], bm[r])
    return out


def _enum_group(
    W: np.ndarray, Wm: np.ndarray, b: np.ndarray, bm: np.ndarray
) -> np.ndarray:
    """Vectorized exact matching for small k via pattern enumeration."""
    mrows, k = b.shape
    pats = _patterns(int(k))
    costs = np.zeros((mrows, len(pats)))
    for p_idx, pat in enumerate(pats):
        singles = np.flatnonzero(pat == -1)
        cost = b[:, singles].sum(axis=1) if len(singles) else np.zeros(mrows)
        for i in range(k):
            j = pat[i]
            if j > i:
                cost = cost + W[:, i, j]
        costs[:, p_idx] = cost
    best = np.argmin(costs, axis=1)
    if not np.all(np.isfinite(costs[np.arange(mrows), best])):
        raise DataError("matching infeasible: a fired detector is disconnected")
    out = np.zeros(mrows, dtype=np.int64)
    for p_idx in np.unique(best):
        sel = best == p_idx
        pat = pats[p_idx]
        acc = np.zeros(int(sel.sum()), dtype=np.int64)
        for i in range(k):
            j = pat[i]
            if j == -1:
                acc ^= bm[sel, i]
            elif j > i:
                acc ^= Wm[sel, i, j]
        out[sel] = acc
    return out


def _unique_syndromes(det_bits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    packed = np.packbits(det_bits, axis=1)
    uniq, inverse = np.unique(packed, axis=0, return_inverse=True)
    syndromes = np.unpackbits(uniq, axis=1, count=det_bits.shape[1])
    return syndromes, inverse.ravel()


def decode_bits(graph: MatchingGraph, det_bits: np.ndarray) -> np.ndarray:
    """Predicted observable bits, one row per shot (n, K)."""
    det_bits = np.asarray(det_bits, dtype=np.uint8)
    if det_bits.ndim != 2 or det_bits.shape[1] != graph.num_detectors:
        raise DataError(
            f"detector bits have shape {det_bits.shape}, expected (n, {graph.num_detectors})"
        )
    syndromes, inverse = _unique_syndromes(det_bits)
    masks = _decode_unique(graph, syndromes)[inverse]
    k_obs = graph.num_observables
    bits = np.zeros((det_bits.shape[0], k_obs), dtype=np.uint8)
    for j in range(k_obs):
        bits[:, j] = (masks >> j) & 1
    return bits


@dataclass(frozen=True)
class LerEstimate:
    """A logical error rate with its Wilson 95% confidence interval."""

    failures: int
    shots: int
    ler: float
    ci_low: float
    ci_high: float


def wilson_interval(failures: int, shots: int, z: float = _Z95) -> tuple[float, float]:
    if shots <= 0:
        raise DataError("Wilson interval needs shots > 0")
    phat = failures / shots
    denom = 1.0 + z * z / shots
    center = (phat + z * z / (2 * shots)) / denom
    half = z * math.sqrt(phat * (1 - phat) / shots + z * z / (4 * shots * shots)) / denom
    lo = 0.0 if failures == 0 else max(0.0, center - half)
    hi = 1.0 if failures == shots else min(1.0, center + half)
    return lo, hi


def ler_estimate(failures: int, shots: int) -> LerEstimate:
    """LER point estimate; zero failures floored at 0.5/shots."""
    if shots <= 0:
        raise DataError("LER estimate needs shots > 0")
    if not 0 <= failures <= shots:
        raise DataError(f"failures {failures} outside [0, {shots}]")
    lo, hi = wilson_interval(failures, shots)
    ler = failures / shots if failures else 0.5 / shots
    return LerEstimate(failures, shots, ler, lo, max(hi, ler))


def decode_shots(graph: MatchingGraph, shots: ShotSet) -> tuple[np.ndarray, LerEstimate]:
    """Decode every shot; failure = predicted observable differs from actual."""
    if shots.num_observables != graph.num_observables:
        raise DataError(
            f"shot set has {shots.num_observables} observables, graph has {graph.num_observables}"
        )
    preds = decode_bits(graph, shots.detector_bits)
    fails = np.any(preds != shots.observable_bits, axis=1).astype(np.uint8)
    return fails, ler_estimate(int(fails.sum()), shots.n_shots)


@dataclass(frozen=True)
class SyndromeTable:
    """Unique syndromes with shot counts split by the (single) observable."""

    syndromes: np.ndarray  # (m, D) uint8
    counts_by_obs: np.ndarray  # (m, 2) int64

    @property
    def n_shots(self) -> int:
        return int(self.counts_by_obs.sum())


def tabulate_shots(shots: ShotSet) -> SyndromeTable:
    """Aggregate a single-observable ShotSet for repeated re-decoding."""
    if shots.num_observables != 1:
        raise DataError("syndrome tabulation supports exactly one observable")
    syndromes, inverse = _unique_syndromes(shots.detector_bits)
    m = syndromes.shape[0]
    obs = shots.observable_bits[:, 0]
    counts = np.zeros((m, 2), dtype=np.int64)
    counts[:, 0] = np.bincount(inverse[obs == 0], minlength=m)
    counts[:, 1] = np.bincount(inverse[obs == 1], minlength=m)
    return SyndromeTable(syndromes, counts)


def count_failures(graph: MatchingGraph, table: SyndromeTable) -> int:
    """Decoding failures over a tabulated shot set (exact, order-free)."""
    if graph.num_observables != 1:
        raise DataError("failure counting supports exactly one observable")
    preds = _decode_unique(graph, table.syndromes) & 1
    m = table.syndromes.shape[0]
    return int(table.counts_by_obs[np.arange(m), 1 - preds].sum())


def count_failures_many(graphs, table: SyndromeTable) -> np.ndarray:
    """Failure counts for many weight assignments of one syndrome table.

    Equivalent to ``[count_failures(g, table) for g in graphs]`` but runs the
    matching for every (graph, syndrome) pair in one batch, which is what the
    reward loop needs.
    """
    if not graphs:
        return np.zeros(0, dtype=np.int64)
    for g in graphs:
        if g.num_observables != 1:
            raise DataError("failure counting supports exactly one observable")
    if not _HAVE_NUMBA:
        return np.array([count_failures(g, table) for g in graphs], dtype=np.int64)
    preds = _decode_unique_many(graphs, table.syndromes) & 1
    m = table.syndromes.shape[0]
    return table.counts_by_obs[np.arange(m), 1 - preds].sum(axis=1)


def scaling_flip_rate(dem: DEM, det_bits: np.ndarray, scale: float = 2.0) -> float:
    """Fraction of shots whose prediction changes when every edge probability
    is multiplied by ``scale``.

    Matching decisions depend only on weight ratios, which a global scale
    shifts nonlinearly through w = ln((1-p)/p); this measures how sensitive
    the decoded outcomes actually are to that shift. Purely diagnostic.
    """
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    lo, hi = _WEIGHT_CLAMP
    scaled_edges = tuple(
        Hyperedge(e.detectors, e.observables, float(np.clip(e.probability * scale, lo, hi)))
        for e in dem.hyperedges
    )
    scaled = DEM(
        detectors=dem.detectors,
        hyperedges=scaled_edges,
        num_observables=dem.num_observables,
        edge_families=dem.edge_families,
        data_flips=dem.data_flips,
        num_data=dem.num_data,
    )
    det_bits = np.asarray(det_bits, dtype=np.uint8)
    if det_bits.shape[0] == 0:
        return 0.0
    a = decode_bits(build_matching_graph(dem), det_bits)
    b = decode_bits(build_matching_graph(scaled), det_bits)
    return float(np.any(a != b, axis=1).mean())


# ---------------------------------------------------------------------------
# Single-syndrome decoding (shortest paths only from fired detectors).


def mwpm_decode(
    graph: MatchingGraph, syndrome: np.ndarray, return_cost: bool = False
):
    """Decode one syndrome; returns predicted observable bits (K,).

    With ``return_cost`` also returns the total matched path weight, which
    equals the weight of the most likely error consistent with the syndrome.
    """
    syndrome = np.asarray(syndrome, dtype=np.uint8).ravel()
    if syndrome.shape[0] != graph.num_detectors:
        raise DataError(
            f"syndrome length {syndrome.shape[0]} != {graph.num_detectors} detectors"
        )
    k_obs = graph.num_observables
    fired = np.flatnonzero(syndrome)
    if fired.size == 0:
        bits = np.zeros(k_obs, dtype=np.uint8)
        return (bits, 0.0) if return_cost else bits
    dist, preds = dijkstra(
        graph.csgraph(), directed=False, indices=fired, return_predecessors=True
    )
    W = dist[:, fired]
    b = dist[:, graph.boundary]
    cost, pairing = _solve_matching(W, b)
    mask = 0
    for i, j in enumerate(pairing):
        if j == -1:
            mask ^= _walk_mask(graph, preds[i], fired[i], graph.boundary)
        elif i < j:
            mask ^= _walk_mask(graph, preds[i], fired[i], fired[j])
    bits = np.array([(mask >> j) & 1 for j in range(k_obs)], dtype=np.uint8)
    return (bits, float(cost)) if return_cost else bits


def _walk_mask(graph: MatchingGraph, pred_row: np.ndarray, source: int, target: int) -> int:
    mask = 0
    node = target
    while node != source:
        prev = int(pred_row[node])
        if prev < 0:
            raise DataError("matching infeasible: a fired detector is disconnected")
        mask ^= graph._pair_mask[(min(prev, node), max(prev, node))]
        node = prev
    return mask


def fit_ler_exponential(points) -> float:
    """Per-cycle logical error rate from the decay of round-resolved LERs.

    ``points`` is an iterable of (rounds, LerEstimate). The logical fidelity
    decays as 1 - 2*E_r = A * (1 - 2*eps)^r, so a weighted least-squares line
    through ln(1 - 2*E_r) against r has slope ln(1 - 2*eps). Weights follow
    from binomial variance propagation through the log transform.
    """
    rs: list[float] = []
    gs: list[float] = []
    ws: list[float] = []
    for r, est in points:
        e = est.ler
        if not 0.0 < e < 0.5:
            raise DataError(f"round {r}: LER {e} outside (0, 0.5); cannot take log-fidelity")
        rs.append(float(r))
        gs.append(math.log(1.0 - 2.0 * e))
        var = (2.0 / (1.0 - 2.0 * e)) ** 2 * e * (1.0 - e) / est.shots
        ws.append(1.0 / var)
    if len(set(rs)) < 2:
        raise DataError("need at least two distinct round counts to fit a decay")
    coeffs = np.polyfit(np.array(rs), np.array(gs), 1, w=np.sqrt(ws))
    slope = float(coeffs[0])
    return (1.0 - math.exp(slope)) / 2.0
