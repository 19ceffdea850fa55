"""Exact finite-round aggregation of the squared decrement.

Sources and links can only exchange route aggregates, so summing one
number per participant without over-counting needs care: a link crossed
by several sources would be added once per source. The fix is an offline
companion graph on the sources, built by a signalling sweep over the real
network, that records for each link an ownership set theta_l of sources.
Once built, S synchronous rounds of two local update rules leave the
global sum at every source and every link.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .model import InvalidNetworkError, Network

__all__ = [
    "AuxiliaryGraph",
    "SummationRun",
    "build_auxiliary_graph",
    "distributed_sum",
    "compute_theta",
]


@dataclass(frozen=True)
class AuxiliaryGraph:
    """Companion graph over sources with link-labelled edges.

    theta[l] is the ordered ownership set of link l (insertion order of the
    construction). edges holds (i, j, label) with i < j. l_star is the set
    of links whose ownership set has more than one source; l_star_of[i]
    restricts it to the links owning source i.
    """

    num_sources: int
    theta: tuple
    edges: tuple
    rounds: int

    @cached_property
    def l_star(self) -> frozenset:
        return frozenset(l for l, owners in enumerate(self.theta) if len(owners) > 1)

    @cached_property
    def l_star_of(self) -> tuple:
        return tuple(
            frozenset(l for l in self.l_star if i in self.theta[l])
            for i in range(self.num_sources)
        )

    @cached_property
    def neighbors(self) -> tuple:
        nbrs = [set() for _ in range(self.num_sources)]
        for i, j, _ in self.edges:
            nbrs[i].add(j)
            nbrs[j].add(i)
        return tuple(frozenset(n) for n in nbrs)

    @cached_property
    def diameter(self) -> int:
        """Longest shortest path between two sources (0 for a single node)."""
        best = 0
        for start in range(self.num_sources):
            dist = {start: 0}
            frontier = [start]
            while frontier:
                nxt = []
                for u in frontier:
                    for v in self.neighbors[u]:
                        if v not in dist:
                            dist[v] = dist[u] + 1
                            nxt.append(v)
                frontier = nxt
            best = max(best, max(dist.values()))
        return best

    def neighborhood(self, i: int, hops: int) -> frozenset:
        """Sources within the given number of edges of source i."""
        seen = {i}
        frontier = {i}
        for _ in range(hops):
            frontier = {v for u in frontier for v in self.neighbors[u]} - seen
            if not frontier:
                break
            seen |= frontier
        return frozenset(seen)

    def to_dict(self) -> dict:
        return {
            "theta": [list(t) for t in self.theta],
            "edges": [[i, j, l] for i, j, l in self.edges],
            "l_star": sorted(self.l_star),
            "rounds": self.rounds,
        }


_CANONICAL_CACHE: "weakref.WeakKeyDictionary[Network, AuxiliaryGraph]" = (
    weakref.WeakKeyDictionary()
)


def build_auxiliary_graph(network: Network, first_grey: int = 0) -> AuxiliaryGraph:
    """Simulate the signalling construction and return the companion graph.

    One source starts grey and stamps its index on every link of its route.
    Each round, a white source that sees any stamped link on its route turns
    grey and emits two signals along its route in traversal order: a label
    signal that stamps every still-empty link (smallest index wins when
    several arrive in the same round), and a neighbor signal that is
    absorbed by the first link already stamped at the start of the round,
    where it connects the new source to all current owners. Simultaneous
    absorptions at one link are applied in ascending source index, so the
    owners end up pairwise connected. Runs exactly S - 1 rounds.

    The graph only depends on the topology, so the canonical choice
    (first_grey = 0) is cached per network.
    """
    if first_grey == 0 and network in _CANONICAL_CACHE:
        return _CANONICAL_CACHE[network]
    S = network.num_sources
    L = network.num_links
    theta = [[] for _ in range(L)]
    edges = {}
    grey = [False] * S

    def add_edge(i, j, label):
        key = (min(i, j), max(i, j))
        if key in edges:
            raise AssertionError(f"duplicate companion edge {key}")
        edges[key] = label

    grey[first_grey] = True
    for l in network.routes[first_grey]:
        theta[l].append(first_grey)

    for _ in range(S - 1):
        theta_size = [len(t) for t in theta]  # state at the start of the round
        newly_grey = [
            i
            for i in range(S)
            if not grey[i] and sum(theta_size[l] for l in network.routes[i]) > 0
        ]
        # label signals: stamp every link that was empty at the round start;
        # the smallest concurrent source index wins
        claims = {}
        for i in newly_grey:
            for l in network.routes[i]:
                if theta_size[l] == 0:
                    claims.setdefault(l, i)
                    claims[l] = min(claims[l], i)
        # neighbor signals: absorbed at the first link of the route that was
        # non-empty at the round start, joining the new source to its owners
        absorbed = {}
        for i in newly_grey:
            for l in network.routes[i]:
                if theta_size[l] > 0:
                    absorbed.setdefault(l, []).append(i)
                    break
        for l, arrivals in absorbed.items():
            for i in sorted(arrivals):
                for j in theta[l]:
                    add_edge(i, j, l)
                theta[l].append(i)
        for l, i in claims.items():
            theta[l].append(i)
        for i in newly_grey:
            grey[i] = True

    if not all(grey):
        raise InvalidNetworkError(
            "some sources were never reached; shared-flow structure disconnected"
        )
    aux = AuxiliaryGraph(
        num_sources=S,
        theta=tuple(tuple(t) for t in theta),
        edges=tuple((i, j, l) for (i, j), l in sorted(edges.items())),
        rounds=S - 1,
    )
    if first_grey == 0:
        _CANONICAL_CACHE[network] = aux
    return aux


@dataclass(frozen=True)
class SummationRun:
    """Round-by-round history of the aggregation.

    y_hist[t, i] and z_hist[t, l] are the values after round t; y_final and
    z_final are the terminal values (everyone holds the global sum).
    """

    y_hist: np.ndarray
    z_hist: np.ndarray
    rounds: int

    @property
    def y_final(self) -> np.ndarray:
        return self.y_hist[-1]

    @property
    def z_final(self) -> np.ndarray:
        return self.z_hist[-1]


def distributed_sum(
    network: Network, aux: AuxiliaryGraph, y_star, z_star, rounds: int | None = None
) -> SummationRun:
    """Run S synchronous rounds of the two-rule aggregation.

    Inputs are one number per source (y_star) and one per link (z_star,
    already divided by the link's crossing count). Every source seeds
    itself with its own value plus its route's link values; each round,
    links fold in their owners' values and sources fold in their owning
    links' values, subtracting the over-counted previous state. After S
    rounds every participant holds

        sum_i y_star_i + sum_l |S(l)| * z_star_l.

    rounds overrides the default S; passing the companion graph's
    diameter plus one is enough when that value is known.
    """
    S, L = network.num_sources, network.num_links
    ys = np.asarray(y_star, dtype=float)
    zs = np.asarray(z_star, dtype=float)
    if ys.shape != (S,) or zs.shape != (L,):
        raise ValueError("inputs must be one value per source and per link")
    y = ys + np.array([sum(zs[l] for l in network.routes[i]) for i in range(S)])
    z = np.zeros(L)
    y_hist, z_hist = [y.copy()], [z.copy()]
    for _ in range(rounds if rounds is not None else S):
        z_new = np.empty(L)
        for l in range(L):
            owners = aux.theta[l]
            z_new[l] = sum(y[i] for i in owners) - (len(owners) - 1) * z[l]
        y_new = np.empty(S)
        for i in range(S):
            owning = aux.l_star_of[i]
            y_new[i] = sum(z_new[l] for l in owning) - (len(owning) - 1) * y[i]
        y, z = y_new, z_new
        y_hist.append(y.copy())
        z_hist.append(z.copy())
    return SummationRun(np.array(y_hist), np.array(z_hist), rounds=len(y_hist) - 1)


def compute_theta(network: Network, aux: AuxiliaryGraph, delta, hessian_diag):
    """Stepsize scalar: the decrement recovered from the aggregation.

    Feeds the squared, curvature-weighted direction entries through
    distributed_sum and takes the square root of the common value. With
    this path the stepsize scalar equals the decrement exactly (up to
    float roundoff), so the decrement-approximation error is zero.

    Returns (theta, rounds).
    """
    H = np.asarray(hessian_diag, dtype=float)
    d = np.asarray(delta, dtype=float)
    S = network.num_sources
    y_star = d[:S] ** 2 * H[:S]
    counts = network.routing.sum(axis=1)
    z_star = d[S:] ** 2 * H[S:] / counts
    run = distributed_sum(network, aux, y_star, z_star)
    total = run.y_final[0]
    spread = np.abs(
        np.concatenate([run.y_final, run.z_final]) - total
    ).max()
    assert spread <= 1e-9 * max(abs(total), 1.0), "aggregation values disagree"
    assert total >= -1e-12, "squared decrement came out negative"
    return float(np.sqrt(max(total, 0.0))), run.rounds
