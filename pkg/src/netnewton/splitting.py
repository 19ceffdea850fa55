"""Price (dual) computation by matrix splitting.

The dual system (A H^-1 A') w = -A H^-1 grad is solved iteratively by
splitting A H^-1 A' into a diagonal part D + Bbar and a remainder
B - Bbar, where B is the off-diagonal coupling and Bbar its row sums.
The resulting fixed-point iteration only moves information between each
link and the sources crossing it, which is what makes it implementable
with route-aggregate message exchange. The same module carries the dense
direct solve used as an oracle, and spectral diagnostics of the link
coupling graph that governs the iteration's convergence rate.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
import scipy.linalg

from .model import Network

__all__ = [
    "SplittingData",
    "DualState",
    "DualGraph",
    "SpectralReport",
    "build_splitting",
    "dual_step_matrix",
    "init_dual_state",
    "dual_step_distributed",
    "solve_dual_exact",
    "build_dual_graph",
    "spectral_radius",
    "weighted_max_cut",
    "spectral_diagnostics",
]

MAX_CUT_ENUM_LIMIT = 20


@dataclass(frozen=True)
class SplittingData:
    """Split pieces of A H^-1 A' at a fixed primal point.

    dk:   diagonal of A H^-1 A' (strictly positive),
    bk:   off-diagonal part, symmetric and elementwise nonnegative,
    bbar: row sums of bk,
    rhs:  -A H^-1 grad, the right-hand side of the dual system.
    """

    dk: np.ndarray
    bk: np.ndarray
    bbar: np.ndarray
    rhs: np.ndarray

    @cached_property
    def denom(self) -> np.ndarray:
        """Diagonal of D + Bbar, the invertible half of the split."""
        return self.dk + self.bbar


def build_splitting(network: Network, hessian_diag, grad) -> SplittingData:
    H = np.asarray(hessian_diag, dtype=float)
    g = np.asarray(grad, dtype=float)
    L, S = network.num_links, network.num_sources
    if H.shape != (S + L,) or g.shape != (S + L,):
        raise ValueError("hessian_diag and grad must have length S + L")
    if np.any(H <= 0):
        raise ValueError("hessian diagonal must be strictly positive")
    A = network.incidence
    G = (A * (1.0 / H)) @ A.T
    dk = np.diag(G).copy()
    bk = G - np.diag(dk)
    bbar = bk.sum(axis=1)
    rhs = -(A * (1.0 / H)) @ g

    # D + 2 Bbar - B must be strictly diagonally dominant with a positive
    # diagonal; this is what guarantees the iteration matrix is a contraction.
    qk_diag = dk + 2.0 * bbar
    off = bbar  # row sums of |off-diagonal of Q| equal bbar
    if not np.all(qk_diag > off):
        raise AssertionError("splitting lost strict diagonal dominance")
    return SplittingData(dk=dk, bk=bk, bbar=bbar, rhs=rhs)


def dual_step_matrix(split: SplittingData, w) -> np.ndarray:
    """One fixed-point sweep of the price iteration in matrix form."""
    w = np.asarray(w, dtype=float)
    return ((split.bbar * w - split.bk @ w) + split.rhs) / split.denom


def solve_dual_exact(network: Network, hessian_diag, grad) -> np.ndarray:
    """Dense solve of the dual system via Cholesky; the fixed-point oracle."""
    H = np.asarray(hessian_diag, dtype=float)
    g = np.asarray(grad, dtype=float)
    A = network.incidence
    G = (A * (1.0 / H)) @ A.T
    rhs = -(A * (1.0 / H)) @ g
    c, low = scipy.linalg.cho_factor(G)
    w = scipy.linalg.cho_solve((c, low), rhs)
    resid = np.abs(G @ w - rhs).max()
    scale = max(np.abs(rhs).max(), 1.0)
    assert resid <= 1e-10 * scale, f"dual solve residual {resid:.3e} too large"
    return w


# ---------------------------------------------------------------------------
# per-link form of the iteration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DualState:
    """Prices plus the route aggregates each participant would hold.

    route_price[i]     = sum of w over the links of source i,
    weighted_price[i]  = route_price[i] / H_ii,
    weighted_price0[i] = the same aggregate computed with all-ones prices
                         (refreshed once per primal iteration, since it
                         depends on the current Hessian).
    """

    w: np.ndarray
    t: int
    route_price: np.ndarray
    weighted_price: np.ndarray
    weighted_price0: np.ndarray


def _route_aggregates(network: Network, hessian_diag, w):
    pi = network.routing.T @ np.asarray(w, dtype=float)
    big_pi = pi / np.asarray(hessian_diag, dtype=float)[: network.num_sources]
    return pi, big_pi


def init_dual_state(network: Network, hessian_diag, w_init) -> DualState:
    """Run the initialization exchange: aggregate the all-ones price along
    every route, scale by the local inverse Hessian, then install the
    starting prices w_init."""
    ones = np.ones(network.num_links)
    _, big_pi0 = _route_aggregates(network, hessian_diag, ones)
    w = np.array(w_init, dtype=float)
    pi, big_pi = _route_aggregates(network, hessian_diag, w)
    return DualState(
        w=w, t=0, route_price=pi, weighted_price=big_pi, weighted_price0=big_pi0
    )


def dual_step_distributed(
    network: Network, hessian_diag, grad, state: DualState
) -> DualState:
    """One price sweep computed link by link from route aggregates only.

    Each link l sees: its own slack curvature and gradient entry, and the
    sums over the sources crossing it of 1/H_ii, of the weighted route
    prices (current and all-ones), and of the scaled gradient entries.
    Numerically identical to dual_step_matrix.
    """
    H = np.asarray(hessian_diag, dtype=float)
    g = np.asarray(grad, dtype=float)
    S, L = network.num_sources, network.num_links
    if state.weighted_price0 is None:
        raise ValueError("dual state missing the all-ones price aggregate")
    hinv_src = 1.0 / H[:S]
    new_w = np.empty(L)
    for l in range(L):
        crossing = network.link_sources[l]
        hinv_slack = 1.0 / H[S + l]
        sum_pi0 = sum(state.weighted_price0[i] for i in crossing)
        sum_hinv = sum(hinv_src[i] for i in crossing)
        sum_pit = sum(state.weighted_price[i] for i in crossing)
        sum_hg = sum(hinv_src[i] * g[i] for i in crossing)
        wl = state.w[l]
        new_w[l] = (
            (sum_pi0 - sum_hinv) * wl
            - sum_pit
            + sum_hinv * wl
            - sum_hg
            - hinv_slack * g[S + l]
        ) / (hinv_slack + sum_pi0)
    pi, big_pi = _route_aggregates(network, H, new_w)
    return replace(
        state, w=new_w, t=state.t + 1, route_price=pi, weighted_price=big_pi
    )


# ---------------------------------------------------------------------------
# spectral diagnostics of the link coupling graph
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DualGraph:
    """Directed weighted graph on links; an edge means two links share a flow.

    weights[i, j] = bk[i, j] / denom[i]; iteration_matrix is the weighted
    Laplacian (out-degree matrix minus weights) whose spectral radius is
    the contraction factor of the price iteration.
    """

    weights: np.ndarray
    iteration_matrix: np.ndarray
    denom: np.ndarray

    @property
    def out_degrees(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    @cached_property
    def adjacency(self) -> np.ndarray:
        return self.weights + self.weights.T > 0


def build_dual_graph(network: Network, hessian_diag, grad=None) -> DualGraph:
    g = np.zeros(network.num_sources + network.num_links) if grad is None else grad
    split = build_splitting(network, hessian_diag, g)
    weights = split.bk / split.denom[:, None]
    m = (np.diag(split.bbar) - split.bk) / split.denom[:, None]
    return DualGraph(weights=weights, iteration_matrix=m, denom=split.denom.copy())


def spectral_radius(graph: DualGraph) -> float:
    """Largest-magnitude eigenvalue of the iteration matrix.

    Computed on the symmetrized similar matrix for numerical stability;
    asserts the contraction property (< 1) that the splitting guarantees.
    """
    scale = np.sqrt(graph.denom)
    sym = graph.iteration_matrix * scale[:, None] / scale[None, :]
    sym = 0.5 * (sym + sym.T)
    eigs = scipy.linalg.eigvalsh(sym)
    lam1 = float(np.abs(eigs).max())
    assert lam1 < 1.0 + 1e-12, f"price iteration is not a contraction: {lam1}"
    return lam1


def weighted_max_cut(graph: DualGraph) -> float:
    """Exact maximum over node subsets of the weight crossing the cut,
    counting both directions. Exhaustive enumeration, so only sensible for
    small graphs; node 0 is pinned to one side by symmetry."""
    both = graph.weights + graph.weights.T
    L = both.shape[0]
    if L > MAX_CUT_ENUM_LIMIT:
        raise ValueError(f"max-cut enumeration limited to {MAX_CUT_ENUM_LIMIT} links")
    if L == 1:
        return 0.0
    best = 0.0
    n_free = L - 1
    batch = 1 << min(n_free, 16)
    free_bits = np.arange(n_free)
    for start in range(0, 1 << n_free, batch):
        masks = np.arange(start, min(start + batch, 1 << n_free), dtype=np.int64)
        # membership matrix over the free nodes 1..L-1; node 0 stays out
        member = np.zeros((len(masks), L), dtype=float)
        member[:, 1:] = (masks[:, None] >> free_bits[None, :]) & 1
        crossing = ((member @ both) * (1.0 - member)).sum(axis=1)
        best = max(best, float(crossing.max()))
    return best


@dataclass(frozen=True)
class SpectralReport:
    lambda1: float
    upper_bound: float
    max_out_degree: float
    lower_bound: float | None = None
    max_cut: float | None = None

    def to_dict(self) -> dict:
        return {
            "lambda1": self.lambda1,
            "lower": self.lower_bound,
            "upper": self.upper_bound,
            "max_cut": self.max_cut,
            "max_out_degree": self.max_out_degree,
        }


def spectral_diagnostics(
    network: Network, hessian_diag, max_cut_limit: int = MAX_CUT_ENUM_LIMIT
) -> SpectralReport:
    """Contraction factor of the price iteration with its graph bounds.

    The upper bound (twice the largest weighted out-degree, capped at 1)
    always holds. The cut-based lower bound 4 * mc / L is reported whenever
    the exact cut enumeration is affordable; it is a useful congestion
    indicator but is not a guaranteed bound on every instance.
    """
    graph = build_dual_graph(network, hessian_diag)
    lam1 = spectral_radius(graph)
    max_deg = float(graph.out_degrees.max())
    upper = min(2.0 * max_deg, 1.0)
    if network.num_links <= max_cut_limit:
        mc = weighted_max_cut(graph)
        lower = 4.0 * mc / network.num_links
        return SpectralReport(lam1, upper, max_deg, lower, mc)
    return SpectralReport(lam1, upper, max_deg)
