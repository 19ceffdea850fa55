"""Two-stage termination test for the price iteration.

The direction error a truncated price iteration induces must stay inside
the tolerance  gamma' H gamma <= p^2 * delta' H delta + epsilon.  Both
stages reduce to quantities each participant already holds (route
aggregates, local curvature) plus a max over the network, which a
max-consensus pass provides. Stage 1 runs a fixed budget of sweeps and
accepts when the certified relative error is within p. Otherwise stage 2
derives a sup-norm threshold on consecutive price changes that caps the
remaining absolute error by epsilon, and iterates until it is met.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Network
from .metrics import MessageMetrics
from .splitting import (
    build_splitting,
    dual_step_matrix,
    init_dual_state,
)

__all__ = [
    "ErrorCertificate",
    "DualControlConfig",
    "stage1_beta",
    "stage2_h",
    "max_consensus",
    "run_dual_with_error_control",
]

_TINY_PRICE = 1e-14


@dataclass(frozen=True)
class ErrorCertificate:
    """Record of how a price solve was accepted.

    stage 1 acceptance means beta >= 1 (relative test alone suffices for
    any epsilon); stage 2 acceptance means consecutive prices moved less
    than h_threshold in sup norm. dual_iters counts the sweeps spent.
    """

    stage: int
    beta: float
    h_threshold: float | None
    dual_iters: int
    F: float
    T: int

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "beta": None if np.isinf(self.beta) else self.beta,
            "h_threshold": self.h_threshold,
            "dual_iters": self.dual_iters,
            "F": self.F,
            "T": self.T,
        }


@dataclass(frozen=True)
class DualControlConfig:
    T: int
    p: float
    epsilon: float
    F: float
    iter_cap: int = 10**6

    def __post_init__(self):
        if not 0 < self.F < 1:
            raise ValueError("F must lie in (0, 1)")
        if not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.T < 1:
            raise ValueError("stage-1 budget T must be at least 1")


def stage1_beta(network, hessian_diag, w_t, w_t1, big_pi0, big_pi_t, F, p) -> float:
    """Certified squared relative-error margin for the prices w_t.

    Per source:  rho_i = sqrt(L) * Pi0_i * ||w_t1 - w_t||_inf / ((1-F) |Pi_t_i|)
    Per link:    the same with both aggregates summed over crossing sources.

    A vanished denominator means the route price carries no information,
    so the ratio is treated as infinite (forcing more sweeps). Returns
    beta = (max rho / p)^-2, infinite when the prices did not move.
    """
    L = network.num_links
    diff = float(np.abs(np.asarray(w_t1) - np.asarray(w_t)).max())
    if diff == 0.0:
        return float("inf")
    amp = np.sqrt(L) * diff / (1.0 - F)

    pi0 = np.asarray(big_pi0, dtype=float)
    pit = np.asarray(big_pi_t, dtype=float)
    num_link = network.routing @ pi0
    den_link = np.abs(network.routing @ pit)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho_src = np.where(np.abs(pit) < _TINY_PRICE, np.inf, amp * pi0 / np.abs(pit))
        rho_link = np.where(den_link < _TINY_PRICE, np.inf, amp * num_link / den_link)

    worst = max(float(rho_src.max()), float(rho_link.max()))
    if worst == 0.0:
        return float("inf")
    return float((worst / p) ** -2)


def stage2_h(network, hessian_diag, big_pi0, pi0, beta, epsilon, F) -> float:
    """Sup-norm threshold on consecutive price changes for stage 2.

    Valid for beta in (0, 1); meeting ||w(t+1) - w(t)||_inf <= h certifies
    gamma' H gamma <= epsilon / (1 - beta). Shrinks like sqrt(epsilon).
    """
    if not 0.0 < beta < 1.0:
        raise ValueError("stage 2 applies only when beta is in (0, 1)")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    H = np.asarray(hessian_diag, dtype=float)
    S, L = network.num_sources, network.num_links
    c = np.sqrt(epsilon / ((1.0 - beta) * (L + S) * L)) * (1.0 - F)
    h_src = c / (np.asarray(pi0, dtype=float) * H[:S] ** -0.5)
    h_link = c / (np.sqrt(H[S:]) * (network.routing @ np.asarray(big_pi0, dtype=float)))
    return float(min(h_src.min(), h_link.min()))


def max_consensus(values, neighbors, rounds: int | None = None):
    """Iterated neighborhood maximum; returns (values, rounds used).

    Every node replaces its value with the max over itself and its
    neighbors each round, until nothing changes (or for the given number
    of rounds). On a connected graph the result is the global maximum
    everywhere within diameter-many rounds; a disconnected graph raises.
    """
    v = np.array(values, dtype=float)
    n = len(v)
    if len(neighbors) != n:
        raise ValueError("one neighbor set per node required")
    limit = rounds if rounds is not None else n
    used = 0
    for _ in range(limit):
        new = v.copy()
        for i in range(n):
            for j in neighbors[i]:
                if v[j] > new[i]:
                    new[i] = v[j]
        used += 1
        if np.array_equal(new, v):
            used -= 1  # a no-op sweep carries no new information
            break
        v = new
    if rounds is None and not np.all(v == v.max()):
        raise ValueError("max consensus did not reach agreement; graph disconnected?")
    return v, used


def run_dual_with_error_control(
    network: Network,
    hessian_diag,
    grad,
    cfg: DualControlConfig,
    warm_start_w=None,
    metrics: MessageMetrics | None = None,
):
    """Iterate prices until the direction-error tolerance is certified.

    Stage 1 performs T sweeps from the warm start and evaluates the
    relative test on the last pair (the accepted prices are the
    second-to-last iterate, whose error the final sweep measures). If
    beta < 1, stage 2 fixes the change threshold h from that beta and
    keeps sweeping until consecutive prices move less than h. Acceptance
    re-evaluates beta at the terminal pair; if it certifies less than the
    beta used to derive h, the threshold is tightened and iteration
    continues, so the returned pair always satisfies both stage bounds
    together.

    Returns (accepted prices, ErrorCertificate).
    """
    H = np.asarray(hessian_diag, dtype=float)
    g = np.asarray(grad, dtype=float)
    S = network.num_sources
    split = build_splitting(network, H, g)
    if warm_start_w is None:
        warm_start_w = np.ones(network.num_links)
    state = init_dual_state(network, H, warm_start_w)
    big_pi0 = state.weighted_price0
    pi0 = network.routing.T @ np.ones(network.num_links)
    if metrics is not None:
        metrics.count_init_exchange(S)
    diam = network.comm_diameter

    hinv_src = 1.0 / H[:S]

    def weighted_price(w):
        return hinv_src * (network.routing.T @ w)

    def consensus_cost(times=1):
        if metrics is not None:
            for _ in range(times):
                metrics.count_consensus(diam)

    w_prev = np.array(warm_start_w, dtype=float)
    w_cur = dual_step_matrix(split, w_prev)
    steps = 1
    if metrics is not None:
        metrics.count_dual_round(S)
    for _ in range(cfg.T - 1):
        w_prev, w_cur = w_cur, dual_step_matrix(split, w_cur)
        steps += 1
        if metrics is not None:
            metrics.count_dual_round(S)

    beta = stage1_beta(
        network, H, w_prev, w_cur, big_pi0, weighted_price(w_prev), cfg.F, cfg.p
    )
    consensus_cost(2)  # one pass for the price change, one for beta

    if beta >= 1.0:
        cert = ErrorCertificate(
            stage=1, beta=beta, h_threshold=None, dual_iters=steps, F=cfg.F, T=cfg.T
        )
        return w_prev, cert

    h = stage2_h(network, H, big_pi0, pi0, beta, cfg.epsilon, cfg.F)
    consensus_cost(1)  # agreeing on the threshold h
    while True:
        w_prev, w_cur = w_cur, dual_step_matrix(split, w_cur)
        steps += 1
        if metrics is not None:
            metrics.count_dual_round(S)
        consensus_cost(1)  # per-sweep price-change maximum
        if steps > cfg.iter_cap:
            raise RuntimeError(
                "price iteration exceeded the cap; F may underestimate the "
                "contraction factor"
            )
        if np.abs(w_cur - w_prev).max() <= h:
            beta_final = stage1_beta(
                network, H, w_prev, w_cur, big_pi0, weighted_price(w_prev),
                cfg.F, cfg.p,
            )
            consensus_cost(1)
            if beta_final >= 1.0:
                cert = ErrorCertificate(
                    stage=1, beta=beta_final, h_threshold=h, dual_iters=steps,
                    F=cfg.F, T=cfg.T,
                )
                return w_prev, cert
            if beta_final >= beta:
                # both certified bounds hold at w_prev with the tighter beta
                cert = ErrorCertificate(
                    stage=2, beta=beta, h_threshold=h, dual_iters=steps,
                    F=cfg.F, T=cfg.T,
                )
                return w_prev, cert
            # the terminal pair certifies a weaker margin than h assumed;
            # tighten the threshold and keep sweeping
            beta = beta_final
            h = stage2_h(network, H, big_pi0, pi0, beta, cfg.epsilon, cfg.F)
            consensus_cost(1)
