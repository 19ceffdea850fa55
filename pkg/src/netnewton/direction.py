"""Primal Newton directions and decrements.

The working direction is assembled in two stages so that flow conservation
survives an inexact price vector: rates move against the gradient plus
route price, and each link's slack absorbs exactly the rate change routed
through it. A dense saddle-system solve is kept alongside as the oracle
for exactness tests and for the reference method.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Network
from .splitting import solve_dual_exact

__all__ = [
    "NewtonDirection",
    "kkt_direction",
    "primal_direction",
    "exact_decrement",
    "inexact_decrement",
]


@dataclass
class NewtonDirection:
    """Feasibility-preserving direction with its curvature norm.

    delta stacks the rate part and the slack part; decrement is
    sqrt(delta' H delta). theta is the stepsize-rule scalar (equal to the
    decrement when the exact finite-round aggregation computes it), and
    the remaining fields record how the supporting price solve went.
    """

    delta: np.ndarray
    decrement: float
    theta: float | None = None
    dual_iters: int = 0
    certificate: object = None


def kkt_direction(network: Network, hessian_diag, grad):
    """Dense oracle for the full saddle system.

    Solves for the exact direction and multipliers by block elimination:
    prices from the reduced system, then delta = -H^-1 (grad + A' w).
    Asserts the assembled saddle-system residual before returning.
    """
    H = np.asarray(hessian_diag, dtype=float)
    g = np.asarray(grad, dtype=float)
    A = network.incidence
    w = solve_dual_exact(network, H, g)
    delta = -(g + A.T @ w) / H
    top = np.abs(H * delta + A.T @ w + g).max()
    bottom = np.abs(A @ delta).max()
    scale = max(np.abs(g).max(), 1.0)
    assert top <= 1e-8 * scale and bottom <= 1e-8 * scale, "saddle residual too large"
    return delta, w


def primal_direction(network: Network, hessian_diag, grad, w) -> NewtonDirection:
    """Two-stage direction for an arbitrary price vector w.

    Rates:  delta_s[i] = -(grad_i + route price of i) / H_ii
    Slacks: delta_y    = -routing @ delta_s

    The slack stage zeroes A @ delta identically, so every stepsize keeps
    the iterate on the flow-conservation manifold regardless of how far w
    is from the exact prices.
    """
    H = np.asarray(hessian_diag, dtype=float)
    g = np.asarray(grad, dtype=float)
    S = network.num_sources
    pi = network.routing.T @ np.asarray(w, dtype=float)
    delta_s = -(g[:S] + pi) / H[:S]
    delta_y = -(network.routing @ delta_s)
    delta = np.concatenate([delta_s, delta_y])
    return NewtonDirection(delta=delta, decrement=inexact_decrement(delta, H))


def inexact_decrement(delta, hessian_diag) -> float:
    """Curvature norm sqrt(sum_i delta_i^2 H_ii) of a direction."""
    d = np.asarray(delta, dtype=float)
    H = np.asarray(hessian_diag, dtype=float)
    return float(np.sqrt(np.sum(d * d * H)))


def exact_decrement(network: Network, hessian_diag, grad) -> float:
    """Decrement of the dense-oracle direction; diagnostic use only."""
    delta, _ = kkt_direction(network, hessian_diag, grad)
    return inexact_decrement(delta, hessian_diag)
