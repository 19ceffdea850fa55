"""Outer Newton loop, stepsize rule, two-pass barrier scheme, diagnostics.

The loop alternates: evaluate the barrier objective's derivatives, run the
error-controlled price iteration, form the feasibility-preserving
direction, recover the decrement through the exact finite-round
aggregation, and step. The stepsize is damped (b / (theta + 1)) until the
decrement first drops below the threshold V, after which every step is a
unit step; the switch is permanent.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .auxgraph import build_auxiliary_graph, compute_theta
from .direction import inexact_decrement, kkt_direction, primal_direction
from .errorcontrol import DualControlConfig, run_dual_with_error_control
from .metrics import MessageMetrics
from .model import (
    BarrierProblem,
    Network,
    eval_f,
    eval_grad,
    eval_h,
    eval_hessian_diag,
    feasibility_residual,
    feasible_init,
)
from .splitting import build_dual_graph, spectral_radius, spectral_diagnostics

__all__ = [
    "SolverConfig",
    "TraceRecord",
    "SolveResult",
    "TwoPassResult",
    "DiagnosticsReport",
    "stepsize_rule",
    "newton_solve",
    "reference_solve",
    "reference_optimum",
    "two_pass_solve",
    "phase_diagnostics",
    "write_trace_csv",
    "trace_to_json",
]

FEAS_ASSERT_RTOL = 1e-9


def _default_b(V: float) -> float:
    lo = (V + 1.0) / (2.0 * V + 1.0)
    return 0.5 * (lo + 1.0)


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the distributed solve.

    V is the damped/unit-step switching threshold, b the damping constant
    (must exceed (V+1)/(2V+1) to keep iterates strictly positive), p and
    epsilon the direction-error tolerances, T the stage-1 sweep budget
    (derived from the contraction factor when absent), theta_term the
    outer stopping threshold, and a the relative-error target of the
    two-pass scheme. tau_noise injects a deterministic perturbation into
    the stepsize scalar for robustness experiments; it must respect the
    bound (1/b - 1)(1 + V).
    """

    mu: float = 1.0
    p: float = 1e-3
    epsilon: float = 1e-4
    V: float = 0.12
    b: float | None = None
    T: int | None = None
    theta_term: float = 1e-8
    max_primal_iters: int = 200
    a: float = 0.01
    seed: int = 0
    tau_noise: float = 0.0
    dual_iter_cap: int = 10**6
    dual_warm_start: bool = True
    store_iterates: bool = True
    record_spectra: bool = False

    def __post_init__(self):
        if not 0.0 < self.V < 0.267:
            raise ValueError("V must lie in (0, 0.267)")
        if self.b is None:
            object.__setattr__(self, "b", _default_b(self.V))
        lo = (self.V + 1.0) / (2.0 * self.V + 1.0)
        if not lo < self.b < 1.0:
            raise ValueError(f"b must lie in ({lo:.6f}, 1)")
        if self.mu < 1.0:
            raise ValueError("the solver requires mu >= 1")
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.a <= 0:
            raise ValueError("two-pass target a must be positive")
        tau_cap = (1.0 / self.b - 1.0) * (1.0 + self.V)
        if abs(self.tau_noise) > tau_cap:
            raise ValueError(f"|tau_noise| must not exceed {tau_cap:.6f}")


def stepsize_rule(theta: float, damped_active: bool, V: float, b: float):
    """Stepsize and updated phase flag.

    While the damped phase is alive and theta is at least V, the step is
    b / (theta + 1). The first time theta falls below V the phase latches
    to unit steps for good.
    """
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    if damped_active and theta >= V:
        return b / (theta + 1.0), True
    return 1.0, False


@dataclass
class TraceRecord:
    k: int
    f: float
    h: float
    lambda_tilde: float
    theta: float
    stepsize: float
    phase: str
    dual_iters: int
    consensus_rounds: int
    summation_rounds: int
    min_slack: float
    feas_residual: float
    certificate: object = None
    x: np.ndarray | None = None
    dual_graph: dict | None = None


@dataclass
class SolveResult:
    x: np.ndarray
    trace: list
    converged: bool
    total_dual_iters: int
    metrics: MessageMetrics
    f_final: float
    h_final: float

    @property
    def primal_iters(self) -> int:
        return len(self.trace)


def newton_solve(problem: BarrierProblem, config: SolverConfig) -> SolveResult:
    """Run the distributed inexact method on one barrier problem.

    Every iterate is strictly positive and satisfies flow conservation to
    within the declared tolerance; both are asserted. Terminates when the
    stepsize scalar drops to theta_term after the unit-step switch, or at
    the iteration cap.
    """
    if problem.mu < 1.0:
        raise ValueError("the inexact method needs barrier weight mu >= 1")
    net = problem.network
    S = net.num_sources
    aux = build_auxiliary_graph(net)
    metrics = MessageMetrics()
    metrics.aux_construction_rounds = aux.rounds
    x = feasible_init(net).values.copy()
    w_warm = np.ones(net.num_links)
    damped = True
    trace: list[TraceRecord] = []
    converged = False

    for k in range(config.max_primal_iters):
        g = eval_grad(problem, x)
        H = eval_hessian_diag(problem, x)
        lam1 = spectral_radius(build_dual_graph(net, H))
        # 5% headroom above the measured contraction factor, but never more
        # pessimistic than halving its gap to 1
        F = min(max(1.05 * lam1, 1e-6), 0.5 * (1.0 + lam1), 0.999)
        T = config.T if config.T is not None else max(2, math.ceil(math.log(0.1) / math.log(F)))
        dual_cfg = DualControlConfig(
            T=T, p=config.p, epsilon=config.epsilon, F=F, iter_cap=config.dual_iter_cap
        )
        w, cert = run_dual_with_error_control(net, H, g, dual_cfg, w_warm, metrics)
        direction = primal_direction(net, H, g, w)
        theta, sum_rounds = compute_theta(net, aux, direction.delta, H)
        metrics.summation_rounds += sum_rounds
        if config.tau_noise:
            theta = max(0.0, theta + config.tau_noise * math.cos(float(k)))
        direction.theta = theta
        direction.dual_iters = cert.dual_iters
        direction.certificate = cert
        d, damped_next = stepsize_rule(theta, damped, config.V, config.b)
        phase = "damped" if (damped and damped_next) else "quadratic"
        iter_counts = metrics.snapshot_iteration()
        rec = TraceRecord(
            k=k,
            f=eval_f(problem, x),
            h=eval_h(net, x),
            lambda_tilde=direction.decrement,
            theta=theta,
            stepsize=d,
            phase=phase,
            dual_iters=cert.dual_iters,
            consensus_rounds=iter_counts["consensus_rounds"],
            summation_rounds=sum_rounds,
            min_slack=float(x[S:].min()),
            feas_residual=feasibility_residual(net, x),
            certificate=cert,
            x=x.copy() if config.store_iterates else None,
            dual_graph=(
                spectral_diagnostics(net, H).to_dict() if config.record_spectra else None
            ),
        )
        trace.append(rec)
        damped = damped_next
        if not damped and theta <= config.theta_term:
            converged = True
            break
        x = x + d * direction.delta
        if not np.all(x > 0):
            raise AssertionError(
                "iterate lost strict positivity; stepsize window violated"
            )
        resid = feasibility_residual(net, x)
        if resid > FEAS_ASSERT_RTOL:
            raise AssertionError(f"flow conservation drifted: residual {resid:.3e}")
        if config.dual_warm_start:
            w_warm = w

    return SolveResult(
        x=x,
        trace=trace,
        converged=converged,
        total_dual_iters=metrics.dual_rounds,
        metrics=metrics,
        f_final=eval_f(problem, x),
        h_final=eval_h(net, x),
    )


def reference_solve(
    problem: BarrierProblem,
    x0=None,
    tol: float = 1e-12,
    max_iters: int = 500,
    V: float = 0.12,
    b: float | None = None,
) -> SolveResult:
    """Exact method: dense price solve and exact decrement every step.

    Used as the high-accuracy reference the distributed method is compared
    against; shares the stepsize rule with exact inputs.
    """
    net = problem.network
    b = _default_b(V) if b is None else b
    x = feasible_init(net).values.copy() if x0 is None else np.array(x0, dtype=float)
    damped = True
    trace = []
    converged = False
    for k in range(max_iters):
        g = eval_grad(problem, x)
        H = eval_hessian_diag(problem, x)
        delta, _ = kkt_direction(net, H, g)
        lam = inexact_decrement(delta, H)
        d, damped = stepsize_rule(lam, damped, V, b)
        trace.append((k, eval_f(problem, x), lam, d))
        if lam <= tol:
            converged = True
            break
        x = x + d * delta
        assert np.all(x > 0)
    return SolveResult(
        x=x,
        trace=trace,
        converged=converged,
        total_dual_iters=0,
        metrics=MessageMetrics(),
        f_final=eval_f(problem, x),
        h_final=eval_h(net, x),
    )


def reference_optimum(network: Network, scale_max: float = 1e8):
    """High-accuracy optimum of the capacity-constrained problem itself.

    Follows the central path by raising the utility scale geometrically
    (equivalent to shrinking the barrier weight to 1/scale_max) with warm
    starts, solving each stage with the exact method. Returns (x, h).
    """
    x = feasible_init(network).values.copy()
    scale = 1.0
    while True:
        res = reference_solve(BarrierProblem(network, 1.0, scale), x0=x, tol=1e-10)
        x = res.x
        if scale >= scale_max:
            break
        scale = min(scale * 10.0, scale_max)
    return x, eval_h(network, x)


@dataclass
class TwoPassResult:
    x: np.ndarray
    pass1: SolveResult
    pass2: SolveResult
    scale: float
    shift: float
    h_pass1: float
    h_final: float
    total_dual_iters: int

    def relative_error(self, h_ref: float) -> float:
        """Relative gap to a reference optimum, on the shifted scale the
        guarantee applies to."""
        return (self.h_final - h_ref) / (h_ref + self.shift)

    @property
    def traces(self):
        return self.pass1.trace + self.pass2.trace


def two_pass_solve(
    network: Network, config: SolverConfig, auto_shift: bool = True
) -> TwoPassResult:
    """Bound the barrier-induced utility error by the relative target a.

    The barrier carries one log term per variable, so the utility value at
    the barrier optimum overshoots the constrained optimum by at most
    mu * (S + L). Pass 1, run with the configured barrier weight, turns
    that into a computable lower bound on the optimal value. The negated
    utility is then rescaled by M = (S + L) / (a * (h1 - mu * (S + L)))
    and pass 2 runs with barrier weight 1, which caps the relative utility
    error of its result at a. When the pass-1 value does not admit a
    scale of at least 1 (needed to keep the rescaled objective
    self-concordant), a constant shift of the utility restores one; with
    auto_shift disabled that situation raises instead. The shift never
    changes the chosen rates, only the value the relative target refers
    to, and is recorded on the result.
    """
    nu = network.num_sources + network.num_links
    prob1 = BarrierProblem(network, config.mu, 1.0)
    res1 = newton_solve(prob1, config)
    h1 = eval_h(network, res1.x)
    margin = h1 - config.mu * nu
    if margin > 0 and config.a * margin <= nu:
        shift = 0.0
        scale = nu / (config.a * margin)
    else:
        if not auto_shift:
            raise ValueError(
                f"pass-1 utility margin {margin} does not admit a valid scale; "
                "enable auto_shift"
            )
        # shift the negated utility so the rescale lands exactly at 1
        shift = config.mu * nu + nu / config.a - h1
        scale = 1.0
    prob2 = BarrierProblem(network, 1.0, scale)
    res2 = newton_solve(prob2, config)
    return TwoPassResult(
        x=res2.x,
        pass1=res1,
        pass2=res2,
        scale=scale,
        shift=shift,
        h_pass1=h1,
        h_final=eval_h(network, res2.x),
        total_dual_iters=res1.total_dual_iters + res2.total_dual_iters,
    )


# ---------------------------------------------------------------------------
# convergence-phase diagnostics
# ---------------------------------------------------------------------------


@dataclass
class DiagnosticsReport:
    violations: list
    constants: dict
    assumption_checks: dict
    steps_checked: dict

    @property
    def ok(self) -> bool:
        return not self.violations


def _quad_constants(p: float, epsilon: float, phi: float):
    root = math.sqrt(epsilon)
    gap = 1.0 - p - phi - root
    if gap <= 0:
        return None, None
    xi = (phi * p + root) / gap + (2.0 * phi * root + epsilon) / gap**2
    v = 1.0 / gap**2
    return xi, v


def phase_diagnostics(
    result: SolveResult,
    problem: BarrierProblem,
    config: SolverConfig,
    f_ref: float | None = None,
    phi: float = 0.267,
) -> DiagnosticsReport:
    """Check the per-step guarantees of both convergence phases on a trace.

    Damped steps must decrease the objective by at least the constant the
    (V, b, p, epsilon) window admits; after the unit-step switch the exact
    decrement must contract quadratically up to the error-level offset; and
    once the exact decrement is below 0.68 the objective must be within
    its square of the reference optimum. Iterate snapshots are required.
    Violations are reported, never raised.
    """
    net = problem.network
    p, eps, V, b = config.p, config.epsilon, config.V, config.b
    violations = []
    trace = result.trace
    if any(rec.x is None for rec in trace):
        raise ValueError("phase diagnostics need stored iterates")

    exact = []
    fvals = []
    for rec in trace:
        g = eval_grad(problem, rec.x)
        H = eval_hessian_diag(problem, rec.x)
        delta, _ = kkt_direction(net, H, g)
        exact.append(inexact_decrement(delta, H))
        fvals.append(eval_f(problem, rec.x))

    # damped phase: guaranteed decrease constant
    y_floor = (2.0 * V * b - V + b - 1.0) / b
    eps_cap = ((0.5 - p) * y_floor) ** 2 if p < 0.5 else None
    damped_ok = p < 0.5 and eps_cap is not None and eps < eps_cap
    alpha = None
    decrease_bound = None
    if damped_ok:
        alpha = (0.5 - p - math.sqrt(eps) * b / (2.0 * V * b - V + b - 1.0)) / (1.0 + p)
        decrease_bound = (
            -(2.0 * b - 1.0) * alpha * (1.0 + p) * y_floor**2 / (1.0 + y_floor)
        )
    n_damped = 0
    for idx, rec in enumerate(trace[:-1]):
        if rec.phase != "damped":
            continue
        n_damped += 1
        if damped_ok:
            drop = fvals[idx + 1] - fvals[idx]
            if drop > decrease_bound + 1e-9:
                violations.append(
                    {"kind": "damped_decrease", "k": rec.k, "lhs": drop,
                     "rhs": decrease_bound}
                )
        lam_t = rec.lambda_tilde
        lo = (2.0 * b - 1.0) / (lam_t + 1.0)
        mid = b / (rec.theta + 1.0)
        hi = 1.0 / (lam_t + 1.0)
        if not (lo <= mid * (1 + 1e-12) and mid <= hi * (1 + 1e-12)):
            violations.append(
                {"kind": "stepsize_sandwich", "k": rec.k, "lhs": lo, "mid": mid,
                 "rhs": hi}
            )

    # quadratic phase: contraction of the exact decrement
    xi, v = _quad_constants(p, eps, phi)
    n_quad = 0
    if xi is not None:
        for idx in range(len(trace) - 1):
            if trace[idx].phase != "quadratic":
                continue
            n_quad += 1
            lhs = exact[idx + 1]
            rhs = v * exact[idx] ** 2 + xi
            if lhs > rhs + 1e-9:
                violations.append(
                    {"kind": "quadratic_contraction", "k": trace[idx].k,
                     "lhs": lhs, "rhs": rhs}
                )
    else:
        violations.append(
            {"kind": "invalid_constants", "k": None,
             "lhs": f"1 - p - phi - sqrt(eps) <= 0 for phi={phi}", "rhs": None}
        )

    # suboptimality certificate from the exact decrement
    n_sub = 0
    if f_ref is not None:
        for idx, rec in enumerate(trace):
            if exact[idx] <= 0.68:
                n_sub += 1
                if f_ref < fvals[idx] - exact[idx] ** 2 - 1e-9:
                    violations.append(
                        {"kind": "suboptimality", "k": rec.k,
                         "lhs": f_ref, "rhs": fvals[idx] - exact[idx] ** 2}
                    )

    # error-level relations for the quadratic-phase analysis
    first_quad = next((i for i, r in enumerate(trace) if r.phase == "quadratic"), None)
    tau_bar = 0.0
    theta_bar = trace[first_quad].theta if first_quad is not None else None
    if first_quad is not None:
        tau_bar = abs(trace[first_quad].lambda_tilde - trace[first_quad].theta)
    root = math.sqrt(eps)
    assumption_checks = {
        "entry_below_phi": (
            None
            if theta_bar is None
            else (1.0 + p) * (theta_bar + tau_bar) + root <= phi
        ),
        "contraction_preserves_068": (
            None if xi is None else v * 0.68**2 + xi <= 0.68
        ),
        "decrement_ratio": (0.68 + root) / (1.0 - p) <= 1.0,
        "error_headroom": p + root <= 1.0 - (4.0 * phi**2) ** 0.25 - phi,
    }
    delta_min = None if xi is None else 4.0 * v * xi * (1.0 + v)
    assumption_checks["delta_min"] = delta_min
    assumption_checks["delta_exists"] = delta_min is not None and delta_min < 0.5

    constants = {
        "alpha": alpha,
        "damped_decrease_bound": decrease_bound,
        "xi": xi,
        "v": v,
        "phi": phi,
        "epsilon_cap_for_alpha": eps_cap,
    }
    steps = {"damped": n_damped, "quadratic": n_quad, "suboptimality": n_sub}
    return DiagnosticsReport(violations, constants, assumption_checks, steps)


# ---------------------------------------------------------------------------
# trace output
# ---------------------------------------------------------------------------

TRACE_COLUMNS = [
    "k", "f", "h", "lambda_tilde", "theta", "stepsize", "phase",
    "dual_iters", "consensus_rounds", "min_slack", "feas_residual",
]


def write_trace_csv(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for rec in trace:
            writer.writerow(
                [
                    rec.k,
                    repr(rec.f),
                    repr(rec.h),
                    repr(rec.lambda_tilde),
                    repr(rec.theta),
                    repr(rec.stepsize),
                    rec.phase,
                    rec.dual_iters,
                    rec.consensus_rounds,
                    repr(rec.min_slack),
                    repr(rec.feas_residual),
                ]
            )


def trace_to_json(result: SolveResult, config: SolverConfig | None = None) -> dict:
    doc = {
        "converged": result.converged,
        "primal_iters": result.primal_iters,
        "total_dual_iters": result.total_dual_iters,
        "f_final": result.f_final,
        "h_final": result.h_final,
        "metrics": result.metrics.totals(),
        "trace": [],
    }
    if config is not None:
        doc["config"] = {
            "mu": config.mu, "p": config.p, "epsilon": config.epsilon,
            "V": config.V, "b": config.b, "theta_term": config.theta_term,
            "a": config.a, "seed": config.seed,
        }
    for rec in result.trace:
        row = {
            "k": rec.k,
            "f": rec.f,
            "h": rec.h,
            "lambda_tilde": rec.lambda_tilde,
            "theta": rec.theta,
            "stepsize": rec.stepsize,
            "phase": rec.phase,
            "dual_iters": rec.dual_iters,
            "consensus_rounds": rec.consensus_rounds,
            "summation_rounds": rec.summation_rounds,
            "min_slack": rec.min_slack,
            "feas_residual": rec.feas_residual,
        }
        if rec.certificate is not None:
            row["certificate"] = rec.certificate.to_dict()
        if rec.dual_graph is not None:
            row["dual_graph"] = rec.dual_graph
        doc["trace"].append(row)
    return doc
