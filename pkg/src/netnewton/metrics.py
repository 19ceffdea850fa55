"""Round-synchronous bookkeeping for the message exchange.

Counts what a real deployment would transmit: per dual sweep, one
aggregate feedback to each source and one scaled push from each source to
its route; consensus and aggregation rounds are tracked separately since
the headline iteration count excludes them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

__all__ = ["MessageMetrics"]


@dataclass
class MessageMetrics:
    dual_rounds: int = 0
    init_pushes: int = 0
    init_feedbacks: int = 0
    dual_pushes: int = 0
    dual_feedbacks: int = 0
    consensus_execs: int = 0
    consensus_rounds: int = 0
    summation_rounds: int = 0
    aux_construction_rounds: int = 0
    per_iteration: list = field(default_factory=list)

    def count_dual_round(self, num_sources: int) -> None:
        self.dual_rounds += 1
        self.dual_feedbacks += num_sources
        self.dual_pushes += num_sources

    def count_init_exchange(self, num_sources: int) -> None:
        # local Hessian/gradient push, all-ones feedback, scaled price push
        self.init_pushes += 2 * num_sources
        self.init_feedbacks += num_sources

    def count_consensus(self, rounds: int) -> None:
        self.consensus_execs += 1
        self.consensus_rounds += rounds

    def totals(self) -> dict:
        return {
            "dual_rounds": self.dual_rounds,
            "init_pushes": self.init_pushes,
            "init_feedbacks": self.init_feedbacks,
            "dual_pushes": self.dual_pushes,
            "dual_feedbacks": self.dual_feedbacks,
            "consensus_execs": self.consensus_execs,
            "consensus_rounds": self.consensus_rounds,
            "summation_rounds": self.summation_rounds,
            "aux_construction_rounds": self.aux_construction_rounds,
        }

    def snapshot_iteration(self) -> dict:
        """Record the totals delta since the previous snapshot."""
        now = self.totals()
        if self.per_iteration:
            base = self.per_iteration[-1]["cumulative"]
        else:
            base = {k: 0 for k in now}
        delta = {k: now[k] - base[k] for k in now}
        self.per_iteration.append({"delta": delta, "cumulative": now})
        return delta
