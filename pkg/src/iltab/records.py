"""Metric streams emitted by learners and their CSV serialization.

Per-run CSV schema: header ``step,seed,agent,metric,value``; aggregate
schema: ``step,metric,mean,std``.  UTF-8, LF line endings, full-precision
floats (repr round-trip).  Joint (non-per-agent) metrics carry agent -1;
aggregation folds the agent index into the metric name so aggregate rows
are keyed by (step, metric) alone.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np


@dataclass
class RunRecord:
    """Ordered (step, agent, metric, value) events for one seeded run."""

    seed: int
    events: list[tuple[int, int, str, float]] = field(default_factory=list)

    def add(self, step: int, agent: int, metric: str, value: float) -> None:
        self.events.append((int(step), int(agent), str(metric), float(value)))


def _fmt(x: float) -> str:
    return repr(float(x))


def write_run_csv(path: str, records: list[RunRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("step,seed,agent,metric,value\n")
        for rec in sorted(records, key=lambda r: r.seed):
            for step, agent, metric, value in rec.events:
                f.write(f"{step},{rec.seed},{agent},{metric},{_fmt(value)}\n")


def _metric_key(agent: int, metric: str) -> str:
    return metric if agent < 0 else f"{metric}[{agent}]"


def aggregate(records: list[RunRecord]) -> list[tuple[int, str, float, float]]:
    """Mean and (population) std across runs per (step, metric).

    Depends only on the set of records, not their order.
    """
    buckets: dict[tuple[int, str], list[float]] = defaultdict(list)
    for rec in sorted(records, key=lambda r: r.seed):
        for step, agent, metric, value in rec.events:
            buckets[(step, _metric_key(agent, metric))].append(value)
    out = []
    for (step, metric) in sorted(buckets):
        vals = np.array(buckets[(step, metric)])
        out.append((step, metric, float(vals.mean()), float(vals.std())))
    return out


def write_aggregate_csv(path: str, rows: list[tuple[int, str, float, float]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("step,metric,mean,std\n")
        for step, metric, mean, std in rows:
            f.write(f"{step},{metric},{_fmt(mean)},{_fmt(std)}\n")
