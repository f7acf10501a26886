"""Per-iteration run records, CSV serialisation and estimate extraction."""

import csv
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np

from .errors import EmptyTrace

__all__ = ["StepRecord", "RunTrace", "extract_estimate", "write_trace_csv", "read_trace_csv"]

TRACE_HEADER = ("k", "f", "alpha", "accepted", "elapsed_s")


class StepRecord(NamedTuple):
    k: int
    f: float
    alpha: float
    accepted: bool
    elapsed_s: float = 0.0


@dataclass
class RunTrace:
    """Records of one optimiser run.

    ``iterates[i]`` is the iterate after the ``i``-th step. When iterates are
    not stored, a running sum over the planned tail window is kept instead
    (``tail_start`` is the 1-based step index where the window begins).
    """

    records: List[StepRecord] = field(default_factory=list)
    iterates: Optional[List[np.ndarray]] = field(default_factory=list)
    tail_start: Optional[int] = None
    tail_sum: Optional[np.ndarray] = None
    tail_count: int = 0
    truncated: bool = False
    method: str = ""
    state: object = field(default=None, repr=False)

    def __len__(self):
        return len(self.records)

    def append(self, record, x):
        self.records.append(record)
        if self.iterates is not None:
            self.iterates.append(np.array(x, dtype=float, copy=True))
        elif self.tail_start is not None and len(self.records) >= self.tail_start:
            self.tail_sum = x.copy() if self.tail_sum is None else self.tail_sum + x
            self.tail_count += 1

    def column(self, name):
        idx = TRACE_HEADER.index(name)
        return np.array([r[idx] for r in self.records], dtype=float)

    @property
    def f(self):
        return self.column("f")

    @property
    def alpha(self):
        return self.column("alpha")

    @property
    def accepted(self):
        return self.column("accepted").astype(bool)

    @property
    def elapsed(self):
        return self.column("elapsed_s")


def tail_length(total, tail_fraction):
    # round() guards against 0.2 * 3000 = 600.0000000000001
    return max(1, math.ceil(round(tail_fraction * total, 9)))


def extract_estimate(trace, tail_fraction=0.2):
    """Mean of the final ``ceil(tail_fraction * M)`` iterates of a run."""
    if not 0.0 < tail_fraction <= 1.0:
        raise ValueError("tail_fraction must lie in (0, 1]")
    iterates = trace.iterates if isinstance(trace, RunTrace) else trace
    if iterates is None:
        if trace.tail_count == 0:
            raise EmptyTrace("trace holds neither iterates nor a tail average")
        return trace.tail_sum / trace.tail_count
    if len(iterates) == 0:
        raise EmptyTrace("trace has no iterates")
    X = np.asarray(iterates, dtype=float)
    return X[-tail_length(len(X), tail_fraction) :].mean(axis=0)


def _fmt(v):
    return format(float(v), ".17g")


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in trace.records:
            w.writerow([int(r.k), _fmt(r.f), _fmt(r.alpha), int(bool(r.accepted)), _fmt(r.elapsed_s)])


def read_trace_csv(path):
    trace = RunTrace(iterates=None)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            trace.records.append(
                StepRecord(
                    int(row["k"]),
                    float(row["f"]),
                    float(row["alpha"]),
                    bool(int(row["accepted"])),
                    float(row["elapsed_s"]),
                )
            )
    return trace
