"""Minimal aggregation query language over metrics reports.

Grammar:  FUNC(metric) [where key=value]
with FUNC one of avg, min, max, sum, p50, p95, p99. ``where`` filters on
report tags (or the protocol name). Metrics: throughput, wall_time,
wire_puts, and <op>_count / <op>_failures / <op>_latency_{mean,p50,p95,p99}
for op in get, put, amplified_insert.
"""

from __future__ import annotations

from ..errors import QueryError
from .runner import MetricsReport

FUNCS = ("avg", "min", "max", "sum", "p50", "p95", "p99")
OPS = ("get", "put", "amplified_insert")


def _percentile(values: list[float], q: int) -> float:
    ordered = sorted(values)
    idx = max(0, -(-q * len(ordered) // 100) - 1)
    return ordered[idx]


def _apply(func: str, values: list[float]) -> float:
    if func == "avg":
        return sum(values) / len(values)
    if func == "min":
        return min(values)
    if func == "max":
        return max(values)
    if func == "sum":
        return sum(values)
    return _percentile(values, int(func[1:]))


def _metric(report: MetricsReport, name: str, offset: int) -> float:
    if name == "throughput":
        return report.throughput_ops_s
    if name == "wall_time":
        return report.wall_time_us
    if name == "wire_puts":
        return report.wire_puts
    for op in OPS:
        if name.startswith(op + "_"):
            summary = report.ops.get(op)
            if summary is None:
                raise QueryError(f"report has no op {op!r}", offset)
            suffix = name[len(op) + 1 :]
            if suffix == "count":
                return summary.count
            if suffix == "failures":
                return summary.failures
            if suffix == "latency_mean":
                return summary.mean_us
            if suffix in ("latency_p50", "latency_p95", "latency_p99"):
                return getattr(summary, f"p{suffix[-2:]}_us")
            break
    raise QueryError(f"unknown metric {name!r}", offset)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, message: str):
        raise QueryError(message, self.pos)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def ident(self) -> tuple[str, int]:
        start = self.pos
        while self.pos < len(self.text) and (
            self.text[self.pos].isalnum() or self.text[self.pos] in "_."
        ):
            self.pos += 1
        if self.pos == start:
            self.error("expected identifier")
        return self.text[start : self.pos], start

    def expect(self, ch: str):
        if self.pos >= len(self.text) or self.text[self.pos] != ch:
            self.error(f"expected {ch!r}")
        self.pos += 1

    def parse(self) -> tuple[str, str, int, tuple[str, str] | None]:
        self.skip_ws()
        func, func_at = self.ident()
        if func not in FUNCS:
            raise QueryError(f"unknown function {func!r}", func_at)
        self.expect("(")
        metric, metric_at = self.ident()
        self.expect(")")
        self.skip_ws()
        condition = None
        if self.pos < len(self.text):
            word, at = self.ident()
            if word != "where":
                raise QueryError(f"expected 'where', got {word!r}", at)
            self.skip_ws()
            key, _ = self.ident()
            self.skip_ws()
            self.expect("=")
            self.skip_ws()
            value, _ = self.ident()
            condition = (key, value)
            self.skip_ws()
            if self.pos < len(self.text):
                self.error("trailing characters")
        return func, metric, metric_at, condition


def aggregate(reports: list[MetricsReport], query: str) -> float:
    """Evaluate one query across a set of reports."""
    func, metric, metric_at, condition = _Parser(query).parse()
    selected = []
    for report in reports:
        if condition is not None:
            key, value = condition
            actual = report.protocol if key == "protocol" else report.tags.get(key)
            if actual != value:
                continue
        selected.append(report)
    if not selected:
        raise QueryError("no reports match the where clause")
    values = [_metric(r, metric, metric_at) for r in selected]
    return _apply(func, values)
