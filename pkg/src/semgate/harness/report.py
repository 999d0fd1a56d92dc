from __future__ import annotations

import json
from typing import List, Sequence, Union

from .replay import ReplayReport

Reports = Union[ReplayReport, Sequence[ReplayReport]]


def _as_list(reports: Reports) -> List[ReplayReport]:
    return [reports] if isinstance(reports, ReplayReport) else list(reports)


def render_json(reports: Reports) -> str:
    """JSON array of reports, keys exactly as the ReplayReport fields."""
    return json.dumps([r.to_dict() for r in _as_list(reports)], indent=2) + "\n"


def parse_json(text: str) -> List[ReplayReport]:
    return [ReplayReport.from_dict(d) for d in json.loads(text)]


def _ms(x: float) -> str:
    return f"{x * 1000:.2f}"


def render_table(reports: Reports) -> str:
    """Per-category columns Category / Cache Hit / Positive Hits, plus rates."""
    lines = []
    for r in _as_list(reports):
        rows = [("Category", "Queries", "Cache Hit", "Positive Hits", "API Calls", "Hit Rate", "Positive Rate")]
        for c in r.categories + [r.total]:
            rows.append((
                c.category, str(c.queries), str(c.cache_hits), str(c.positive_hits),
                str(c.api_calls), f"{c.hit_rate:.3f}", f"{c.positive_rate:.3f}",
            ))
        widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
        fmt = lambda row: "  ".join(
            cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(row, widths))
        )
        lines.append(f"threshold {r.threshold:.2f}")
        lines.append(fmt(rows[0]))
        lines.append("  ".join("-" * w for w in widths))
        lines.extend(fmt(row) for row in rows[1:])
        lat = r.cached_latency
        lines.append(f"latency with cache (ms): mean {_ms(lat.mean)}  p50 {_ms(lat.p50)}  p95 {_ms(lat.p95)}")
        if r.uncached_latency is not None:
            u = r.uncached_latency
            lines.append(f"latency without cache (ms): mean {_ms(u.mean)}  p50 {_ms(u.p50)}  p95 {_ms(u.p95)}")
        lines.append(f"upstream calls: {r.upstream_calls}")
        lines.append("")
    return "\n".join(lines)
