"""Drop, latency, outlier and thread-activity diagnostics.

Everything here reports; nothing mutates.  Latency statistics use
nearest-rank percentiles so every reported value is an observed sample.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from math import ceil

from msgflow.events import MessageKey
from msgflow.flowgraph import FlowGraph, _scan
from msgflow.ingest import EventLog

__all__ = [
    "DropReport",
    "EdgeStats",
    "Interval",
    "Outlier",
    "SubscriptionDrops",
    "ThreadTimeline",
    "detect_drops",
    "detect_outliers",
    "latency_stats",
    "thread_states",
]

DEFAULT_TAIL_NS = 1_000_000_000


@dataclass(frozen=True)
class SubscriptionDrops:
    sub: str
    topic: str
    node: str
    dropped: tuple[MessageKey, ...]
    in_flight: tuple[MessageKey, ...]
    published: int

    @property
    def drop_count(self) -> int:
        return len(self.dropped)

    @property
    def drop_rate(self) -> float:
        return len(self.dropped) / self.published if self.published else 0.0


@dataclass(frozen=True)
class DropReport:
    subscriptions: tuple[SubscriptionDrops, ...]
    tail_window_ns: int

    @property
    def total_dropped(self) -> int:
        return sum(s.drop_count for s in self.subscriptions)


def detect_drops(graph: FlowGraph, tail_window_ns: int = DEFAULT_TAIL_NS) -> DropReport:
    """Same-topic publishes that never reached a subscription.

    A missing delivery close to the end of the trace may simply still be
    in flight, so publishes within ``tail_window_ns`` of the last event
    are reported separately instead of as drops.
    """
    horizon = graph.span[1] - tail_window_ns
    published_by_topic: dict[str, int] = {}
    for msg in graph.messages.values():
        published_by_topic[msg.topic] = published_by_topic.get(msg.topic, 0) + 1
    out = []
    topo = graph.topology
    for sub in sorted(graph.unmatched):
        missing = graph.unmatched[sub]
        dropped = tuple(k for k in missing if graph.messages[k].publish_t <= horizon)
        in_flight = tuple(k for k in missing if graph.messages[k].publish_t > horizon)
        decl = topo.subscriptions.get(sub) if topo else None
        topic = decl.topic if decl else ""
        out.append(
            SubscriptionDrops(
                sub=sub,
                topic=topic,
                node=decl.node if decl else "",
                dropped=dropped,
                in_flight=in_flight,
                published=published_by_topic.get(topic, 0),
            )
        )
    return DropReport(subscriptions=tuple(out), tail_window_ns=tail_window_ns)


@dataclass(frozen=True)
class EdgeStats:
    publisher: str
    subscription: str
    topic: str
    pub_node: str
    sub_node: str
    count: int
    min_ns: int
    p50_ns: int
    p95_ns: int
    p99_ns: int
    max_ns: int
    mean_ns: float


def _nearest_rank(ordered: list[int], q: float) -> int:
    idx = max(ceil(q / 100.0 * len(ordered)), 1) - 1
    return ordered[idx]


def latency_stats(
    graph: FlowGraph, topic: str | None = None, node: str | None = None
) -> list[EdgeStats]:
    """Order statistics of transport latency per (publisher, subscription).

    ``topic`` filters by topic name and ``node`` by the receiving node.
    Percentiles are nearest-rank, so min <= p50 <= p95 <= p99 <= max and
    each value is a sample that actually occurred.
    """
    groups: dict[tuple[str, str], list[int]] = {}
    for edge in graph.transport_edges:
        cb = graph.callbacks[edge.cb]
        groups.setdefault((edge.key.pub, cb.sub), []).append(edge.latency_ns)
    topo = graph.topology
    out = []
    for (pub, sub), values in groups.items():
        pub_decl = topo.publishers.get(pub) if topo else None
        sub_decl = topo.subscriptions.get(sub) if topo else None
        edge_topic = pub_decl.topic if pub_decl else ""
        sub_node = sub_decl.node if sub_decl else ""
        if topic is not None and edge_topic != topic:
            continue
        if node is not None and sub_node != node:
            continue
        values.sort()
        out.append(
            EdgeStats(
                publisher=pub,
                subscription=sub,
                topic=edge_topic,
                pub_node=pub_decl.node if pub_decl else "",
                sub_node=sub_node,
                count=len(values),
                min_ns=values[0],
                p50_ns=_nearest_rank(values, 50),
                p95_ns=_nearest_rank(values, 95),
                p99_ns=_nearest_rank(values, 99),
                max_ns=values[-1],
                mean_ns=sum(values) / len(values),
            )
        )
    out.sort(key=lambda s: (s.topic, s.publisher, s.subscription))
    return out


@dataclass(frozen=True)
class Outlier:
    sub: str
    node: str
    cb: str
    start_ns: int
    duration_ns: int
    median_ns: float

    @property
    def factor(self) -> float:
        return self.duration_ns / self.median_ns if self.median_ns else float("inf")


def detect_outliers(logd: EventLog, k: float = 5.0) -> list[Outlier]:
    """Completed callbacks running longer than ``k`` times their
    subscription's median duration.

    Subscriptions with fewer than five completed callbacks are skipped:
    a median over less data flags noise, not outliers.
    """
    s = _scan(logd)
    per_sub: dict[str, list] = {}
    for cb in s.callbacks.values():
        if cb.end_t is not None:
            per_sub.setdefault(cb.sub, []).append(cb)
    out: list[Outlier] = []
    for sub, cbs in per_sub.items():
        if len(cbs) < 5:
            continue
        median = float(statistics.median(c.duration for c in cbs))
        for cb in cbs:
            if cb.duration > k * median:
                out.append(
                    Outlier(
                        sub=sub,
                        node=cb.node,
                        cb=cb.cb,
                        start_ns=cb.start_t,
                        duration_ns=cb.duration,
                        median_ns=median,
                    )
                )
    out.sort(key=lambda o: (o.sub, o.start_ns, o.cb))
    return out


@dataclass(frozen=True, slots=True)
class Interval:
    state: str  # active | idle
    start_ns: int
    end_ns: int

    @property
    def duration_ns(self) -> int:
        return self.end_ns - self.start_ns


@dataclass(frozen=True)
class ThreadTimeline:
    host: str
    pid: int
    tid: int
    node: str
    first_ns: int
    last_ns: int
    intervals: tuple[Interval, ...]
    merged_overlaps: int

    @property
    def active_ns(self) -> int:
        return sum(i.duration_ns for i in self.intervals if i.state == "active")

    @property
    def duty(self) -> float:
        span = self.last_ns - self.first_ns
        return self.active_ns / span if span else 0.0


def thread_states(logd: EventLog) -> list[ThreadTimeline]:
    """Active/idle tiling of each thread's observed lifespan.

    A thread is active while inside any callback; nested or overlapping
    callback intervals merge into one active stretch and are counted in
    ``merged_overlaps``.  A callback with no observed end stays active
    until the thread's last event.  The intervals tile [first, last]
    exactly, zero-length stretches omitted.
    """
    spans: dict[tuple[str, int, int], list[int]] = {}
    declared: dict[tuple[str, int, int], str] = {}
    for ev in logd.events:
        key = (ev.host, ev.pid, ev.tid)
        span = spans.get(key)
        if span is None:
            spans[key] = [ev.t, ev.t]
        else:
            span[0] = min(span[0], ev.t)
            span[1] = max(span[1], ev.t)
        if key not in declared and ev.kind in ("node_init", "pub_init", "sub_init"):
            declared[key] = ev["node"]
            # other threads of the process belong to the same node
            declared.setdefault((ev.host, ev.pid), ev["node"])

    s = _scan(logd)
    cbs_by_thread: dict[tuple[str, int, int], list] = {}
    for cb in s.callbacks.values():
        cbs_by_thread.setdefault((cb.host, cb.pid, cb.tid), []).append(cb)

    out = []
    for key in sorted(spans):
        first, last = spans[key]
        cbs = sorted(
            cbs_by_thread.get(key, []), key=lambda c: (c.start_t, c.cb)
        )
        raw = [
            (c.start_t, c.end_t if c.end_t is not None else last) for c in cbs
        ]
        merged: list[list[int]] = []
        overlaps = 0
        for start, end in raw:
            if merged and start <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], end)
                overlaps += 1
            else:
                merged.append([start, end])
        intervals: list[Interval] = []
        cursor = first
        for start, end in merged:
            if start > cursor:
                intervals.append(Interval("idle", cursor, start))
            if end > start:
                intervals.append(Interval("active", start, end))
            cursor = max(cursor, end)
        if last > cursor:
            intervals.append(Interval("idle", cursor, last))
        node = cbs[0].node if cbs else declared.get(key) or declared.get(key[:2], "")
        out.append(
            ThreadTimeline(
                host=key[0],
                pid=key[1],
                tid=key[2],
                node=node,
                first_ns=first,
                last_ns=last,
                intervals=tuple(intervals),
                merged_overlaps=overlaps,
            )
        )
    return out
