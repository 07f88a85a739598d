"""Static SVG timelines, DOT graphs, and text reports.

All output is deterministic: identical inputs produce identical bytes.
Coordinates are formatted with two decimals and elements are emitted in
sorted order, never in dict-iteration order of runtime objects.

In timeline SVGs the only ``<rect>`` elements are completed callback
executions, so rectangle count equals completed callbacks inside the
window (an element is inside the window when all its timestamps are).
Axes, lane separators and arrows are ``<line>`` elements; publish
instants are ``<circle>`` marks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from msgflow.analysis import Breakdown, MessageFlow
from msgflow.diagnostics import latency_stats, thread_states
from msgflow.errors import MsgflowError
from msgflow.events import MessageKey
from msgflow.flowgraph import FlowGraph, build_flow_graph
from msgflow.ingest import EventLog

__all__ = [
    "TimelineSpec",
    "flow_graph_dot",
    "render_report",
    "render_thread_view",
    "render_timeline",
]

PALETTE = (
    "#1f77b4",
    "#d62728",
    "#9467bd",
    "#8c564b",
    "#e377c2",
    "#17becf",
    "#bcbd22",
    "#7f7f7f",
)
ACTIVE_COLOR = "#2ca02c"
IDLE_COLOR = "#ff7f0e"
DIM = "0.25"

_W = 1000.0
_ML, _MR, _MT, _MB = 190.0, 25.0, 34.0, 16.0
_ROW = 34.0
_RECT = 16.0


@dataclass(frozen=True)
class TimelineSpec:
    """Lane selection, window, optional highlighted flow and color overrides."""

    rows: tuple[tuple[str, str], ...] | None = None  # (node, topic) lanes
    window: tuple[int, int] | None = None
    flow: MessageFlow | None = None
    colors: Mapping[str, str] | None = None  # node id -> fill color


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _header(height: float) -> list[str]:
    return [
        '<svg xmlns="http://www.w3.org/2000/svg" '
        f'width="{_fmt(_W)}" height="{_fmt(height)}" '
        f'viewBox="0 0 {_fmt(_W)} {_fmt(height)}" font-family="monospace" font-size="11">',
        "<defs>",
        '<marker id="at" markerWidth="7" markerHeight="7" refX="6" refY="3" orient="auto">'
        '<path d="M0,0 L6,3 L0,6 z" fill="#000000"/></marker>',
        '<marker id="ac" markerWidth="7" markerHeight="7" refX="6" refY="3" orient="auto">'
        '<path d="M0,0 L6,3 L0,6 z" fill="#888888"/></marker>',
        "</defs>",
    ]


def _axis(parts: list[str], t0: int, t1: int, height: float) -> None:
    span = max(t1 - t0, 1)
    for i in range(7):
        t = t0 + span * i // 6
        x = _ML + (_W - _ML - _MR) * (t - t0) / span
        parts.append(
            f'<line x1="{_fmt(x)}" y1="{_fmt(_MT - 4)}" x2="{_fmt(x)}" '
            f'y2="{_fmt(height - _MB)}" stroke="#dddddd"/>'
        )
        parts.append(
            f'<text x="{_fmt(x)}" y="{_fmt(_MT - 8)}" text-anchor="middle">'
            f"{(t - t0) / 1e6:.1f}ms</text>"
        )


def _lane_frame(parts: list[str], labels: list[str], height: float) -> None:
    for i, label in enumerate(labels):
        y = _MT + i * _ROW
        parts.append(
            f'<line x1="{_fmt(_ML)}" y1="{_fmt(y)}" x2="{_fmt(_W - _MR)}" '
            f'y2="{_fmt(y)}" stroke="#eeeeee"/>'
        )
        parts.append(
            f'<text x="{_fmt(_ML - 6)}" y="{_fmt(y + _ROW / 2 + 4)}" '
            f'text-anchor="end">{_esc(label)}</text>'
        )
    parts.append(
        f'<line x1="{_fmt(_ML)}" y1="{_fmt(_MT)}" x2="{_fmt(_ML)}" '
        f'y2="{_fmt(height - _MB)}" stroke="#333333"/>'
    )


def _node_display(graph: FlowGraph, node_id: str) -> str:
    topo = graph.topology
    if topo is not None and node_id in topo.nodes and topo.nodes[node_id].name:
        return topo.nodes[node_id].name
    return node_id


def _default_rows(graph: FlowGraph) -> list[tuple[str, str]]:
    """One lane per (node, topic) endpoint, hosts then node name then topic."""
    seen: dict[tuple[str, str], tuple[str, str, str]] = {}
    topo = graph.topology
    if topo is not None:
        for pub in topo.publishers.values():
            host = topo.nodes[pub.node].host if pub.node in topo.nodes else ""
            seen.setdefault((pub.node, pub.topic), (host, _node_display(graph, pub.node), pub.topic))
        for sub in topo.subscriptions.values():
            host = topo.nodes[sub.node].host if sub.node in topo.nodes else ""
            seen.setdefault((sub.node, sub.topic), (host, _node_display(graph, sub.node), sub.topic))
    for inst in graph.messages.values():
        seen.setdefault((inst.node, inst.topic), (inst.host, _node_display(graph, inst.node), inst.topic))
    for inst in graph.callbacks.values():
        seen.setdefault((inst.node, inst.topic), (inst.host, _node_display(graph, inst.node), inst.topic))
    return [lane for lane, _ in sorted(seen.items(), key=lambda kv: (kv[1], kv[0]))]


def render_timeline(
    logd: EventLog,
    spec: TimelineSpec | None = None,
    graph: FlowGraph | None = None,
) -> str:
    spec = spec or TimelineSpec()
    if graph is None:
        graph = build_flow_graph(logd)
    if spec.window is not None:
        t0, t1 = spec.window
        if t0 >= t1:
            raise MsgflowError(f"empty render window: [{t0}, {t1}]")
    else:
        t0, t1 = logd.span
        t1 = max(t1, t0 + 1)  # a degenerate span still gets its axes

    rows = list(spec.rows) if spec.rows is not None else _default_rows(graph)
    known = set(_default_rows(graph))
    for lane in rows:
        if lane not in known:
            raise MsgflowError(f"unknown timeline lane {lane[0]}/{lane[1]}")
    lane_index = {lane: i for i, lane in enumerate(rows)}
    labels = [f"{_node_display(graph, node)} : {topic}" for node, topic in rows]

    height = _MT + max(len(rows), 1) * _ROW + _MB
    span = max(t1 - t0, 1)

    def x_of(t: int) -> float:
        return _ML + (_W - _ML - _MR) * (t - t0) / span

    def lane_mid(lane: tuple[str, str]) -> float | None:
        i = lane_index.get(lane)
        return None if i is None else _MT + i * _ROW + _ROW / 2

    flow = spec.flow
    in_flow_msg = (lambda k: k in flow.graph.messages) if flow else (lambda k: True)
    in_flow_cb = (lambda c: c in flow.graph.callbacks) if flow else (lambda c: True)

    def opacity(member: bool) -> str:
        return "1" if (flow is None or member) else DIM

    colors = dict(spec.colors or {})
    node_order = sorted({node for node, _ in rows})
    for i, node in enumerate(node_order):
        colors.setdefault(node, PALETTE[i % len(PALETTE)])

    parts = _header(height)
    _axis(parts, t0, t1, height)
    _lane_frame(parts, labels, height)

    # publish instants
    for key in sorted(graph.messages):
        inst = graph.messages[key]
        if not (t0 <= inst.publish_t <= t1):
            continue
        y = lane_mid((inst.node, inst.topic))
        if y is None:
            continue
        parts.append(
            f'<circle class="pub" cx="{_fmt(x_of(inst.publish_t))}" cy="{_fmt(y)}" r="3" '
            f'fill="{colors.get(inst.node, PALETTE[0])}" fill-opacity="{opacity(in_flow_msg(key))}"/>'
        )

    # completed callback executions: the only rect elements in the document
    for cb_id in sorted(graph.callbacks):
        inst = graph.callbacks[cb_id]
        if inst.end_t is None or inst.start_t < t0 or inst.end_t > t1:
            continue
        y = lane_mid((inst.node, inst.topic))
        if y is None:
            continue
        x = x_of(inst.start_t)
        width = max(x_of(inst.end_t) - x, 0.75)
        parts.append(
            f'<rect class="cb" x="{_fmt(x)}" y="{_fmt(y - _RECT / 2)}" '
            f'width="{_fmt(width)}" height="{_fmt(_RECT)}" '
            f'fill="{colors.get(inst.node, PALETTE[0])}" '
            f'fill-opacity="{opacity(in_flow_cb(cb_id))}"/>'
        )

    # transport arrows: publish instant -> callback start
    for edge in sorted(graph.transport_edges, key=lambda e: (e.key, e.cb)):
        msg = graph.messages[edge.key]
        cb = graph.callbacks[edge.cb]
        if not (t0 <= msg.publish_t <= t1 and t0 <= cb.start_t <= t1):
            continue
        y1 = lane_mid((msg.node, msg.topic))
        y2 = lane_mid((cb.node, cb.topic))
        if y1 is None or y2 is None:
            continue
        member = in_flow_msg(edge.key) and in_flow_cb(edge.cb)
        parts.append(
            f'<line class="transport" x1="{_fmt(x_of(msg.publish_t))}" y1="{_fmt(y1)}" '
            f'x2="{_fmt(x_of(cb.start_t))}" y2="{_fmt(y2)}" stroke="#000000" '
            f'stroke-opacity="{opacity(member)}" marker-end="url(#at)"/>'
        )

    # causal arrows: producing callback -> published message
    for edge in sorted(graph.causal_edges, key=lambda e: (e.cb, e.key)):
        cb = graph.callbacks[edge.cb]
        msg = graph.messages[edge.key]
        anchor = msg.publish_t if cb.end_t is None else min(msg.publish_t, cb.end_t)
        if not (t0 <= anchor <= t1 and t0 <= msg.publish_t <= t1):
            continue
        y1 = lane_mid((cb.node, cb.topic))
        y2 = lane_mid((msg.node, msg.topic))
        if y1 is None or y2 is None:
            continue
        member = in_flow_msg(edge.key) and in_flow_cb(edge.cb)
        parts.append(
            f'<line class="causal" x1="{_fmt(x_of(anchor))}" y1="{_fmt(y1)}" '
            f'x2="{_fmt(x_of(msg.publish_t))}" y2="{_fmt(y2)}" stroke="#888888" '
            f'stroke-opacity="{opacity(member)}" stroke-dasharray="4,3" marker-end="url(#ac)"/>'
        )

    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_thread_view(logd: EventLog, window: tuple[int, int] | None = None) -> str:
    """Per-thread activity lanes: green while in a callback, orange otherwise."""
    timelines = thread_states(logd)
    if window is not None:
        t0, t1 = window
        if t0 >= t1:
            raise MsgflowError(f"empty render window: [{t0}, {t1}]")
    else:
        t0, t1 = logd.span
        t1 = max(t1, t0 + 1)
    span = t1 - t0

    height = _MT + max(len(timelines), 1) * _ROW + _MB

    def x_of(t: int) -> float:
        return _ML + (_W - _ML - _MR) * (t - t0) / span

    labels = []
    for tl in timelines:
        name = tl.node or "?"
        labels.append(f"{tl.host} {name} pid={tl.pid}")

    parts = _header(height)
    _axis(parts, t0, t1, height)
    _lane_frame(parts, labels, height)

    for i, tl in enumerate(timelines):
        y = _MT + i * _ROW + _ROW / 2
        for interval in tl.intervals:
            lo = max(interval.start_ns, t0)
            hi = min(interval.end_ns, t1)
            if lo >= hi:
                continue
            x = x_of(lo)
            width = max(x_of(hi) - x, 0.5)
            color = ACTIVE_COLOR if interval.state == "active" else IDLE_COLOR
            parts.append(
                f'<rect class="{interval.state}" x="{_fmt(x)}" y="{_fmt(y - _RECT / 2)}" '
                f'width="{_fmt(width)}" height="{_fmt(_RECT)}" fill="{color}"/>'
            )

    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_report(breakdown: Breakdown) -> str:
    """Fixed-width text table: label, time in ms, percent, then a total row."""
    rows = [(row.label, row.time_ns / 1e6, row.percent) for row in breakdown.rows]
    rows.append(("total", breakdown.total_ns / 1e6, 100.0 if breakdown.rows else 0.0))
    label_w = max([len(label) for label, _, _ in rows] + [len("segment")])
    lines = [f"{'segment':<{label_w}} {'time_ms':>10} {'percent':>8}"]
    for label, ms, pct in rows:
        lines.append(f"{label:<{label_w}} {ms:>10.1f} {pct:>8.1f}")
    return "\n".join(lines) + "\n"


def flow_graph_dot(graph: FlowGraph) -> str:
    """Aggregate endpoint graph in DOT: vertices "topic@node", edges in ms."""
    lines = ["digraph msgflow {", "  rankdir=LR;"]
    topo = graph.topology
    endpoints: dict[str, str] = {}

    def declare(endpoint: str, node: str, topic: str) -> None:
        endpoints[endpoint] = f"{topic}@{_node_display(graph, node)}"

    if topo is not None:
        for pub in topo.publishers.values():
            declare(pub.id, pub.node, pub.topic)
        for sub in topo.subscriptions.values():
            declare(sub.id, sub.node, sub.topic)
    for inst in graph.messages.values():
        declare(inst.key.pub, inst.node, inst.topic)
    for inst in graph.callbacks.values():
        declare(inst.sub, inst.node, inst.topic)

    for endpoint in sorted(endpoints):
        lines.append(f'  "{endpoint}" [label="{endpoints[endpoint]}"];')
    for stats in latency_stats(graph):
        lines.append(
            f'  "{stats.publisher}" -> "{stats.subscription}" '
            f'[label="{stats.mean_ns / 1e6:.1f} ms"];'
        )
    produced: dict[tuple[str, str], int] = {}
    for edge in graph.causal_edges:
        cb = graph.callbacks.get(edge.cb)
        if cb is None:
            continue
        produced[(cb.sub, edge.key.pub)] = produced.get((cb.sub, edge.key.pub), 0) + 1
    for (sub, pub), count in sorted(produced.items()):
        lines.append(f'  "{sub}" -> "{pub}" [style=dashed, label="n={count}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
