"""Flow extraction, critical paths and latency breakdowns.

A flow is the subgraph reachable from one message, forward (everything
it caused) or backward (everything that led to it).  The critical path
of a flow is the source-to-sink chain that explains its end-to-end wall
time: it starts at the flow's earliest root publish, ends at the sink
with the greatest end time, and is tiled by segments so that segment
durations are disjoint and sum exactly to the total.

Segment kinds:

* ``transport``: publish to callback start (network plus middleware
  handling), labeled with the topic;
* ``processing``: callback start up to the publish it causes (or the
  callback end for the terminal callback), labeled with the node;
* ``wait``: the gap between a callback's end and a later annotated
  publish (outputs handed off and published after the callback
  returned), labeled with the node.

Processing is truncated at the causal publish on purpose: work a
callback does after publishing is not on the path to that output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from msgflow.errors import GraphError, UnknownMessageError
from msgflow.events import MessageKey
from msgflow.flowgraph import (
    CallbackInstance,
    CausalEdge,
    FlowGraph,
    GraphDiagnostics,
    TransportEdge,
)

__all__ = [
    "Breakdown",
    "BreakdownRow",
    "CriticalPath",
    "MessageFlow",
    "Segment",
    "TRANSPORT_ROW",
    "backward_flow",
    "breakdown",
    "critical_path",
    "forward_flow",
]

TRANSPORT_ROW = "Network Latency + Message Handling"


@dataclass(frozen=True, slots=True)
class Segment:
    kind: str  # transport | processing | wait
    label: str
    start_ns: int
    end_ns: int

    @property
    def duration_ns(self) -> int:
        return self.end_ns - self.start_ns


@dataclass(frozen=True)
class CriticalPath:
    segments: tuple[Segment, ...]
    total_ns: int
    source: MessageKey
    sink: str
    # alternating message keys and callback ids from source to sink
    chain: tuple[MessageKey | str, ...]

    @property
    def total_ms(self) -> float:
        return self.total_ns / 1e6


@dataclass(frozen=True, slots=True)
class BreakdownRow:
    label: str
    time_ns: int
    percent: float

    @property
    def time_ms(self) -> float:
        return self.time_ns / 1e6


@dataclass(frozen=True)
class Breakdown:
    rows: tuple[BreakdownRow, ...]
    total_ns: int

    @property
    def total_ms(self) -> float:
        return self.total_ns / 1e6


@dataclass(frozen=True)
class MessageFlow:
    root: MessageKey
    direction: str  # fwd | bwd
    graph: FlowGraph

    @property
    def messages(self) -> dict[MessageKey, object]:
        return self.graph.messages

    @property
    def callbacks(self) -> dict[str, CallbackInstance]:
        return self.graph.callbacks


def _restrict(graph: FlowGraph, key: MessageKey, backward: bool) -> FlowGraph:
    if key not in graph.messages:
        raise UnknownMessageError(f"unknown message {key}")
    mask = graph.reachable(key, backward=backward).tolist()
    midx = graph._message_index
    cidx = graph._callback_index
    messages = [m for k, m in graph.messages.items() if mask[midx[k]]]
    callbacks = [c for cb, c in graph.callbacks.items() if mask[cidx[cb]]]
    transport = [
        e for e in graph.transport_edges if mask[midx[e.key]] and mask[cidx[e.cb]]
    ]
    causal = [e for e in graph.causal_edges if mask[cidx[e.cb]] and mask[midx[e.key]]]
    return FlowGraph.from_parts(
        messages,
        callbacks,
        transport,
        causal,
        diagnostics=GraphDiagnostics(),
        span=graph.span,
        topology=graph.topology,
    )


def forward_flow(graph: FlowGraph, key: MessageKey) -> MessageFlow:
    """Everything the message led to, including itself."""
    return MessageFlow(key, "fwd", _restrict(graph, key, backward=False))


def backward_flow(graph: FlowGraph, key: MessageKey) -> MessageFlow:
    """Everything that led to the message, including itself."""
    return MessageFlow(key, "bwd", _restrict(graph, key, backward=True))


# ---------------------------------------------------------------------------
# critical path


def _node_name(graph: FlowGraph, cb: CallbackInstance) -> str:
    topo = graph.topology
    if topo is not None and cb.node in topo.nodes and topo.nodes[cb.node].name:
        return topo.nodes[cb.node].name
    return cb.node or cb.sub or cb.cb


def _topic_label(graph: FlowGraph, key: MessageKey) -> str:
    msg = graph.messages[key]
    return msg.topic or key.pub


def _sink_time(graph: FlowGraph, index: int) -> int:
    if index < len(graph.messages):
        return graph.messages[graph._message_order[index]].publish_t
    cb = graph.callbacks[graph._callback_order[index - len(graph.messages)]]
    return cb.start_t if cb.end_t is None else cb.end_t


def _edge_labels(
    graph: FlowGraph, u: int, v: int
) -> tuple[str, ...]:
    """Labels of the segments a step u -> v contributes, in path order."""
    n_msg = len(graph.messages)
    if u < n_msg:
        return (_topic_label(graph, graph._message_order[u]),)
    cb = graph.callbacks[graph._callback_order[u - n_msg]]
    msg = graph.messages[graph._message_order[v]]
    name = _node_name(graph, cb)
    if cb.end_t is not None and msg.publish_t > cb.end_t:
        return (name, name)  # processing then hand-off wait
    return (name,)


def _edge_segments(graph: FlowGraph, u: int, v: int) -> list[Segment]:
    n_msg = len(graph.messages)
    if u < n_msg:
        key = graph._message_order[u]
        msg = graph.messages[key]
        cb = graph.callbacks[graph._callback_order[v - n_msg]]
        return [Segment("transport", _topic_label(graph, key), msg.publish_t, cb.start_t)]
    cb = graph.callbacks[graph._callback_order[u - n_msg]]
    msg = graph.messages[graph._message_order[v]]
    name = _node_name(graph, cb)
    if cb.end_t is not None and msg.publish_t > cb.end_t:
        return [
            Segment("processing", name, cb.start_t, cb.end_t),
            Segment("wait", name, cb.end_t, msg.publish_t),
        ]
    return [Segment("processing", name, cb.start_t, msg.publish_t)]


def critical_path(flow: MessageFlow) -> CriticalPath:
    """The chain that accounts for the flow's end-to-end wall time.

    The source is the flow's earliest root publish and the sink is the
    reachable end with the greatest end time (callback end, or publish
    time for a final publish).  Chains tied on total are broken by
    fewest segments, then lexicographic segment labels.
    """
    graph = flow.graph
    if not graph.messages:
        raise GraphError("flow contains no messages")
    n_msg = len(graph.messages)
    n = graph.node_count

    indptr, indices = graph._forward_csr
    ptr = indptr.tolist()
    nbr = indices.tolist()

    indegree = [0] * n
    for v in nbr:
        indegree[v] += 1
    roots = [
        i
        for i in range(n_msg)
        if indegree[i] == 0
    ]
    if not roots:
        raise GraphError("flow has no root publish")
    source = min(
        roots, key=lambda i: (graph.messages[graph._message_order[i]].publish_t, i)
    )
    source_key = graph._message_order[source]
    source_t = graph.messages[source_key].publish_t

    # best chain from the source to every reachable node; a state is
    # (segment count, labels) and compares lexicographically, which is
    # safe because equal counts mean equal-length label tuples
    best: dict[int, tuple[int, tuple[str, ...]]] = {source: (0, ())}
    parent: dict[int, int] = {}
    order = _topo_order(ptr, nbr, n)
    for u in order:
        state = best.get(u)
        if state is None:
            continue
        count, labels = state
        for k in range(ptr[u], ptr[u + 1]):
            v = nbr[k]
            step = _edge_labels(graph, u, v)
            cand = (count + len(step), labels + step)
            if v not in best or cand < best[v]:
                best[v] = cand
                parent[v] = u

    sinks = [
        i for i in best if ptr[i] == ptr[i + 1]
    ]
    if not sinks:
        sinks = [source]

    def sink_rank(i: int) -> tuple:
        count, labels = best[i]
        term = _terminal_labels(graph, i)
        return (-_sink_time(graph, i), count + len(term), labels + term, i)

    sink = min(sinks, key=sink_rank)
    sink_t = _sink_time(graph, sink)

    chain_idx = [sink]
    while chain_idx[-1] != source:
        chain_idx.append(parent[chain_idx[-1]])
    chain_idx.reverse()

    segments: list[Segment] = []
    for u, v in zip(chain_idx, chain_idx[1:]):
        segments.extend(_edge_segments(graph, u, v))
    if sink >= n_msg:
        cb = graph.callbacks[graph._callback_order[sink - n_msg]]
        if cb.end_t is not None:
            segments.append(Segment("processing", _node_name(graph, cb), cb.start_t, cb.end_t))

    total = sink_t - source_t
    for seg in segments:
        if seg.duration_ns < 0:
            raise GraphError(
                f"negative {seg.kind} segment {seg.label!r} "
                f"({seg.start_ns}..{seg.end_ns}); are the clocks uncorrected?"
            )
    covered = sum(seg.duration_ns for seg in segments)
    if covered != total:
        raise GraphError(
            f"critical path segments cover {covered} ns of a {total} ns span"
        )

    chain: list[MessageKey | str] = [
        graph._message_order[i] if i < n_msg else graph._callback_order[i - n_msg]
        for i in chain_idx
    ]
    return CriticalPath(
        segments=tuple(segments),
        total_ns=total,
        source=source_key,
        sink=graph.node_label(sink),
        chain=tuple(chain),
    )


def _terminal_labels(graph: FlowGraph, i: int) -> tuple[str, ...]:
    n_msg = len(graph.messages)
    if i < n_msg:
        return ()
    cb = graph.callbacks[graph._callback_order[i - n_msg]]
    return () if cb.end_t is None else (_node_name(graph, cb),)


def _topo_order(ptr: list, nbr: list, n: int) -> list[int]:
    indegree = [0] * n
    for v in nbr:
        indegree[v] += 1
    ready = sorted((i for i in range(n) if indegree[i] == 0), reverse=True)
    out: list[int] = []
    while ready:
        u = ready.pop()
        out.append(u)
        for k in range(ptr[u], ptr[u + 1]):
            v = nbr[k]
            indegree[v] -= 1
            if indegree[v] == 0:
                ready.append(v)
    return out


# ---------------------------------------------------------------------------
# breakdown


def breakdown(
    path: CriticalPath, grouping: Mapping[str, str] | None = None
) -> Breakdown:
    """Aggregate path segments into named report rows.

    ``grouping`` maps segment labels to row names; unmapped transport
    segments share one network row and any other unmapped label becomes
    its own row.  Row times sum exactly to the path total in native
    units; percentages are recomputed from the native times.
    """
    rows: dict[str, int] = {}
    for seg in path.segments:
        if grouping and seg.label in grouping:
            name = grouping[seg.label]
        elif seg.kind == "transport":
            name = TRANSPORT_ROW
        else:
            name = seg.label
        rows[name] = rows.get(name, 0) + seg.duration_ns
    total = path.total_ns
    ordered = sorted(rows.items(), key=lambda kv: (-kv[1], kv[0]))
    out = tuple(
        BreakdownRow(
            label=name,
            time_ns=ns,
            percent=(100.0 * ns / total) if total else 0.0,
        )
        for name, ns in ordered
    )
    return Breakdown(rows=out, total_ns=total)
