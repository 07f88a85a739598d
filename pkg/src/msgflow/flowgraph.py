"""Reconstruction of the message flow graph from an event log.

Nodes are message instances (one per publish) and callback instances
(one per cb_start).  Two edge families connect them:

* transport edges, publish -> callback start, matched by the message
  key (publisher id, sequence number) echoed in cb_start;
* causal edges, callback -> publish, for outputs produced by a callback.

Causal edges come from two sources.  The automatic rule links a publish
to the innermost callback running on the same thread at publish time.
``link`` annotations state causes explicitly and take precedence: a
publish with an annotated incoming edge gets no automatic edge.  A
publish on a thread with no running callback gets no automatic edge
either; that case needs an annotation and is surfaced in diagnostics.

The result must be a DAG; a cycle (only possible with inconsistent
annotations) raises :class:`GraphError` listing the offending nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np

from msgflow import _kernels
from msgflow.errors import GraphError
from msgflow.events import MessageKey
from msgflow.ingest import EventLog, Topology, link_inputs

__all__ = [
    "CallbackInstance",
    "CausalEdge",
    "FlowGraph",
    "GraphDiagnostics",
    "MessageInstance",
    "TransportEdge",
    "build_flow_graph",
    "infer_causal_links",
    "match_transport",
]

_NO_END = np.iinfo(np.int64).max


@dataclass(frozen=True, slots=True)
class MessageInstance:
    key: MessageKey
    publish_t: int
    topic: str
    node: str
    host: str
    pid: int
    tid: int


@dataclass(frozen=True, slots=True)
class CallbackInstance:
    cb: str
    sub: str
    topic: str
    node: str
    host: str
    pid: int
    tid: int
    src: MessageKey
    start_t: int
    end_t: int | None  # None when the end was never observed

    @property
    def duration(self) -> int | None:
        return None if self.end_t is None else self.end_t - self.start_t


@dataclass(frozen=True, slots=True)
class TransportEdge:
    key: MessageKey
    cb: str
    latency_ns: int


@dataclass(frozen=True, slots=True)
class CausalEdge:
    cb: str
    key: MessageKey
    kind: str  # automatic | annotated


@dataclass(frozen=True)
class GraphDiagnostics:
    """Soft findings produced while building a graph."""

    orphan_callbacks: tuple[str, ...] = ()
    link_problems: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return bool(self.orphan_callbacks or self.link_problems)


@dataclass
class FlowGraph:
    """The reconstructed flow DAG plus per-subscription match leftovers."""

    messages: dict[MessageKey, MessageInstance]
    callbacks: dict[str, CallbackInstance]
    transport_edges: tuple[TransportEdge, ...]
    causal_edges: tuple[CausalEdge, ...]
    unmatched: dict[str, tuple[MessageKey, ...]]
    diagnostics: GraphDiagnostics
    span: tuple[int, int]
    topology: Topology | None = None

    # ---- integer node indexing (messages first, then callbacks) ----

    @cached_property
    def _message_order(self) -> list[MessageKey]:
        return sorted(self.messages)

    @cached_property
    def _callback_order(self) -> list[str]:
        return sorted(self.callbacks)

    @cached_property
    def _message_index(self) -> dict[MessageKey, int]:
        return {k: i for i, k in enumerate(self._message_order)}

    @cached_property
    def _callback_index(self) -> dict[str, int]:
        base = len(self.messages)
        return {cb: base + i for i, cb in enumerate(self._callback_order)}

    @property
    def node_count(self) -> int:
        return len(self.messages) + len(self.callbacks)

    def node_label(self, index: int) -> str:
        if index < len(self.messages):
            return str(self._message_order[index])
        return self._callback_order[index - len(self.messages)]

    @cached_property
    def _edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        midx = self._message_index
        cidx = self._callback_index
        n = len(self.transport_edges) + len(self.causal_edges)
        src = np.empty(n, dtype=np.int64)
        dst = np.empty(n, dtype=np.int64)
        k = 0
        for te in self.transport_edges:
            src[k] = midx[te.key]
            dst[k] = cidx[te.cb]
            k += 1
        for ce in self.causal_edges:
            src[k] = cidx[ce.cb]
            dst[k] = midx[ce.key]
            k += 1
        return src, dst

    def _csr(self, src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        counts = np.bincount(src, minlength=self.node_count)
        indptr = np.zeros(self.node_count + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        order = np.argsort(src, kind="stable")
        return indptr, dst[order]

    @cached_property
    def _forward_csr(self) -> tuple[np.ndarray, np.ndarray]:
        src, dst = self._edge_arrays
        return self._csr(src, dst)

    @cached_property
    def _backward_csr(self) -> tuple[np.ndarray, np.ndarray]:
        src, dst = self._edge_arrays
        return self._csr(dst, src)

    def reachable(self, key: MessageKey, backward: bool = False) -> np.ndarray:
        """Boolean mask over node indices reachable from a message node."""
        root = self._message_index[key]
        indptr, indices = self._backward_csr if backward else self._forward_csr
        out = np.zeros(self.node_count, dtype=np.uint8)
        _kernels.reachable_mask(indptr, indices, root, out)
        return out

    @cached_property
    def _node_times(self) -> np.ndarray:
        times = np.empty(self.node_count, dtype=np.int64)
        for i, key in enumerate(self._message_order):
            times[i] = self.messages[key].publish_t
        base = len(self.messages)
        for j, cb in enumerate(self._callback_order):
            times[base + j] = self.callbacks[cb].start_t
        return times

    def _assert_dag(self) -> None:
        src, dst = self._edge_arrays
        if len(src) == 0:
            return
        times = self._node_times
        # every edge strictly forward in time already rules out cycles
        if bool(np.all(times[dst] > times[src])):
            return
        indptr, indices = self._forward_csr
        indegree = np.bincount(dst, minlength=self.node_count).tolist()
        ptr = indptr.tolist()
        nbr = indices.tolist()
        ready = [i for i, d in enumerate(indegree) if d == 0]
        seen = 0
        while ready:
            u = ready.pop()
            seen += 1
            for k in range(ptr[u], ptr[u + 1]):
                v = nbr[k]
                indegree[v] -= 1
                if indegree[v] == 0:
                    ready.append(v)
        if seen != self.node_count:
            cycle = self._find_cycle(ptr, nbr, indegree)
            raise GraphError(
                "causal annotations create a cycle: " + " -> ".join(cycle)
            )

    def _find_cycle(self, ptr: list, nbr: list, indegree: list) -> list[str]:
        residual = {i for i, d in enumerate(indegree) if d > 0}
        start = min(residual)
        # walk forward inside the residual set until a node repeats
        path: list[int] = []
        at: dict[int, int] = {}
        u = start
        while u not in at:
            at[u] = len(path)
            path.append(u)
            u = next(v for v in nbr[ptr[u]: ptr[u + 1]] if v in residual)
        cycle = path[at[u]:] + [u]
        return [self.node_label(i) for i in cycle]

    @classmethod
    def from_parts(
        cls,
        messages: Iterable[MessageInstance],
        callbacks: Iterable[CallbackInstance],
        transport_edges: Iterable[TransportEdge],
        causal_edges: Iterable[CausalEdge],
        unmatched: dict[str, tuple[MessageKey, ...]] | None = None,
        diagnostics: GraphDiagnostics = GraphDiagnostics(),
        span: tuple[int, int] | None = None,
        topology: Topology | None = None,
    ) -> "FlowGraph":
        msgs = {m.key: m for m in messages}
        cbs = {c.cb: c for c in callbacks}
        times = [m.publish_t for m in msgs.values()]
        times += [c.start_t for c in cbs.values()]
        times += [c.end_t for c in cbs.values() if c.end_t is not None]
        graph = cls(
            messages=msgs,
            callbacks=cbs,
            transport_edges=tuple(transport_edges),
            causal_edges=tuple(causal_edges),
            unmatched=unmatched or {},
            diagnostics=diagnostics,
            span=span or ((min(times), max(times)) if times else (0, 0)),
            topology=topology,
        )
        graph._assert_dag()
        return graph


# ---------------------------------------------------------------------------


class _Scan:
    """Single pass over a log collecting the rows the graph needs."""

    def __init__(self, logd: EventLog):
        topo = logd.topology
        self.topology = topo
        self.messages: dict[MessageKey, MessageInstance] = {}
        self.callbacks: dict[str, CallbackInstance] = {}
        self.links: list[tuple[MessageKey, list[MessageKey]]] = []
        # raw cb_start rows; instances are built once ends are known
        starts: dict[str, tuple] = {}
        ends: dict[tuple[str, str], int] = {}
        pub_decls = topo.publishers
        for ev in logd.events:
            kind = ev.kind
            payload = ev.payload
            if kind == "publish":
                key = MessageKey(payload["pub"], payload["seq"])
                if key not in self.messages:
                    decl = pub_decls.get(key.pub)
                    self.messages[key] = MessageInstance(
                        key=key,
                        publish_t=ev.t,
                        topic=decl.topic if decl else "",
                        node=decl.node if decl else "",
                        host=ev.host,
                        pid=ev.pid,
                        tid=ev.tid,
                    )
            elif kind == "cb_start":
                cb = payload["cb"]
                if cb not in starts:
                    starts[cb] = (
                        payload["sub"],
                        MessageKey(payload["src_pub"], payload["src_seq"]),
                        ev.t,
                        ev.host,
                        ev.pid,
                        ev.tid,
                    )
            elif kind == "cb_end":
                key2 = (payload["sub"], payload["cb"])
                if key2 not in ends:
                    ends[key2] = ev.t
            elif kind == "link":
                self.links.append(
                    (MessageKey(payload["out_pub"], payload["out_seq"]), link_inputs(ev))
                )
        sub_decls = topo.subscriptions
        for cb, (sub, src, start_t, host, pid, tid) in starts.items():
            decl = sub_decls.get(sub)
            end_t = ends.get((sub, cb))
            if end_t is not None and end_t < start_t:
                # an end before its start is noise, not a duration
                end_t = None
            self.callbacks[cb] = CallbackInstance(
                cb=cb,
                sub=sub,
                topic=decl.topic if decl else "",
                node=decl.node if decl else "",
                host=host,
                pid=pid,
                tid=tid,
                src=src,
                start_t=start_t,
                end_t=end_t,
            )


def _scan(logd: EventLog) -> _Scan:
    return _Scan(logd)


def match_transport(
    logd: EventLog, scan: _Scan | None = None
) -> tuple[tuple[TransportEdge, ...], dict[str, tuple[MessageKey, ...]], tuple[str, ...]]:
    """Join publishes to receiving callbacks by message key.

    Returns (edges, unmatched, orphans): per-subscription lists of
    same-topic publishes that never reached the subscription (drop
    candidates), and callbacks echoing a key that was never published.
    """
    s = scan or _scan(logd)
    rows: list[tuple[MessageKey, str, int]] = []
    orphans: list[str] = []
    matched: dict[str, set[MessageKey]] = {}
    for cb in s.callbacks.values():
        msg = s.messages.get(cb.src)
        if msg is None:
            orphans.append(cb.cb)
            continue
        rows.append((cb.src, cb.cb, cb.start_t - msg.publish_t))
        matched.setdefault(cb.sub, set()).add(cb.src)

    by_topic: dict[str, list[MessageKey]] = {}
    for msg in s.messages.values():
        by_topic.setdefault(msg.topic, []).append(msg.key)
    unmatched: dict[str, tuple[MessageKey, ...]] = {}
    for sub in sorted(s.topology.subscriptions):
        decl = s.topology.subscriptions[sub]
        got = matched.get(sub, set())
        missing = [k for k in by_topic.get(decl.topic, []) if k not in got]
        unmatched[sub] = tuple(sorted(missing))
    rows.sort()
    edges = tuple(TransportEdge(key, cb, latency) for key, cb, latency in rows)
    return edges, unmatched, tuple(sorted(orphans))


def infer_causal_links(
    logd: EventLog, scan: _Scan | None = None
) -> tuple[tuple[CausalEdge, ...], tuple[str, ...]]:
    """Derive callback -> publish edges from thread nesting and annotations."""
    s = scan or _scan(logd)

    receivers: dict[MessageKey, list[str]] = {}
    for cb in s.callbacks.values():
        if cb.src in s.messages:
            receivers.setdefault(cb.src, []).append(cb.cb)

    rows: list[tuple[str, MessageKey, str]] = []
    problems: list[str] = []
    seen: set[tuple[str, MessageKey]] = set()
    suppressed: set[MessageKey] = set()
    for out_key, in_keys in s.links:
        if out_key not in s.messages:
            problems.append(f"link names unknown output message {out_key}")
            continue
        for in_key in in_keys:
            if in_key not in s.messages:
                problems.append(f"link for {out_key} names unknown input message {in_key}")
                continue
            cbs = receivers.get(in_key)
            if not cbs:
                problems.append(
                    f"link for {out_key} names input {in_key} that no callback received"
                )
                continue
            suppressed.add(out_key)
            for cb in cbs:
                if (cb, out_key) not in seen:
                    seen.add((cb, out_key))
                    rows.append((cb, out_key, "annotated"))

    rows.extend(_automatic_edges(s, suppressed))
    rows.sort()
    edges = tuple(CausalEdge(cb, key, kind) for cb, key, kind in rows)
    return edges, tuple(problems)


def _automatic_edges(
    s: _Scan, suppressed: set[MessageKey]
) -> list[tuple[str, MessageKey, str]]:
    """Attribute publishes to the innermost enclosing same-thread callback."""
    cb_order = sorted(s.callbacks)
    groups: dict[tuple[str, int, int], int] = {}

    def group_of(host: str, pid: int, tid: int) -> int:
        return groups.setdefault((host, pid, tid), len(groups))

    n_cb = len(cb_order)
    pub_keys = [k for k in sorted(s.messages) if k not in suppressed]
    n_pub = len(pub_keys)
    n = n_cb + n_pub
    if n_pub == 0 or n_cb == 0:
        return []

    ev_kind = np.empty(n, dtype=np.uint8)
    ev_group = np.empty(n, dtype=np.int64)
    ev_time = np.empty(n, dtype=np.int64)
    ev_index = np.empty(n, dtype=np.int64)
    cb_end = np.empty(n_cb, dtype=np.int64)
    for i, cbid in enumerate(cb_order):
        cb = s.callbacks[cbid]
        ev_kind[i] = 0
        ev_group[i] = group_of(cb.host, cb.pid, cb.tid)
        ev_time[i] = cb.start_t
        ev_index[i] = i
        cb_end[i] = cb.end_t if cb.end_t is not None else _NO_END
    for j, key in enumerate(pub_keys):
        msg = s.messages[key]
        i = n_cb + j
        ev_kind[i] = 1
        ev_group[i] = group_of(msg.host, msg.pid, msg.tid)
        ev_time[i] = msg.publish_t
        ev_index[i] = j

    order = np.lexsort((np.arange(n), ev_kind, ev_time, ev_group))
    out = np.full(n_pub, -1, dtype=np.int64)
    _kernels.innermost_enclosing(
        np.ascontiguousarray(ev_kind[order]),
        np.ascontiguousarray(ev_group[order]),
        np.ascontiguousarray(ev_time[order]),
        np.ascontiguousarray(ev_index[order]),
        cb_end,
        out,
    )
    edges = []
    hits = out.tolist()
    for j, key in enumerate(pub_keys):
        if hits[j] >= 0:
            edges.append((cb_order[hits[j]], key, "automatic"))
    return edges


def build_flow_graph(logd: EventLog) -> FlowGraph:
    """Match transport, infer causal links and assemble the checked DAG."""
    s = _scan(logd)
    transport, unmatched, orphans = match_transport(logd, s)
    causal, link_problems = infer_causal_links(logd, s)
    diagnostics = GraphDiagnostics(
        orphan_callbacks=orphans,
        link_problems=link_problems,
    )
    return FlowGraph.from_parts(
        s.messages.values(),
        s.callbacks.values(),
        transport,
        causal,
        unmatched=unmatched,
        diagnostics=diagnostics,
        span=logd.span,
        topology=s.topology,
    )
