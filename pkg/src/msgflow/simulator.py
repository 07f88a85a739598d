"""Deterministic trace simulator with ground truth.

The simulator runs a topology of nodes on one logical clock, writes the
resulting trace bundle with each host's skewed local timestamps, and
records what actually happened (matches, causal edges, drops, clock
parameters, end-to-end times) in ``truth.json`` so analyses can be
checked against reality.

Model:

* each node is one process with one worker thread;
* timer publishers fire every period plus uniform jitter while t is
  inside the configured duration;
* deliveries take a per host-pair link delay and land in the
  subscription's bounded FIFO queue.  When the queue is full the
  configured policy drops the oldest queued message (keep-latest) or
  rejects the newcomer.  Drops leave no trace event; only the truth
  file knows;
* the worker picks the earliest-arrived queued message across its
  node's subscriptions, runs the callback for a drawn processing time,
  and publishes the configured outputs exactly at the callback end so
  the enclosing-callback rule applies.  A subscription with ``defer_ms``
  instead publishes after the callback returns and emits a ``link``
  annotation, since no enclosing callback exists then;
* consecutive callbacks on one worker are separated by one nanosecond
  so a publish at a callback end can never be confused with work of the
  next callback;
* the event loop drains completely: the duration bounds publisher
  activity, not delivery or processing of what was already published.

Identical (config, seed) pairs produce byte-identical bundles.
"""

from __future__ import annotations

import heapq
import json
import random
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from msgflow.errors import ConfigError
from msgflow.events import MessageKey, TraceEvent, encode_event

__all__ = [
    "GroundTruth",
    "SimConfig",
    "builtin_config_names",
    "builtin_config_path",
    "load_config",
    "load_truth",
    "resolve_config",
    "simulate",
]

_MS = 1_000_000


# ---------------------------------------------------------------------------
# config


@dataclass(frozen=True)
class _Dist:
    """constant or uniform duration distribution, nanoseconds."""

    kind: str
    lo: int
    hi: int

    def draw(self, rng: random.Random) -> int:
        if self.kind == "constant":
            return self.lo
        return rng.randint(self.lo, self.hi)


def _ns(value: float) -> int:
    return round(value * _MS)


def _parse_dist(obj: Any, where: str) -> _Dist:
    if not isinstance(obj, dict) or len(obj) != 1:
        raise ConfigError(
            f"{where}: expected {{'constant': ms}} or {{'uniform': [lo, hi]}}, got {obj!r}"
        )
    if "constant" in obj:
        value = obj["constant"]
        if not isinstance(value, (int, float)) or value < 0:
            raise ConfigError(f"{where}: constant must be a non-negative number")
        return _Dist("constant", _ns(value), _ns(value))
    if "uniform" in obj:
        pair = obj["uniform"]
        if (
            not isinstance(pair, list)
            or len(pair) != 2
            or not all(isinstance(v, (int, float)) for v in pair)
            or pair[0] < 0
            or pair[0] > pair[1]
        ):
            raise ConfigError(f"{where}: uniform must be [lo, hi] with 0 <= lo <= hi")
        return _Dist("uniform", _ns(pair[0]), _ns(pair[1]))
    raise ConfigError(f"{where}: unknown distribution {list(obj)[0]!r}")


@dataclass(frozen=True)
class HostClock:
    offset_ns: int
    drift_ppm: float


@dataclass(frozen=True)
class NodeSpec:
    id: str
    name: str
    host: str


@dataclass(frozen=True)
class PublisherSpec:
    id: str
    node: str
    topic: str
    period_ns: int | None
    jitter_ns: int


@dataclass(frozen=True)
class SubscriptionSpec:
    id: str
    node: str
    topic: str
    queue_depth: int
    processing: _Dist
    publishes: tuple[str, ...]
    defer: _Dist | None
    annotate_links: bool


@dataclass(frozen=True)
class SimConfig:
    hosts: dict[str, HostClock]
    nodes: tuple[NodeSpec, ...]
    publishers: tuple[PublisherSpec, ...]
    subscriptions: tuple[SubscriptionSpec, ...]
    links: dict[tuple[str, str], _Dist]
    duration_ns: int
    seed: int
    drop_policy: str  # oldest | newest


def _require(obj: dict, key: str, where: str) -> Any:
    if key not in obj:
        raise ConfigError(f"{where}: missing required field {key!r}")
    return obj[key]


def load_config(source: str | Path | dict) -> SimConfig:
    """Parse and validate a simulation config (path or already-parsed dict)."""
    if isinstance(source, dict):
        raw = source
    else:
        try:
            raw = json.loads(Path(source).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {str(source)!r}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {str(source)!r} is not valid JSON: {exc}") from None

    hosts: dict[str, HostClock] = {}
    for host, clock in _require(raw, "hosts", "config").items():
        if not host:
            raise ConfigError("config: host names must be non-empty")
        offset = clock.get("offset_ns", _ns(clock.get("offset_ms", 0.0)))
        hosts[host] = HostClock(int(offset), float(clock.get("drift_ppm", 0.0)))
    if not hosts:
        raise ConfigError("config: at least one host is required")

    nodes = []
    node_ids = set()
    for obj in _require(raw, "nodes", "config"):
        nid = _require(obj, "id", "node")
        if nid in node_ids:
            raise ConfigError(f"node {nid!r} declared twice")
        node_ids.add(nid)
        host = _require(obj, "host", f"node {nid}")
        if host not in hosts:
            raise ConfigError(f"node {nid!r} runs on unknown host {host!r}")
        nodes.append(NodeSpec(nid, obj.get("name", nid), host))

    publishers = []
    pub_ids = set()
    for obj in _require(raw, "publishers", "config"):
        pid = _require(obj, "id", "publisher")
        if pid in pub_ids:
            raise ConfigError(f"publisher {pid!r} declared twice")
        pub_ids.add(pid)
        node = _require(obj, "node", f"publisher {pid}")
        if node not in node_ids:
            raise ConfigError(f"publisher {pid!r} references unknown node {node!r}")
        period = obj.get("period_ms")
        if period is not None and period <= 0:
            raise ConfigError(f"publisher {pid!r}: period_ms must be positive")
        publishers.append(
            PublisherSpec(
                id=pid,
                node=node,
                topic=_require(obj, "topic", f"publisher {pid}"),
                period_ns=None if period is None else _ns(period),
                jitter_ns=_ns(obj.get("jitter_ms", 0.0)),
            )
        )

    subscriptions = []
    sub_ids = set()
    driven: set[str] = set()
    pub_by_id = {p.id: p for p in publishers}
    for obj in _require(raw, "subscriptions", "config"):
        sid = _require(obj, "id", "subscription")
        if sid in sub_ids:
            raise ConfigError(f"subscription {sid!r} declared twice")
        sub_ids.add(sid)
        node = _require(obj, "node", f"subscription {sid}")
        if node not in node_ids:
            raise ConfigError(f"subscription {sid!r} references unknown node {node!r}")
        depth = obj.get("queue_depth", 10)
        if not isinstance(depth, int) or depth < 1:
            raise ConfigError(f"subscription {sid!r}: queue_depth must be an integer >= 1")
        outputs = tuple(obj.get("publishes", ()))
        for out in outputs:
            if out not in pub_by_id:
                raise ConfigError(f"subscription {sid!r} publishes unknown publisher {out!r}")
            if pub_by_id[out].node != node:
                raise ConfigError(
                    f"subscription {sid!r} on node {node!r} cannot publish through "
                    f"{out!r} on node {pub_by_id[out].node!r}"
                )
            if pub_by_id[out].period_ns is not None:
                raise ConfigError(
                    f"publisher {out!r} has a period and cannot also be callback-driven"
                )
            driven.add(out)
        subscriptions.append(
            SubscriptionSpec(
                id=sid,
                node=node,
                topic=_require(obj, "topic", f"subscription {sid}"),
                queue_depth=depth,
                processing=_parse_dist(
                    _require(obj, "processing_ms", f"subscription {sid}"),
                    f"subscription {sid} processing_ms",
                ),
                publishes=outputs,
                defer=(
                    _parse_dist(obj["defer_ms"], f"subscription {sid} defer_ms")
                    if "defer_ms" in obj
                    else None
                ),
                annotate_links=bool(obj.get("annotate_links", False)),
            )
        )
    for pub in publishers:
        if pub.period_ns is None and pub.id not in driven:
            raise ConfigError(
                f"publisher {pub.id!r} has no period and no subscription publishes it"
            )

    links: dict[tuple[str, str], _Dist] = {}
    for obj in raw.get("links", ()):
        src = _require(obj, "from", "link")
        dst = _require(obj, "to", "link")
        if src not in hosts or dst not in hosts:
            raise ConfigError(f"link {src!r}->{dst!r} references unknown hosts")
        links[(src, dst)] = _parse_dist(
            _require(obj, "delay_ms", f"link {src}->{dst}"), f"link {src}->{dst} delay_ms"
        )

    duration = raw.get("duration_ms")
    if not isinstance(duration, (int, float)) or duration <= 0:
        raise ConfigError("config: duration_ms must be a positive number")
    policy = raw.get("drop_policy", "oldest")
    if policy not in ("oldest", "newest"):
        raise ConfigError(f"config: drop_policy must be 'oldest' or 'newest', got {policy!r}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("config: seed must be an integer")

    return SimConfig(
        hosts=hosts,
        nodes=tuple(nodes),
        publishers=tuple(publishers),
        subscriptions=tuple(subscriptions),
        links=links,
        duration_ns=_ns(duration),
        seed=seed,
        drop_policy=policy,
    )


def builtin_config_names() -> list[str]:
    root = resources.files("msgflow.configs")
    return sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json"))


def builtin_config_path(name: str) -> Path:
    path = resources.files("msgflow.configs") / f"{name}.json"
    with resources.as_file(path) as concrete:
        return concrete


def resolve_config(ref: str) -> SimConfig:
    """Load a config from a path, or by built-in name (e.g. ``table1``)."""
    if Path(ref).exists():
        return load_config(ref)
    if ref in builtin_config_names():
        text = (resources.files("msgflow.configs") / f"{ref}.json").read_text(encoding="utf-8")
        return load_config(json.loads(text))
    raise ConfigError(
        f"config {ref!r} is neither a file nor a built-in name "
        f"(built-ins: {', '.join(builtin_config_names())})"
    )


# ---------------------------------------------------------------------------
# ground truth


@dataclass(frozen=True)
class GroundTruth:
    """What actually happened in a simulated run, in true (global) time."""

    matches: tuple[dict, ...]
    causal_edges: tuple[dict, ...]
    drops: tuple[dict, ...]
    clocks: dict[str, dict]
    e2e: tuple[dict, ...]

    def match_set(self) -> set[tuple[str, int, str, str]]:
        return {(m["pub"], m["seq"], m["sub"], m["cb"]) for m in self.matches}

    def edge_set(self) -> set[tuple[str, str, int]]:
        return {(e["cb"], e["out_pub"], e["out_seq"]) for e in self.causal_edges}

    def drop_set(self) -> set[tuple[str, int, str]]:
        return {(d["pub"], d["seq"], d["sub"]) for d in self.drops}

    def to_dict(self) -> dict:
        return {
            "matches": list(self.matches),
            "causal_edges": list(self.causal_edges),
            "drops": list(self.drops),
            "clocks": self.clocks,
            "e2e": list(self.e2e),
        }


def load_truth(bundle: str | Path) -> GroundTruth:
    data = json.loads((Path(bundle) / "truth.json").read_text(encoding="utf-8"))
    return GroundTruth(
        matches=tuple(data["matches"]),
        causal_edges=tuple(data["causal_edges"]),
        drops=tuple(data["drops"]),
        clocks=data["clocks"],
        e2e=tuple(data["e2e"]),
    )


# ---------------------------------------------------------------------------
# engine


@dataclass
class _Queued:
    key: MessageKey
    publish_g: int
    arrival_g: int


@dataclass
class _Node:
    spec: NodeSpec
    pid: int
    tid: int
    busy: bool = False
    last_end: int | None = None
    wake_at: int | None = None
    subs: list["_Sub"] = field(default_factory=list)


@dataclass
class _Sub:
    spec: SubscriptionSpec
    node: _Node
    queue: deque = field(default_factory=deque)
    started: int = 0


class _Engine:
    def __init__(self, config: SimConfig):
        self.config = config
        self.rng = random.Random(config.seed)
        self.counter = 0
        self.heap: list[tuple[int, int, int, Any]] = []
        # nothing may be stamped before local time zero on any host
        self.epoch = max(0, -min(c.offset_ns for c in config.hosts.values())) + _MS
        self.end = self.epoch + config.duration_ns
        self.out: dict[str, list[str]] = {h: [] for h in config.hosts}

        self.nodes: dict[str, _Node] = {}
        for i, spec in enumerate(config.nodes):
            pid = 1000 + i
            self.nodes[spec.id] = _Node(spec=spec, pid=pid, tid=pid)
        self.pubs: dict[str, PublisherSpec] = {p.id: p for p in config.publishers}
        self.next_seq: dict[str, int] = {p.id: 0 for p in config.publishers}
        self.subs: dict[str, _Sub] = {}
        self.subs_by_topic: dict[str, list[_Sub]] = {}
        for spec in config.subscriptions:
            sub = _Sub(spec=spec, node=self.nodes[spec.node])
            self.subs[spec.id] = sub
            self.nodes[spec.node].subs.append(sub)
            self.subs_by_topic.setdefault(spec.topic, []).append(sub)
        for lst in self.subs_by_topic.values():
            lst.sort(key=lambda s: s.spec.id)

        # truth accumulators, all in global time
        self.matches: list[dict] = []
        self.causal: list[dict] = []
        self.drops: list[dict] = []
        self.publish_g: dict[MessageKey, int] = {}
        self.deliveries: dict[MessageKey, list[str]] = {}
        self.cb_end_g: dict[str, int] = {}
        self.cb_outputs: dict[str, list[MessageKey]] = {}
        self.roots: list[MessageKey] = []

    # -- clocks ------------------------------------------------------

    def local(self, host: str, t_global: int) -> int:
        clock = self.config.hosts[host]
        skew = clock.offset_ns + round(clock.drift_ppm * 1e-6 * (t_global - self.epoch))
        return t_global + skew

    def emit(
        self, node: _Node, t_global: int, kind: str, payload: dict, tid: int | None = None
    ) -> None:
        host = node.spec.host
        event = TraceEvent(
            t=self.local(host, t_global),
            host=host,
            pid=node.pid,
            tid=node.tid if tid is None else tid,
            kind=kind,
            payload=payload,
        )
        self.out[host].append(encode_event(event))

    # -- scheduling --------------------------------------------------

    def push(self, t: int, rank: int, action: Any) -> None:
        self.counter += 1
        heapq.heappush(self.heap, (t, rank, self.counter, action))

    def run(self) -> None:
        for node_id, node in self.nodes.items():
            self.emit(node, self.epoch, "node_init", {"node": node_id, "name": node.spec.name})
        for pub in self.config.publishers:
            node = self.nodes[pub.node]
            self.emit(node, self.epoch, "pub_init", {"pub": pub.id, "node": pub.node, "topic": pub.topic})
        for spec in self.config.subscriptions:
            node = self.nodes[spec.node]
            self.emit(
                node,
                self.epoch,
                "sub_init",
                {"sub": spec.id, "node": spec.node, "topic": spec.topic, "queue_depth": spec.queue_depth},
            )
        for pub in self.config.publishers:
            if pub.period_ns is not None:
                self.push(self.epoch + pub.period_ns + self._jitter(pub), 0, ("timer", pub.id))

        while self.heap:
            t, _rank, _cnt, action = heapq.heappop(self.heap)
            getattr(self, "_on_" + action[0])(t, *action[1:])

    def _jitter(self, pub: PublisherSpec) -> int:
        return self.rng.randint(-pub.jitter_ns, pub.jitter_ns) if pub.jitter_ns else 0

    # -- handlers ----------------------------------------------------

    def _on_timer(self, t: int, pub_id: str) -> None:
        if t >= self.end:
            return
        self._publish(pub_id, t, cause=None, annotate=False, in_key=None)
        pub = self.pubs[pub_id]
        self.push(max(t + 1, t + pub.period_ns + self._jitter(pub)), 0, ("timer", pub_id))

    def _publish(
        self,
        pub_id: str,
        t: int,
        cause: str | None,
        annotate: bool,
        in_key: MessageKey | None,
    ) -> MessageKey:
        pub = self.pubs[pub_id]
        node = self.nodes[pub.node]
        seq = self.next_seq[pub_id]
        self.next_seq[pub_id] = seq + 1
        key = MessageKey(pub_id, seq)
        # timers fire on their own thread: the single worker thread only
        # ever publishes from inside a callback
        timer_tid = node.pid + 5000 if cause is None else None
        self.emit(node, t, "publish", {"pub": pub_id, "seq": seq}, tid=timer_tid)
        self.publish_g[key] = t
        if cause is None:
            self.roots.append(key)
        else:
            self.causal.append(
                {"cb": cause, "out_pub": pub_id, "out_seq": seq, "kind": "link" if annotate else "inline"}
            )
            self.cb_outputs.setdefault(cause, []).append(key)
            if annotate:
                assert in_key is not None
                self.emit(
                    node,
                    t,
                    "link",
                    {"out_pub": pub_id, "out_seq": seq, "in": [{"pub": in_key.pub, "seq": in_key.seq}]},
                )
        for sub in self.subs_by_topic.get(pub.topic, ()):
            delay = self._link_delay(node.spec.host, sub.node.spec.host)
            self.push(t + delay, 1, ("arrival", sub.spec.id, key, t))
        return key

    def _link_delay(self, src: str, dst: str) -> int:
        dist = self.config.links.get((src, dst))
        return dist.draw(self.rng) if dist is not None else 0

    def _on_arrival(self, t: int, sub_id: str, key: MessageKey, publish_g: int) -> None:
        sub = self.subs[sub_id]
        queued = _Queued(key=key, publish_g=publish_g, arrival_g=t)
        if len(sub.queue) >= sub.spec.queue_depth:
            if self.config.drop_policy == "oldest":
                victim: _Queued = sub.queue.popleft()
                sub.queue.append(queued)
            else:
                victim = queued
            self.drops.append({"pub": victim.key.pub, "seq": victim.key.seq, "sub": sub_id})
        else:
            sub.queue.append(queued)
        self._dispatch(sub.node, t)

    def _on_wake(self, t: int, node_id: str) -> None:
        node = self.nodes[node_id]
        node.wake_at = None
        self._dispatch(node, t)

    def _dispatch(self, node: _Node, now: int) -> None:
        if node.busy:
            return
        candidates = [s for s in node.subs if s.queue]
        if not candidates:
            return
        start = now if node.last_end is None else max(now, node.last_end + 1)
        if start > now:
            if node.wake_at is None or node.wake_at > start:
                node.wake_at = start
                self.push(start, 2, ("wake", node.spec.id))
            return
        sub = min(candidates, key=lambda s: (s.queue[0].arrival_g, s.spec.id))
        queued: _Queued = sub.queue.popleft()
        cb_id = f"cb_{sub.spec.id}_{sub.started}"
        sub.started += 1
        node.busy = True
        self.emit(
            node,
            start,
            "cb_start",
            {"sub": sub.spec.id, "cb": cb_id, "src_pub": queued.key.pub, "src_seq": queued.key.seq},
        )
        self.matches.append(
            {
                "pub": queued.key.pub,
                "seq": queued.key.seq,
                "sub": sub.spec.id,
                "cb": cb_id,
                "publish_ns": queued.publish_g,
                "cb_start_ns": start,
                "latency_ns": start - queued.publish_g,
            }
        )
        self.deliveries.setdefault(queued.key, []).append(cb_id)
        duration = sub.spec.processing.draw(self.rng)
        self.push(start + duration, 3, ("cb_end", sub.spec.id, cb_id, queued.key))

    def _on_cb_end(self, t: int, sub_id: str, cb_id: str, in_key: MessageKey) -> None:
        sub = self.subs[sub_id]
        node = sub.node
        for pub_id in sub.spec.publishes:
            if sub.spec.defer is None:
                self._publish(pub_id, t, cause=cb_id, annotate=sub.spec.annotate_links, in_key=in_key)
            else:
                delay = sub.spec.defer.draw(self.rng)
                self.push(t + delay, 4, ("deferred", pub_id, cb_id, in_key))
        self.emit(node, t, "cb_end", {"sub": sub_id, "cb": cb_id})
        self.cb_end_g[cb_id] = t
        node.busy = False
        node.last_end = t
        self._dispatch(node, t)

    def _on_deferred(self, t: int, pub_id: str, cause_cb: str, in_key: MessageKey) -> None:
        self._publish(pub_id, t, cause=cause_cb, annotate=True, in_key=in_key)

    # -- truth -------------------------------------------------------

    def truth(self) -> GroundTruth:
        e2e = []
        for root in self.roots:
            e2e.append({"root": str(root), "total_ns": self._e2e(root)})
        clocks = {
            host: {"offset_ns": c.offset_ns, "drift_ppm": c.drift_ppm}
            for host, c in sorted(self.config.hosts.items())
        }
        return GroundTruth(
            matches=tuple(sorted(self.matches, key=lambda m: (m["pub"], m["seq"], m["sub"]))),
            causal_edges=tuple(
                sorted(self.causal, key=lambda e: (e["cb"], e["out_pub"], e["out_seq"]))
            ),
            drops=tuple(sorted(self.drops, key=lambda d: (d["pub"], d["seq"], d["sub"]))),
            clocks=clocks,
            e2e=tuple(sorted(e2e, key=lambda e: e["root"])),
        )

    def _e2e(self, root: MessageKey) -> int:
        """Latest sink completion reachable from the root, minus its publish."""
        base = self.publish_g[root]
        best = base
        stack: list[MessageKey] = [root]
        seen_msg = {root}
        while stack:
            key = stack.pop()
            cbs = self.deliveries.get(key)
            if not cbs:
                best = max(best, self.publish_g[key])
                continue
            for cb in cbs:
                outputs = self.cb_outputs.get(cb)
                if not outputs:
                    best = max(best, self.cb_end_g[cb])
                    continue
                for out in outputs:
                    if out not in seen_msg:
                        seen_msg.add(out)
                        stack.append(out)
        return best - base


def simulate(config: SimConfig, out_dir: str | Path) -> GroundTruth:
    """Run the simulation and write ``<host>.jsonl`` files plus ``truth.json``."""
    engine = _Engine(config)
    engine.run()
    truth = engine.truth()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for host in sorted(engine.out):
        lines = engine.out[host]
        (out / f"{host}.jsonl").write_text(
            "\n".join(lines) + ("\n" if lines else ""), encoding="utf-8"
        )
    (out / "truth.json").write_text(
        json.dumps(truth.to_dict(), sort_keys=True, separators=(",", ":")) + "\n",
        encoding="utf-8",
    )
    return truth
