"""Loading trace bundles into a validated, time-ordered event log.

A bundle is a directory holding one ``<host>.jsonl`` file per host (an
optional ``truth.json`` with simulator ground truth is ignored here).
Events are merged into a single list sorted by timestamp; ties keep file
order within a host and order hosts lexicographically.  Entity tables
are derived from the ``*_init`` events.

Broken data is data: records that reference unknown entities produce
warnings rather than aborting the load, and ``validate`` reports every
invariant violation it can find without mutating the log.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from msgflow.errors import BundleError, TraceFormatError, ValidationError
from msgflow.events import EVENT_KINDS, MessageKey, TraceEvent, _decode_owned

__all__ = [
    "EventLog",
    "NodeDecl",
    "PublisherDecl",
    "SubscriptionDecl",
    "Topology",
    "Violation",
    "load_bundle",
    "validate",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class NodeDecl:
    id: str
    name: str
    host: str


@dataclass(frozen=True, slots=True)
class PublisherDecl:
    id: str
    node: str
    topic: str


@dataclass(frozen=True, slots=True)
class SubscriptionDecl:
    id: str
    node: str
    topic: str
    queue_depth: int


@dataclass(frozen=True)
class Topology:
    """Entity tables declared by the ``*_init`` events of a trace."""

    nodes: dict[str, NodeDecl]
    publishers: dict[str, PublisherDecl]
    subscriptions: dict[str, SubscriptionDecl]

    def subscriptions_of_topic(self, topic: str) -> list[SubscriptionDecl]:
        return [s for s in self.subscriptions.values() if s.topic == topic]

    @property
    def topics(self) -> set[str]:
        pubs = {p.topic for p in self.publishers.values()}
        return pubs | {s.topic for s in self.subscriptions.values()}


@dataclass(frozen=True, slots=True)
class Violation:
    """One invariant violation found in a log; analyses keep going past these."""

    kind: str
    message: str
    host: str | None = None
    line: int | None = None

    def __str__(self) -> str:
        where = ""
        if self.host is not None:
            where = f" ({self.host}.jsonl" + (f":{self.line})" if self.line else ")")
        return f"{self.kind}: {self.message}{where}"


@dataclass
class EventLog:
    """A merged, time-ordered trace with its derived topology.

    ``lines`` maps each event back to its 1-based line in the source
    file of its host, when the log came from disk.  ``warnings`` holds
    the reference problems found while loading.
    """

    events: list[TraceEvent]
    topology: Topology
    hosts: tuple[str, ...]
    warnings: list[Violation] = field(default_factory=list)
    lines: list[int] | None = None

    @property
    def span(self) -> tuple[int, int]:
        """(first, last) event timestamp; (0, 0) for an empty log."""
        if not self.events:
            return (0, 0)
        return (self.events[0].t, self.events[-1].t)

    def first_timestamp(self, host: str) -> int | None:
        for ev in self.events:
            if ev.host == host:
                return ev.t
        return None

    @classmethod
    def from_events(
        cls,
        events: Iterable[TraceEvent],
        lines: Sequence[int] | None = None,
    ) -> "EventLog":
        """Build a log from in-memory events.

        Events are stably sorted by (t, host), so the caller's relative
        order within a host is preserved for equal timestamps.
        """
        seq = list(events)
        order = sorted(range(len(seq)), key=lambda i: (seq[i].t, seq[i].host))
        ordered = [seq[i] for i in order]
        ordered_lines = [lines[i] for i in order] if lines is not None else None
        topology = _derive_topology(ordered)
        hosts = tuple(sorted({ev.host for ev in ordered}))
        return cls(events=ordered, topology=topology, hosts=hosts, lines=ordered_lines)


def _derive_topology(events: list[TraceEvent]) -> Topology:
    nodes: dict[str, NodeDecl] = {}
    pubs: dict[str, PublisherDecl] = {}
    subs: dict[str, SubscriptionDecl] = {}
    for ev in events:
        if ev.kind == "node_init":
            nodes.setdefault(ev["node"], NodeDecl(ev["node"], ev["name"], ev.host))
        elif ev.kind == "pub_init":
            pubs.setdefault(ev["pub"], PublisherDecl(ev["pub"], ev["node"], ev["topic"]))
        elif ev.kind == "sub_init":
            subs.setdefault(
                ev["sub"],
                SubscriptionDecl(ev["sub"], ev["node"], ev["topic"], ev["queue_depth"]),
            )
    return Topology(nodes=nodes, publishers=pubs, subscriptions=subs)


def _decode_file(path: Path, host: str) -> tuple[list[TraceEvent], list[int]]:
    text = path.read_text(encoding="utf-8")
    raw_lines = text.splitlines()
    numbered = [(i + 1, ln) for i, ln in enumerate(raw_lines) if ln.strip()]
    if not numbered:
        return [], []
    # One parse for the whole file is much faster than one per line and
    # shares key strings between records; fall back per line to locate
    # the offending record when the batch parse fails.
    try:
        objs = json.loads("[" + ",".join(ln for _, ln in numbered) + "]")
    except json.JSONDecodeError:
        objs = []
        for lineno, ln in numbered:
            try:
                objs.append(json.loads(ln))
            except json.JSONDecodeError as exc:
                raise BundleError(
                    f"{path.name}:{lineno}: malformed JSON: {exc.msg}"
                ) from None
    events: list[TraceEvent] = []
    lines: list[int] = []
    for (lineno, _), obj in zip(numbered, objs):
        try:
            if not isinstance(obj, dict):
                raise TraceFormatError(
                    f"record must be a JSON object, got {type(obj).__name__}"
                )
            ev = _decode_owned(obj)
        except TraceFormatError as exc:
            raise BundleError(f"{path.name}:{lineno}: {exc}") from None
        if ev.host != host:
            raise BundleError(
                f"{path.name}:{lineno}: event host {ev.host!r} does not match file host {host!r}"
            )
        events.append(ev)
        lines.append(lineno)
    return events, lines


def load_bundle(path: str | Path, strict: bool = False) -> EventLog:
    """Load every ``<host>.jsonl`` under ``path`` into one EventLog.

    Decode failures raise :class:`BundleError` with file and line.
    References to undeclared entities become warnings on the returned
    log; with ``strict=True`` they raise :class:`ValidationError`
    instead.
    """
    root = Path(path)
    if not root.is_dir():
        raise BundleError(f"trace bundle {str(root)!r} is not a directory")
    files = sorted(p for p in root.glob("*.jsonl"))
    if not files:
        raise BundleError(f"trace bundle {str(root)!r} contains no .jsonl files")
    all_events: list[TraceEvent] = []
    all_lines: list[int] = []
    for file in files:
        events, lines = _decode_file(file, file.stem)
        all_events.extend(events)
        all_lines.extend(lines)
    result = EventLog.from_events(all_events, all_lines)
    result.warnings = _reference_warnings(result)
    if result.warnings:
        log.info("loaded %s with %d warnings", root, len(result.warnings))
        if strict:
            raise ValidationError(
                f"strict load of {str(root)!r} failed: "
                + "; ".join(str(w) for w in result.warnings[:5])
                + ("; ..." if len(result.warnings) > 5 else "")
            )
    return result


def _where(logd: EventLog, index: int) -> tuple[str, int | None]:
    ev = logd.events[index]
    line = logd.lines[index] if logd.lines is not None else None
    return ev.host, line


def _reference_warnings(logd: EventLog) -> list[Violation]:
    """Dangling entity references: the 'missing entity' subset of validate."""
    topo = logd.topology
    out: list[Violation] = []
    for i, ev in enumerate(logd.events):
        kind = ev.kind
        if kind == "publish":
            if ev["pub"] not in topo.publishers:
                host, line = _where(logd, i)
                out.append(
                    Violation("dangling-reference", f"unknown publisher {ev['pub']}", host, line)
                )
        elif kind in ("cb_start", "cb_end"):
            if ev["sub"] not in topo.subscriptions:
                host, line = _where(logd, i)
                out.append(
                    Violation("dangling-reference", f"unknown subscription {ev['sub']}", host, line)
                )
        elif kind == "link":
            host, line = _where(logd, i)
            if ev["out_pub"] not in topo.publishers:
                out.append(
                    Violation("dangling-reference", f"unknown publisher {ev['out_pub']}", host, line)
                )
            for item in ev["in"]:
                if item["pub"] not in topo.publishers:
                    out.append(
                        Violation(
                            "dangling-reference", f"unknown publisher {item['pub']}", host, line
                        )
                    )
        elif kind in ("pub_init", "sub_init"):
            if ev["node"] not in topo.nodes:
                host, line = _where(logd, i)
                out.append(
                    Violation("dangling-reference", f"unknown node {ev['node']}", host, line)
                )
    return out


def validate(logd: EventLog) -> list[Violation]:
    """Check every log invariant and return all violations found.

    Covered: dangling entity references, duplicate entity declarations,
    per-publisher sequence regressions, callback start/end pairing
    (unterminated callbacks, duplicate or stray ends, end before start,
    start and end on different threads).
    """
    out = list(_reference_warnings(logd))
    seen_decl: dict[tuple[str, str], int] = {}
    last_seq: dict[str, int] = {}
    open_cbs: dict[tuple[str, str], int] = {}
    closed_cbs: set[tuple[str, str]] = set()

    for i, ev in enumerate(logd.events):
        kind = ev.kind
        if kind in ("node_init", "pub_init", "sub_init"):
            entity = {"node_init": "node", "pub_init": "pub", "sub_init": "sub"}[kind]
            key = (entity, ev[entity])
            if key in seen_decl:
                host, line = _where(logd, i)
                out.append(
                    Violation("duplicate-declaration", f"{entity} {ev[entity]} declared twice", host, line)
                )
            else:
                seen_decl[key] = i
        elif kind == "publish":
            pub = ev["pub"]
            seq = ev["seq"]
            prev = last_seq.get(pub)
            if prev is not None and seq <= prev:
                host, line = _where(logd, i)
                out.append(
                    Violation(
                        "sequence-regression",
                        f"publisher {pub} published seq {seq} after {prev}",
                        host,
                        line,
                    )
                )
            last_seq[pub] = seq if prev is None else max(prev, seq)
        elif kind == "cb_start":
            key = (ev["sub"], ev["cb"])
            if key in open_cbs or key in closed_cbs:
                host, line = _where(logd, i)
                out.append(
                    Violation("duplicate-callback", f"callback {ev['cb']} started twice", host, line)
                )
            else:
                open_cbs[key] = i
        elif kind == "cb_end":
            key = (ev["sub"], ev["cb"])
            start_i = open_cbs.pop(key, None)
            if start_i is None:
                host, line = _where(logd, i)
                verb = "ended twice" if key in closed_cbs else "ended without a start"
                out.append(Violation("stray-callback-end", f"callback {ev['cb']} {verb}", host, line))
                continue
            closed_cbs.add(key)
            start = logd.events[start_i]
            if ev.t < start.t:
                host, line = _where(logd, i)
                out.append(
                    Violation(
                        "negative-duration",
                        f"callback {ev['cb']} ends at {ev.t} before its start {start.t}",
                        host,
                        line,
                    )
                )
            if (ev.host, ev.pid, ev.tid) != (start.host, start.pid, start.tid):
                host, line = _where(logd, i)
                out.append(
                    Violation(
                        "thread-mismatch",
                        f"callback {ev['cb']} starts on tid {start.tid} but ends on tid {ev.tid}",
                        host,
                        line,
                    )
                )
    for (sub, cb), start_i in open_cbs.items():
        host, line = _where(logd, start_i)
        out.append(
            Violation("unterminated-callback", f"callback {cb} on {sub} never ends", host, line)
        )
    return out


def link_inputs(ev: TraceEvent) -> list[MessageKey]:
    """Message keys named by a link event's ``in`` list."""
    return [MessageKey(item["pub"], item["seq"]) for item in ev["in"]]
