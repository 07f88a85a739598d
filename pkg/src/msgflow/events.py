"""Trace event records and their JSON-lines encoding.

A trace bundle is a directory of ``<host>.jsonl`` files.  Every line is
one JSON object carrying the base fields ``t`` (integer nanoseconds),
``host``, ``pid``, ``tid`` and ``kind``, plus the payload fields of its
kind.  Seven kinds exist:

========== =====================================================
kind       payload fields
========== =====================================================
node_init  node, name
pub_init   pub, node, topic
sub_init   sub, node, topic, queue_depth
publish    pub, seq
cb_start   sub, cb, src_pub, src_seq
cb_end     sub, cb
link       out_pub, out_seq, in (list of {pub, seq})
========== =====================================================

Unknown payload fields are carried through untouched so that decode and
encode compose to the identity.  Encoding is deterministic: required
fields appear in a fixed order, extra fields in sorted order, so the
same event always serializes to the same bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping, NamedTuple

from msgflow.errors import TraceFormatError

__all__ = [
    "EVENT_KINDS",
    "MessageKey",
    "TraceEvent",
    "decode_event",
    "encode_event",
]

_BASE_FIELDS = ("t", "host", "pid", "tid", "kind")

# Required payload fields per kind, in canonical serialization order.
EVENT_KINDS: dict[str, tuple[str, ...]] = {
    "node_init": ("node", "name"),
    "pub_init": ("pub", "node", "topic"),
    "sub_init": ("sub", "node", "topic", "queue_depth"),
    "publish": ("pub", "seq"),
    "cb_start": ("sub", "cb", "src_pub", "src_seq"),
    "cb_end": ("sub", "cb"),
    "link": ("out_pub", "out_seq", "in"),
}

_STR_FIELDS = frozenset(
    {"node", "name", "pub", "sub", "cb", "topic", "src_pub", "out_pub"}
)
_INT_FIELDS = frozenset({"seq", "src_seq", "queue_depth", "out_seq"})


class MessageKey(NamedTuple):
    """Identity of one published message: stamped at publish, echoed at receipt."""

    pub: str
    seq: int

    def __str__(self) -> str:
        return f"{self.pub}:{self.seq}"

    @classmethod
    def parse(cls, text: str) -> "MessageKey":
        pub, sep, seq = text.rpartition(":")
        if not sep or not pub:
            raise TraceFormatError(f"message key {text!r} is not of the form PUB:SEQ")
        try:
            return cls(pub, int(seq))
        except ValueError:
            raise TraceFormatError(
                f"message key {text!r} has a non-integer sequence number"
            ) from None


@dataclass(frozen=True, slots=True)
class TraceEvent:
    """One trace record.

    ``payload`` holds the kind-specific fields plus any extra fields the
    producer attached; both survive a round trip through the codec.
    """

    t: int
    host: str
    pid: int
    tid: int
    kind: str
    payload: Mapping[str, Any] = field(default_factory=dict)

    def __getitem__(self, key: str) -> Any:
        return self.payload[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self.payload.get(key, default)


def _check(event: TraceEvent) -> None:
    required = EVENT_KINDS.get(event.kind)
    if required is None:
        raise TraceFormatError(f"unknown kind {event.kind!r}")
    if not isinstance(event.t, int) or isinstance(event.t, bool):
        raise TraceFormatError(f"timestamp t must be an integer, got {event.t!r}")
    if event.t < 0:
        raise TraceFormatError(f"negative timestamp t={event.t}")
    if not isinstance(event.host, str) or not event.host:
        raise TraceFormatError(f"host must be a non-empty string, got {event.host!r}")
    for name in ("pid", "tid"):
        value = getattr(event, name)
        if not isinstance(value, int) or isinstance(value, bool):
            raise TraceFormatError(f"{name} must be an integer, got {value!r}")
    for name in required:
        if name not in event.payload:
            raise TraceFormatError(f"{event.kind} record is missing field {name!r}")
        value = event.payload[name]
        if name in _STR_FIELDS and (not isinstance(value, str) or not value):
            raise TraceFormatError(
                f"{event.kind} field {name!r} must be a non-empty string, got {value!r}"
            )
        if name in _INT_FIELDS:
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise TraceFormatError(
                    f"{event.kind} field {name!r} must be a non-negative "
                    f"integer, got {value!r}"
                )
            if name == "queue_depth" and value < 1:
                raise TraceFormatError(f"queue_depth must be >= 1, got {value}")
    if event.kind == "link":
        inputs = event.payload["in"]
        if not isinstance(inputs, list) or not inputs:
            raise TraceFormatError("link field 'in' must be a non-empty list")
        for item in inputs:
            if (
                not isinstance(item, dict)
                or not isinstance(item.get("pub"), str)
                or not isinstance(item.get("seq"), int)
                or isinstance(item.get("seq"), bool)
                or item["seq"] < 0
            ):
                raise TraceFormatError(
                    f"link input {item!r} must be an object with 'pub' and 'seq'"
                )


def _ordered_items(event: TraceEvent) -> Iterator[tuple[str, Any]]:
    yield from (
        ("t", event.t),
        ("host", event.host),
        ("pid", event.pid),
        ("tid", event.tid),
        ("kind", event.kind),
    )
    required = EVENT_KINDS[event.kind]
    for name in required:
        yield name, event.payload[name]
    for name in sorted(event.payload.keys()):
        if name not in required:
            yield name, event.payload[name]


def encode_event(event: TraceEvent) -> str:
    """Serialize one event to its canonical single-line JSON form.

    Raises :class:`TraceFormatError` if the event violates the grammar,
    naming the offending field.  The output is byte-deterministic for a
    given event.
    """
    _check(event)
    return json.dumps(dict(_ordered_items(event)), separators=(",", ":"))


def decode_record(obj: Any) -> TraceEvent:
    """Turn one already-parsed JSON object into a validated event."""
    if not isinstance(obj, dict):
        raise TraceFormatError(f"record must be a JSON object, got {type(obj).__name__}")
    return _decode_owned(dict(obj))


def _decode_owned(obj: dict) -> TraceEvent:
    """decode_record for a dict the caller owns: base fields are popped
    out and the remainder becomes the payload without copying."""
    try:
        event = TraceEvent(
            t=obj.pop("t"),
            host=obj.pop("host"),
            pid=obj.pop("pid"),
            tid=obj.pop("tid"),
            kind=obj.pop("kind"),
            payload=obj,
        )
    except KeyError as exc:
        raise TraceFormatError(f"record is missing field {exc.args[0]!r}") from None
    except (AttributeError, TypeError):
        raise TraceFormatError(
            f"record must be a JSON object, got {type(obj).__name__}"
        ) from None
    _check(event)
    return event


def decode_event(line: str) -> TraceEvent:
    """Parse one JSON line into an event, validating the grammar."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"malformed JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise TraceFormatError(f"record must be a JSON object, got {type(obj).__name__}")
    return _decode_owned(obj)
