"""Clock correction estimation and application for multi-host traces.

Hosts stamp events with their own clocks, which disagree by an offset
and a slow drift.  A correction maps one host's timestamps onto the
reference host's timeline:

    corrected(t) = t + offset + drift * (t - t0)

where ``t0`` is the first event timestamp of that host in the log being
corrected and ``drift`` is dimensionless (ppm scale).

Estimation uses matched cross-host message pairs: a publish on one host
and the receiving callback start on another.  Because transmission
takes non-negative time, the true mapping must put every send at or
before its receive.  Writing the residual z = receive - send as a
function of the local time x, each direction's pairs bound the feasible
(slope, intercept) region by the convex hull of its points: the fitted
line must run below all points of the outbound direction and above all
points of the inbound one.  Per direction the fit picks the hull edge
minimizing total one-way delay; with both directions available, the
offset lands midway between the two envelopes and splits the residual
delay evenly.  With one direction the fit touches the envelope: the
minimum observed delay in that direction becomes zero, biasing the
offset by up to the true minimum delay (the caveat reported by the
``sync`` command for one-sided hosts).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from msgflow.errors import SyncError
from msgflow.events import MessageKey, TraceEvent
from msgflow.ingest import EventLog

__all__ = [
    "ClockCorrection",
    "apply_corrections",
    "cross_host_pairs",
    "estimate_corrections",
    "load_corrections",
    "save_corrections",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClockCorrection:
    """Mapping of one host's clock onto the reference host's timeline."""

    host: str
    offset_ns: int
    drift: float
    reference_host: str
    # how the fit was obtained: identity | bidirectional | one-sided
    method: str = "identity"

    @property
    def drift_ppm(self) -> float:
        return self.drift * 1e6

    def corrected(self, t: int, t0: int) -> int:
        return t + self.offset_ns + round(self.drift * (t - t0))


@dataclass(frozen=True)
class _Pair:
    send_host: str
    send_t: int
    recv_host: str
    recv_t: int


def cross_host_pairs(logd: EventLog) -> list[_Pair]:
    """Matched (publish, cb_start) pairs whose endpoints sit on different hosts.

    Two passes: uncorrected clocks can put a receive before its send in
    the merged order, so publishes must all be indexed before matching.
    """
    publishes: dict[MessageKey, TraceEvent] = {}
    for ev in logd.events:
        if ev.kind == "publish":
            publishes.setdefault(MessageKey(ev["pub"], ev["seq"]), ev)
    pairs: list[_Pair] = []
    for ev in logd.events:
        if ev.kind == "cb_start":
            src = publishes.get(MessageKey(ev["src_pub"], ev["src_seq"]))
            if src is not None and src.host != ev.host:
                pairs.append(_Pair(src.host, src.t, ev.host, ev.t))
    return pairs


def _lower_hull(points: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Lower convex hull of integer points pre-sorted by x (distinct x).

    Exact integer arithmetic: a vertex is popped when it does not lie
    strictly below the chord from its predecessor to the new point.
    """
    hull: list[tuple[int, int]] = []
    for x, y in points:
        while len(hull) >= 2:
            x1, y1 = hull[-2]
            x2, y2 = hull[-1]
            if (y2 - y1) * (x - x1) >= (y - y1) * (x2 - x1):
                hull.pop()
            else:
                break
        hull.append((x, y))
    return hull


def _reduce(xs: np.ndarray, zs: np.ndarray, keep_min: bool) -> list[tuple[int, int]]:
    """Collapse duplicate x to the binding z and sort by x."""
    best: dict[int, int] = {}
    for x, z in zip(xs.tolist(), zs.tolist()):
        prev = best.get(x)
        if prev is None or (z < prev if keep_min else z > prev):
            best[x] = z
    return sorted(best.items())


def _envelope_fit(
    xs: np.ndarray, zs: np.ndarray, from_below: bool
) -> tuple[float | None, float]:
    """Fit z ~ c*x + b against one direction's hull.

    ``from_below=True`` keeps the line at or under every point (outbound
    pairs), else at or over (inbound pairs).  Among the hull edges, all
    of which satisfy every constraint, the one whose span contains the
    mean x minimizes the total residual delay.  Returns (slope, value at
    mean x); slope is None when the points do not determine one.
    """
    if from_below:
        pts = _reduce(xs, zs, keep_min=True)
        hull = _lower_hull(pts)
    else:
        pts = _reduce(xs, -zs, keep_min=True)
        hull = [(x, -z) for x, z in _lower_hull(pts)]
    xbar = float(xs.mean())
    if len(hull) == 1:
        return None, float(hull[0][1])
    k = 0
    while k + 2 < len(hull) and hull[k + 1][0] < xbar:
        k += 1
    (x1, z1), (x2, z2) = hull[k], hull[k + 1]
    slope = (z2 - z1) / (x2 - x1)
    return slope, z1 + slope * (xbar - x1)


def _fit_host(
    out_x: np.ndarray,
    out_z: np.ndarray,
    in_x: np.ndarray,
    in_z: np.ndarray,
    x0: int,
) -> tuple[float, float, str]:
    """Fit the residual line z ~ c*(x - x0) + b for one host.

    Outbound pairs bound the line from above (line <= z), inbound from
    below (line >= z).  Returns (c, b, method).
    """
    oxr = out_x - x0
    ixr = in_x - x0
    slope_out = value_out = slope_in = value_in = None
    if len(out_x):
        slope_out, value_out = _envelope_fit(oxr, out_z, from_below=True)
    if len(in_x):
        slope_in, value_in = _envelope_fit(ixr, in_z, from_below=False)

    slopes = [s for s in (slope_out, slope_in) if s is not None]
    # no spread in either direction: drift is unobservable, assume none
    c = sum(slopes) / len(slopes) if slopes else 0.0

    def bounds(slope: float) -> tuple[float, float]:
        hi = float(np.min(out_z - slope * oxr)) if len(out_x) else np.inf
        lo = float(np.max(in_z - slope * ixr)) if len(in_x) else -np.inf
        return lo, hi

    def gap(slope: float) -> float:
        lo, hi = bounds(slope)
        return hi - lo

    lo, hi = bounds(c)
    if lo > hi:
        # the averaged slope left no feasible intercept; maximize the gap
        # (concave in the slope) over a bracket around the candidates
        span = (min(slopes), max(slopes)) if len(slopes) == 2 else (c - 1e-4, c + 1e-4)
        width = (span[1] - span[0]) or 1e-6
        a_lo, a_hi = span[0] - width, span[1] + width
        for _ in range(200):
            m1 = a_lo + (a_hi - a_lo) / 3
            m2 = a_hi - (a_hi - a_lo) / 3
            if gap(m1) < gap(m2):
                a_lo = m1
            else:
                a_hi = m2
        c = (a_lo + a_hi) / 2
        lo, hi = bounds(c)
        if lo > hi:
            raise SyncError("no causally consistent correction exists for these pairs")

    if len(out_x) and len(in_x):
        return c, (lo + hi) / 2, "bidirectional"
    if len(out_x):
        return c, hi, "one-sided"
    return c, lo, "one-sided"


def estimate_corrections(
    logd: EventLog, reference: str | None = None
) -> list[ClockCorrection]:
    """Estimate per-host corrections mapping every host onto the reference.

    The reference host (lexicographically smallest by default) gets the
    identity correction.  Every other host needs at least two matched
    cross-host pairs, in at least one direction, against hosts already
    on the reference timeline; otherwise :class:`SyncError` is raised
    naming the host.  After application every matched receive is at or
    after its matched send.
    """
    hosts = logd.hosts
    if not hosts:
        raise SyncError("cannot synchronize an empty log")
    if reference is None:
        reference = hosts[0]
    elif reference not in hosts:
        raise SyncError(f"reference host {reference!r} does not appear in the log")

    pairs = cross_host_pairs(logd)
    first_t = {h: logd.first_timestamp(h) for h in hosts}
    done: dict[str, ClockCorrection] = {
        reference: ClockCorrection(reference, 0, 0.0, reference)
    }

    remaining = [h for h in hosts if h != reference]
    while remaining:
        progressed = False
        for host in list(remaining):
            out_pairs = [p for p in pairs if p.send_host == host and p.recv_host in done]
            in_pairs = [p for p in pairs if p.recv_host == host and p.send_host in done]
            if len(out_pairs) < 2 and len(in_pairs) < 2:
                continue
            done[host] = _estimate_one(host, out_pairs, in_pairs, done, first_t, reference)
            remaining.remove(host)
            progressed = True
        if not progressed:
            raise SyncError(f"insufficient pairs for host {remaining[0]}")
    return [done[h] for h in hosts]


def _estimate_one(
    host: str,
    out_pairs: list[_Pair],
    in_pairs: list[_Pair],
    done: dict[str, ClockCorrection],
    first_t: dict[str, int | None],
    reference: str,
) -> ClockCorrection:
    def onto_reference(h: str, t: int) -> int:
        corr = done[h]
        return corr.corrected(t, first_t[h] or 0)

    # x: this host's local time, z: residual against the reference timeline
    out_x = np.array([p.send_t for p in out_pairs], dtype=np.int64)
    out_z = np.array(
        [onto_reference(p.recv_host, p.recv_t) - p.send_t for p in out_pairs],
        dtype=np.int64,
    )
    in_x = np.array([p.recv_t for p in in_pairs], dtype=np.int64)
    in_z = np.array(
        [onto_reference(p.send_host, p.send_t) - p.recv_t for p in in_pairs],
        dtype=np.int64,
    )
    x0 = int(min(out_x.min() if len(out_x) else np.inf, in_x.min() if len(in_x) else np.inf))

    c, b, method = _fit_host(out_x, out_z, in_x, in_z, x0)

    t0 = first_t[host]
    assert t0 is not None
    drift = c
    offset = b + c * (t0 - x0)

    # Materialize with integer arithmetic exactly as apply_corrections will,
    # then clamp the offset so no matched pair goes backwards in time.
    def rounded_drift_term(x: np.ndarray) -> np.ndarray:
        return np.rint(drift * (x.astype(np.float64) - t0)).astype(np.int64)

    hi = np.inf
    lo = -np.inf
    if len(out_x):
        hi = int(np.min(out_z - rounded_drift_term(out_x)))
    if len(in_x):
        lo = int(np.max(in_z - rounded_drift_term(in_x)))
    if lo > hi:
        raise SyncError(f"no causally consistent correction exists for host {host}")
    proposed = round(offset)
    if method == "bidirectional":
        offset_ns = min(max(proposed, int(lo)), int(hi))
    elif len(out_x):
        offset_ns = int(hi)
    else:
        offset_ns = int(lo)
    log.info(
        "sync %s: method=%s offset=%dns drift=%.3fppm pairs=%d/%d",
        host, method, offset_ns, drift * 1e6, len(out_x), len(in_x),
    )
    return ClockCorrection(host, offset_ns, drift, reference, method)


def apply_corrections(
    logd: EventLog, corrections: list[ClockCorrection]
) -> EventLog:
    """Rewrite every timestamp onto the reference timeline.

    Per-host event order is preserved; the merged order is re-sorted.
    The anchor t0 for each host is its first event timestamp in ``logd``.
    """
    by_host = {c.host: c for c in corrections}
    for host in logd.hosts:
        if host not in by_host:
            raise SyncError(f"no correction for host {host}")
        if by_host[host].drift <= -1.0:
            raise SyncError(f"correction for host {host} is not monotone")
    t0 = {h: logd.first_timestamp(h) or 0 for h in logd.hosts}
    mapped = [
        replace(ev, t=by_host[ev.host].corrected(ev.t, t0[ev.host]))
        for ev in logd.events
    ]
    out = EventLog.from_events(mapped, logd.lines)
    out.warnings = list(logd.warnings)
    return out


def save_corrections(path: str | Path, corrections: list[ClockCorrection]) -> None:
    """Write corrections as JSON: [{host, offset_ns, drift_ppm, reference_host}]."""
    payload = [
        {
            "host": c.host,
            "offset_ns": c.offset_ns,
            "drift_ppm": c.drift_ppm,
            "reference_host": c.reference_host,
        }
        for c in sorted(corrections, key=lambda c: c.host)
    ]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_corrections(path: str | Path) -> list[ClockCorrection]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return [
            ClockCorrection(
                host=entry["host"],
                offset_ns=int(entry["offset_ns"]),
                drift=float(entry["drift_ppm"]) / 1e6,
                reference_host=entry["reference_host"],
                method="loaded",
            )
            for entry in payload
        ]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise SyncError(f"cannot read corrections file {str(path)!r}: {exc}") from None
