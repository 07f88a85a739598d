"""Command-line entry point.

Exit codes: 0 on success, 1 on analysis errors (bad bundles, unknown
messages, infeasible sync, ...), 2 on usage errors (argparse).

Multi-host analyses run clock sync implicitly; pass ``--no-sync`` for
pre-corrected bundles or ``--corrections FILE`` to reuse saved
corrections.  ``MSGFLOW_LOG`` selects diagnostic verbosity
(quiet | info | debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from msgflow import analysis, clock_sync, diagnostics, render
from msgflow.errors import MsgflowError
from msgflow.events import MessageKey
from msgflow.flowgraph import build_flow_graph
from msgflow.ingest import EventLog, load_bundle, validate
from msgflow.simulator import resolve_config, simulate

log = logging.getLogger("msgflow")


def _setup_logging() -> None:
    level = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("MSGFLOW_LOG", "quiet").lower(), logging.WARNING
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _parse_window(text: str) -> tuple[int, int]:
    try:
        lo, _, hi = text.partition(":")
        return int(lo), int(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected T0:T1 nanosecond window, got {text!r}") from None


def _parse_key(text: str) -> MessageKey:
    try:
        return MessageKey.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_sync_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--no-sync", action="store_true", help="skip implicit clock correction")
    sub.add_argument("--corrections", metavar="FILE", help="apply saved corrections instead of estimating")


def _add_json_flag(sub: argparse.ArgumentParser) -> None:
    sub.add_argument(
        "--json",
        nargs="?",
        const="-",
        default=None,
        metavar="FILE",
        help="emit JSON (to FILE, or stdout when no FILE given)",
    )


def _load(args: argparse.Namespace, sync: bool = True) -> EventLog:
    logd = load_bundle(args.bundle)
    log.info("loaded %d events from %d host(s)", len(logd.events), len(logd.hosts))
    for warning in logd.warnings:
        log.info("warning: %s", warning)
    if getattr(args, "corrections", None):
        corrections = clock_sync.load_corrections(args.corrections)
        logd = clock_sync.apply_corrections(logd, corrections)
        log.info("applied corrections from %s", args.corrections)
    elif sync and not getattr(args, "no_sync", False) and len(logd.hosts) > 1:
        corrections = clock_sync.estimate_corrections(logd)
        logd = clock_sync.apply_corrections(logd, corrections)
        log.info("estimated and applied corrections for %d host(s)", len(corrections))
    return logd


def _emit(args: argparse.Namespace, payload: object, text: str) -> None:
    if args.json is None:
        if text:
            print(text, end="" if text.endswith("\n") else "\n")
        return
    body = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.json == "-":
        print(body, end="")
    else:
        Path(args.json).write_text(body, encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands


def _cmd_validate(args: argparse.Namespace) -> int:
    logd = load_bundle(args.bundle, strict=args.strict)
    violations = validate(logd)
    payload = [
        {"kind": v.kind, "message": v.message, "host": v.host, "line": v.line}
        for v in violations
    ]
    _emit(args, payload, "\n".join(str(v) for v in violations) + ("\n" if violations else ""))
    return 1 if violations else 0


def _cmd_sync(args: argparse.Namespace) -> int:
    logd = load_bundle(args.bundle)
    corrections = clock_sync.estimate_corrections(logd, reference=args.reference)
    if args.out:
        clock_sync.save_corrections(args.out, corrections)
    else:
        payload = []
        for c in corrections:
            entry = {
                "host": c.host,
                "offset_ns": c.offset_ns,
                "drift_ppm": c.drift_ppm,
                "reference_host": c.reference_host,
                "method": c.method,
            }
            if c.method == "one-sided":
                entry["caveat"] = (
                    "traffic flows one way only; the offset may absorb "
                    "up to the minimum one-way delay"
                )
            payload.append(entry)
        print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _cmd_graph(args: argparse.Namespace) -> int:
    logd = _load(args)
    graph = build_flow_graph(logd)
    dot = render.flow_graph_dot(graph)
    if args.dot:
        if args.dot == "-":
            print(dot, end="")
        else:
            Path(args.dot).write_text(dot, encoding="utf-8")
    payload = {
        "messages": len(graph.messages),
        "callbacks": len(graph.callbacks),
        "transport_edges": len(graph.transport_edges),
        "causal_edges": len(graph.causal_edges),
        "unmatched": {sub: len(keys) for sub, keys in sorted(graph.unmatched.items())},
    }
    text = (
        f"messages={payload['messages']} callbacks={payload['callbacks']} "
        f"transport_edges={payload['transport_edges']} causal_edges={payload['causal_edges']} "
        f"unmatched={sum(payload['unmatched'].values())}\n"
    )
    _emit(args, payload, "" if args.dot else text)
    return 0


def _segment_dict(seg: analysis.Segment) -> dict:
    return {
        "kind": seg.kind,
        "label": seg.label,
        "start_ns": seg.start_ns,
        "end_ns": seg.end_ns,
        "duration_ns": seg.duration_ns,
    }


def _cmd_flow(args: argparse.Namespace) -> int:
    logd = _load(args)
    graph = build_flow_graph(logd)
    if args.direction == "bwd":
        flow = analysis.backward_flow(graph, args.message)
    else:
        flow = analysis.forward_flow(graph, args.message)
    payload: dict = {
        "root": str(flow.root),
        "direction": flow.direction,
        "messages": sorted(str(k) for k in flow.messages),
        "callbacks": sorted(flow.callbacks),
    }
    lines = [
        f"flow from {flow.root} ({flow.direction}): "
        f"{len(flow.messages)} messages, {len(flow.callbacks)} callbacks"
    ]
    path = None
    if args.critical_path or args.breakdown:
        path = analysis.critical_path(flow)
    if args.critical_path:
        assert path is not None
        payload["critical_path"] = {
            "total_ns": path.total_ns,
            "total_ms": path.total_ms,
            "source": str(path.source),
            "sink": str(path.sink),
            "chain": [str(step) for step in path.chain],
            "segments": [_segment_dict(seg) for seg in path.segments],
        }
        lines.append(f"critical path {path.total_ms:.3f} ms: {path.source} -> {path.sink}")
        for seg in path.segments:
            lines.append(f"  {seg.kind:<10} {seg.label:<36} {seg.duration_ns / 1e6:10.3f} ms")
    if args.breakdown:
        assert path is not None
        result = analysis.breakdown(path)
        payload["breakdown"] = {
            "rows": [
                {"label": row.label, "time_ms": row.time_ms, "percent": row.percent}
                for row in result.rows
            ],
            "total_ms": result.total_ms,
        }
        lines.append(render.render_report(result).rstrip("\n"))
    _emit(args, payload, "\n".join(lines) + "\n")
    return 0


def _cmd_drops(args: argparse.Namespace) -> int:
    logd = _load(args)
    graph = build_flow_graph(logd)
    report = diagnostics.detect_drops(graph, tail_window_ns=round(args.tail_ms * 1e6))
    payload = {
        "tail_window_ns": report.tail_window_ns,
        "total_dropped": report.total_dropped,
        "subscriptions": [
            {
                "sub": s.sub,
                "topic": s.topic,
                "node": s.node,
                "published": s.published,
                "drop_count": s.drop_count,
                "dropped": [str(k) for k in s.dropped],
                "in_flight": [str(k) for k in s.in_flight],
            }
            for s in report.subscriptions
        ],
    }
    lines = []
    for s in report.subscriptions:
        lines.append(
            f"{s.sub} ({s.topic}@{s.node}): {s.drop_count} dropped, "
            f"{len(s.in_flight)} in flight, {s.published} seen"
        )
    lines.append(f"total dropped: {report.total_dropped}")
    _emit(args, payload, "\n".join(lines) + "\n")
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    logd = _load(args)
    graph = build_flow_graph(logd)
    rows = diagnostics.latency_stats(graph, topic=args.topic, node=args.node)
    payload = [
        {
            "publisher": r.publisher,
            "subscription": r.subscription,
            "topic": r.topic,
            "pub_node": r.pub_node,
            "sub_node": r.sub_node,
            "count": r.count,
            "min_ns": r.min_ns,
            "p50_ns": r.p50_ns,
            "p95_ns": r.p95_ns,
            "p99_ns": r.p99_ns,
            "max_ns": r.max_ns,
            "mean_ns": r.mean_ns,
        }
        for r in rows
    ]
    lines = [
        f"{r.topic}: {r.publisher} -> {r.subscription} n={r.count} "
        f"min={r.min_ns / 1e6:.3f} p50={r.p50_ns / 1e6:.3f} p95={r.p95_ns / 1e6:.3f} "
        f"p99={r.p99_ns / 1e6:.3f} max={r.max_ns / 1e6:.3f} mean={r.mean_ns / 1e6:.3f} ms"
        for r in rows
    ]
    _emit(args, payload, "\n".join(lines) + ("\n" if lines else ""))
    return 0


def _cmd_threads(args: argparse.Namespace) -> int:
    logd = _load(args)
    timelines = diagnostics.thread_states(logd)
    payload = [
        {
            "host": t.host,
            "pid": t.pid,
            "tid": t.tid,
            "node": t.node,
            "first_ns": t.first_ns,
            "last_ns": t.last_ns,
            "active_ns": t.active_ns,
            "duty": t.duty,
            "intervals": len(t.intervals),
            "merged_overlaps": t.merged_overlaps,
        }
        for t in timelines
    ]
    lines = [
        f"{t.host} pid={t.pid} tid={t.tid} node={t.node or '?'} "
        f"active={t.active_ns / 1e6:.3f} ms duty={100 * t.duty:.1f}% "
        f"overlaps={t.merged_overlaps}"
        for t in timelines
    ]
    _emit(args, payload, "\n".join(lines) + ("\n" if lines else ""))
    return 0


def _cmd_outliers(args: argparse.Namespace) -> int:
    logd = _load(args)
    outliers = diagnostics.detect_outliers(logd, k=args.k)
    payload = [
        {
            "sub": o.sub,
            "node": o.node,
            "cb": o.cb,
            "start_ns": o.start_ns,
            "duration_ns": o.duration_ns,
            "median_ns": o.median_ns,
            "factor": o.factor,
        }
        for o in outliers
    ]
    lines = [
        f"{o.cb} ({o.sub}@{o.node}): {o.duration_ns / 1e6:.3f} ms "
        f"vs median {o.median_ns / 1e6:.3f} ms ({o.factor:.1f}x)"
        for o in outliers
    ]
    _emit(args, payload, "\n".join(lines) + ("\n" if lines else ""))
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    config = resolve_config(args.config)
    truth = simulate(config, args.out)
    print(
        f"simulated {len(config.hosts)} host(s): {len(truth.matches)} matches, "
        f"{len(truth.drops)} drops -> {args.out}"
    )
    return 0


def _cmd_render(args: argparse.Namespace) -> int:
    logd = _load(args)
    if args.threads:
        svg = render.render_thread_view(logd, window=args.window)
    else:
        graph = build_flow_graph(logd)
        flow = None
        if args.message is not None:
            flow = analysis.forward_flow(graph, args.message)
        spec = render.TimelineSpec(window=args.window, flow=flow)
        svg = render.render_timeline(logd, spec, graph=graph)
    Path(args.out).write_text(svg, encoding="utf-8")
    log.info("wrote %s", args.out)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msgflow",
        description="Offline message-flow analysis for distributed pub-sub traces.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("validate", help="check a bundle against the trace grammar")
    p.add_argument("bundle")
    p.add_argument("--strict", action="store_true", help="fail load on first violation")
    _add_json_flag(p)
    p.set_defaults(func=_cmd_validate)

    p = commands.add_parser("sync", help="estimate per-host clock corrections")
    p.add_argument("bundle")
    p.add_argument("--reference", metavar="HOST", help="host to leave uncorrected")
    p.add_argument("--out", metavar="FILE", help="write corrections.json here")
    p.set_defaults(func=_cmd_sync)

    p = commands.add_parser("graph", help="build the flow graph and report/export it")
    p.add_argument("bundle")
    p.add_argument("--dot", nargs="?", const="-", metavar="FILE", help="emit DOT (stdout when no FILE)")
    _add_sync_flags(p)
    _add_json_flag(p)
    p.set_defaults(func=_cmd_graph)

    p = commands.add_parser("flow", help="extract one message's flow")
    p.add_argument("bundle")
    p.add_argument("--message", type=_parse_key, required=True, metavar="PUB:SEQ")
    p.add_argument("--direction", choices=("fwd", "bwd"), default="fwd")
    p.add_argument("--critical-path", action="store_true")
    p.add_argument("--breakdown", action="store_true")
    _add_sync_flags(p)
    _add_json_flag(p)
    p.set_defaults(func=_cmd_flow)

    p = commands.add_parser("drops", help="report dropped vs in-flight messages")
    p.add_argument("bundle")
    p.add_argument("--tail-ms", type=float, default=1000.0, help="in-flight horizon before trace end")
    _add_sync_flags(p)
    _add_json_flag(p)
    p.set_defaults(func=_cmd_drops)

    p = commands.add_parser("stats", help="per-edge transport latency statistics")
    p.add_argument("bundle")
    p.add_argument("--topic", metavar="T")
    p.add_argument("--node", metavar="N")
    _add_sync_flags(p)
    _add_json_flag(p)
    p.set_defaults(func=_cmd_stats)

    p = commands.add_parser("threads", help="executor activity summary per thread")
    p.add_argument("bundle")
    _add_sync_flags(p)
    _add_json_flag(p)
    p.set_defaults(func=_cmd_threads)

    p = commands.add_parser("outliers", help="callback executions far above their median")
    p.add_argument("bundle")
    p.add_argument("--k", type=float, default=5.0, help="median multiplier threshold")
    _add_sync_flags(p)
    _add_json_flag(p)
    p.set_defaults(func=_cmd_outliers)

    p = commands.add_parser("simulate", help="run a workload config, write bundle + truth")
    p.add_argument("--config", required=True, help="config path or built-in name")
    p.add_argument("--out", required=True, help="output bundle directory")
    p.set_defaults(func=_cmd_simulate)

    p = commands.add_parser("render", help="render an SVG timeline or thread view")
    p.add_argument("bundle")
    p.add_argument("--message", type=_parse_key, metavar="PUB:SEQ", help="highlight this flow")
    p.add_argument("--window", type=_parse_window, metavar="T0:T1", help="nanosecond window")
    p.add_argument("--threads", action="store_true", help="thread activity view")
    p.add_argument("-o", "--out", required=True, metavar="FILE")
    _add_sync_flags(p)
    p.set_defaults(func=_cmd_render)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    try:
        return args.func(args)
    except MsgflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
