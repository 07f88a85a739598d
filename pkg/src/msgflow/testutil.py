"""Synthetic bundle generation for tests and benchmarks.

Writes trace lines with raw string formatting instead of going through
TraceEvent, because million-event fixtures need to be cheap to produce.
The field order matches the canonical encoder so the files are
representative of real bundles.
"""

from __future__ import annotations

from pathlib import Path

__all__ = ["write_chain_bundle"]


def write_chain_bundle(
    path: str | Path,
    flows: int = 1000,
    depth: int = 4,
    host: str = "synth",
    transport_ns: int = 1_000,
    processing_ns: int = 10_000,
) -> int:
    """Write a linear pipeline bundle: one root publisher feeding a chain of
    ``depth`` subscribe-and-republish stages, ``flows`` messages end to end.

    Events per flow: one root publish plus (cb_start, publish, cb_end) per
    stage.  Returns the total event count including init events.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    # flows never overlap, so per-stage attribution is unambiguous
    step = (transport_ns + processing_ns + 2) * (depth + 1)
    lines: list[str] = []

    def base(pid: int) -> str:
        return f'"host":"{host}","pid":{pid},"tid":{pid}'

    for i in range(depth + 1):
        pid = 100 + i
        lines.append(f'{{"t":0,{base(pid)},"kind":"node_init","node":"n{i}","name":"n{i}"}}')
        lines.append(
            f'{{"t":0,{base(pid)},"kind":"pub_init","pub":"p{i}","node":"n{i}","topic":"T{i}"}}'
        )
        if i > 0:
            lines.append(
                f'{{"t":0,{base(pid)},"kind":"sub_init","sub":"s{i}","node":"n{i}",'
                f'"topic":"T{i - 1}","queue_depth":10}}'
            )

    for f in range(flows):
        t = 1_000 + f * step
        lines.append(f'{{"t":{t},{base(100)},"kind":"publish","pub":"p0","seq":{f}}}')
        for i in range(1, depth + 1):
            pid = 100 + i
            start = t + transport_ns
            end = start + processing_ns
            lines.append(
                f'{{"t":{start},{base(pid)},"kind":"cb_start","sub":"s{i}","cb":"cb_s{i}_{f}",'
                f'"src_pub":"p{i - 1}","src_seq":{f}}}'
            )
            lines.append(f'{{"t":{end},{base(pid)},"kind":"publish","pub":"p{i}","seq":{f}}}')
            lines.append(f'{{"t":{end},{base(pid)},"kind":"cb_end","sub":"s{i}","cb":"cb_s{i}_{f}"}}')
            t = end
    (out / f"{host}.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(lines)
