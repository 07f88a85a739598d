"""End-to-end checks of the msgflow command line.

Everything runs in-process through cli.main() so exit codes and
stdout/stderr can be asserted directly.  Usage errors surface as
SystemExit(2) from argparse; analysis errors return 1 with an
"error: ..." line on stderr.
"""

import json
import re
import xml.etree.ElementTree as ET

import pytest

from msgflow import cli
from msgflow.simulator import load_truth

from tracegen import ev, prelude, write_bundle


@pytest.fixture
def run(capsys):
    def invoke(*argv):
        code = cli.main([str(a) for a in argv])
        captured = capsys.readouterr()
        return code, captured.out, captured.err

    return invoke


@pytest.fixture
def bad_bundle(tmp_path):
    # "ghost" is never declared, so the publish dangles
    events = prelude(node="n", pubs=[("p", "t")], subs=[("s", "t")]) + [
        ev(10, "publish", pub="ghost", seq=0),
    ]
    return write_bundle(tmp_path / "bad", events)


# ---------------------------------------------------------------------------
# usage errors (argparse owns these: SystemExit with code 2)


def test_no_command_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 2


def test_unknown_command_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate", "x"])
    assert exc.value.code == 2


def test_bad_window_format_is_a_usage_error(table1_bundle):
    with pytest.raises(SystemExit) as exc:
        cli.main(["render", str(table1_bundle), "--window", "123", "-o", "x.svg"])
    assert exc.value.code == 2


def test_bad_message_key_is_a_usage_error(table1_bundle):
    with pytest.raises(SystemExit) as exc:
        cli.main(["flow", str(table1_bundle), "--message", "no-seq-here"])
    assert exc.value.code == 2


def test_missing_bundle_reports_error(run, tmp_path):
    code, out, err = run("validate", tmp_path / "nowhere")
    assert code == 1
    assert err.startswith("error:")
    assert "nowhere" in err


# ---------------------------------------------------------------------------
# validate


def test_validate_clean_bundle(run, table1_bundle):
    code, out, err = run("validate", table1_bundle)
    assert code == 0
    assert out == ""
    assert err == ""


def test_validate_reports_violations(run, bad_bundle):
    code, out, err = run("validate", bad_bundle)
    assert code == 1
    assert "dangling-reference" in out

    code, out, err = run("validate", bad_bundle, "--json")
    assert code == 1
    payload = json.loads(out)
    assert isinstance(payload, list) and payload
    assert set(payload[0]) == {"kind", "message", "host", "line"}
    assert payload[0]["kind"] == "dangling-reference"


def test_validate_strict_fails_the_load(run, bad_bundle):
    code, out, err = run("validate", bad_bundle, "--strict")
    assert code == 1
    assert err.startswith("error:")


# ---------------------------------------------------------------------------
# sync


def test_sync_prints_corrections(run, slam_onboard_bundle):
    code, out, err = run("sync", slam_onboard_bundle)
    assert code == 0
    payload = json.loads(out)
    assert {entry["host"] for entry in payload} == {"base", "robot"}
    by_host = {entry["host"]: entry for entry in payload}
    # "base" sorts first, so it is the default reference and stays put
    assert by_host["base"]["offset_ns"] == 0
    assert by_host["base"]["method"] == "identity"
    assert by_host["robot"]["offset_ns"] != 0
    assert by_host["robot"]["reference_host"] == "base"
    # map messages only ever cross robot -> base, so the fit is one-sided
    # and the output must say what that does to the offset
    assert by_host["robot"]["method"] == "one-sided"
    assert "one way" in by_host["robot"]["caveat"]


def test_sync_reference_flag(run, slam_onboard_bundle):
    code, out, err = run("sync", slam_onboard_bundle, "--reference", "robot")
    assert code == 0
    by_host = {entry["host"]: entry for entry in json.loads(out)}
    assert by_host["robot"]["offset_ns"] == 0
    assert by_host["base"]["offset_ns"] != 0


def test_saved_corrections_match_implicit_sync(run, slam_onboard_bundle, tmp_path):
    corr = tmp_path / "corr.json"
    code, out, err = run("sync", slam_onboard_bundle, "--out", corr)
    assert code == 0
    assert corr.exists()

    code, implicit, _ = run("stats", slam_onboard_bundle, "--json")
    assert code == 0
    code, reused, _ = run("stats", slam_onboard_bundle, "--corrections", corr, "--json")
    assert code == 0
    assert reused == implicit

    code, unsynced, _ = run("stats", slam_onboard_bundle, "--no-sync", "--json")
    assert code == 0
    assert unsynced != implicit


def test_implicit_sync_tightens_cross_host_latency(run, slam_onboard_bundle):
    def min_for_map(raw):
        rows = [r for r in json.loads(raw) if r["topic"] == "map"]
        assert rows
        return min(r["min_ns"] for r in rows)

    _, synced, _ = run("stats", slam_onboard_bundle, "--json")
    _, unsynced, _ = run("stats", slam_onboard_bundle, "--no-sync", "--json")
    # the base clock runs 5 ms ahead, so raw map latencies carry the skew;
    # the one-sided fit pulls the minimum observed delay down to ~zero
    assert min_for_map(unsynced) > 5_000_000
    assert min_for_map(synced) < 1_000_000
    assert min_for_map(synced) >= 0


# ---------------------------------------------------------------------------
# graph


def test_graph_summary_line(run, table1_bundle):
    code, out, err = run("graph", table1_bundle)
    assert code == 0
    assert re.fullmatch(
        r"messages=\d+ callbacks=\d+ transport_edges=\d+ causal_edges=\d+ unmatched=\d+\n",
        out,
    )


def test_graph_json_schema(run, table1_bundle):
    code, out, err = run("graph", table1_bundle, "--json")
    assert code == 0
    payload = json.loads(out)
    assert set(payload) == {
        "messages",
        "callbacks",
        "transport_edges",
        "causal_edges",
        "unmatched",
    }
    assert payload["messages"] > 0
    assert payload["transport_edges"] > 0


def test_graph_dot_to_file_and_stdout(run, table1_bundle, tmp_path):
    dot_path = tmp_path / "g.dot"
    code, out, err = run("graph", table1_bundle, "--dot", dot_path)
    assert code == 0
    assert out == ""
    text = dot_path.read_text(encoding="utf-8")
    assert text.startswith("digraph msgflow {")

    code, out, err = run("graph", table1_bundle, "--dot")
    assert code == 0
    assert out == text


# ---------------------------------------------------------------------------
# flow


def test_flow_text_output(run, table1_bundle):
    root = load_truth(table1_bundle).e2e[0]["root"]
    code, out, err = run("flow", table1_bundle, "--message", root)
    assert code == 0
    assert out.startswith(f"flow from {root} (fwd):")

    code, out, err = run(
        "flow", table1_bundle, "--message", root, "--critical-path", "--breakdown"
    )
    assert code == 0
    assert "critical path" in out
    assert "segment" in out and "percent" in out


def test_flow_json_matches_simulated_end_to_end(run, table1_bundle, tmp_path):
    truth = load_truth(table1_bundle)
    entry = truth.e2e[0]
    out_file = tmp_path / "flow.json"
    code, out, err = run(
        "flow",
        table1_bundle,
        "--message",
        entry["root"],
        "--critical-path",
        "--breakdown",
        "--json",
        out_file,
    )
    assert code == 0
    assert out == ""

    payload = json.loads(out_file.read_text(encoding="utf-8"))
    assert payload["root"] == entry["root"]
    assert payload["direction"] == "fwd"
    cp = payload["critical_path"]
    assert cp["total_ns"] == entry["total_ns"]
    assert cp["source"] == entry["root"]
    assert [set(row) for row in payload["breakdown"]["rows"]] == [
        {"label", "time_ms", "percent"}
    ] * len(payload["breakdown"]["rows"])
    assert payload["breakdown"]["total_ms"] == pytest.approx(cp["total_ms"])
    assert sum(r["percent"] for r in payload["breakdown"]["rows"]) == pytest.approx(100.0)


def test_flow_backward_direction(run, table1_bundle):
    truth = load_truth(table1_bundle)
    # any match's delivered message has history to walk backwards
    match = truth.matches[-1]
    key = f"{match['pub']}:{match['seq']}"
    code, out, err = run("flow", table1_bundle, "--message", key, "--direction", "bwd")
    assert code == 0
    assert f"flow from {key} (bwd):" in out


def test_flow_unknown_message(run, table1_bundle):
    code, out, err = run("flow", table1_bundle, "--message", "ghost:99")
    assert code == 1
    assert err.startswith("error:")
    assert "unknown message ghost:99" in err


# ---------------------------------------------------------------------------
# diagnostics commands


def test_drops_match_truth_with_zero_tail(run, slam_split_bundle):
    truth = load_truth(slam_split_bundle)
    code, out, err = run(
        "drops", slam_split_bundle, "--tail-ms", "0", "--no-sync", "--json"
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["total_dropped"] == len(truth.drops)
    assert payload["tail_window_ns"] == 0

    code, out, err = run("drops", slam_split_bundle, "--tail-ms", "0", "--no-sync")
    assert code == 0
    assert out.rstrip().endswith(f"total dropped: {len(truth.drops)}")


def test_stats_topic_filter(run, table1_bundle):
    code, out, err = run("stats", table1_bundle, "--json")
    assert code == 0
    rows = json.loads(out)
    assert rows
    topic = rows[0]["topic"]

    code, out, err = run("stats", table1_bundle, "--topic", topic, "--json")
    assert code == 0
    filtered = json.loads(out)
    assert filtered
    assert {r["topic"] for r in filtered} == {topic}
    assert len(filtered) <= len(rows)


def test_threads_json_schema(run, table1_bundle):
    code, out, err = run("threads", table1_bundle, "--json")
    assert code == 0
    rows = json.loads(out)
    assert rows
    for row in rows:
        assert {"host", "pid", "tid", "node", "duty", "active_ns"} <= set(row)
        assert 0.0 <= row["duty"] <= 1.0


def test_outliers_command_runs(run, slam_onboard_bundle):
    code, out, err = run("outliers", slam_onboard_bundle, "--k", "3", "--json")
    assert code == 0
    assert isinstance(json.loads(out), list)


# ---------------------------------------------------------------------------
# simulate + render


def test_simulate_command(run, tmp_path):
    out_dir = tmp_path / "sim"
    code, out, err = run("simulate", "--config", "table1", "--out", out_dir)
    assert code == 0
    truth = load_truth(out_dir)
    line = out.strip()
    assert line == (
        f"simulated 1 host(s): {len(truth.matches)} matches, "
        f"{len(truth.drops)} drops -> {out_dir}"
    )
    assert (out_dir / "robot.jsonl").exists()
    assert (out_dir / "truth.json").exists()


def test_simulate_unknown_config(run, tmp_path):
    code, out, err = run("simulate", "--config", "nope", "--out", tmp_path / "x")
    assert code == 1
    assert err.startswith("error:")
    assert "neither a file nor a built-in" in err


def test_render_writes_svg(run, table1_bundle, tmp_path):
    svg = tmp_path / "t.svg"
    root = load_truth(table1_bundle).e2e[0]["root"]
    code, out, err = run("render", table1_bundle, "--message", root, "-o", svg)
    assert code == 0
    tree = ET.fromstring(svg.read_text(encoding="utf-8"))
    assert tree.tag.endswith("svg")


def test_render_thread_view(run, slam_onboard_bundle, tmp_path):
    svg = tmp_path / "threads.svg"
    code, out, err = run("render", slam_onboard_bundle, "--threads", "-o", svg)
    assert code == 0
    assert svg.stat().st_size > 0


def test_render_empty_window_fails(run, table1_bundle, tmp_path):
    code, out, err = run(
        "render", table1_bundle, "--window", "500:500", "-o", tmp_path / "x.svg"
    )
    assert code == 1
    assert "empty render window" in err


def test_log_env_var_does_not_break_commands(run, table1_bundle, monkeypatch):
    monkeypatch.setenv("MSGFLOW_LOG", "debug")
    code, out, err = run("validate", table1_bundle)
    assert code == 0


# ---------------------------------------------------------------------------
# the whole pipeline on every shipped workload


@pytest.mark.parametrize(
    "fixture", ["table1_bundle", "slam_onboard_bundle", "slam_split_bundle"]
)
def test_pipeline_on_builtin_workloads(run, request, tmp_path, fixture):
    bundle = request.getfixturevalue(fixture)
    truth = load_truth(bundle)
    root = truth.e2e[0]["root"]

    assert run("validate", bundle)[0] == 0
    assert run("sync", bundle)[0] == 0
    assert run("graph", bundle, "--dot", tmp_path / "g.dot")[0] == 0
    assert run("flow", bundle, "--message", root, "--critical-path", "--breakdown")[0] == 0
    assert run("drops", bundle)[0] == 0
    assert run("stats", bundle)[0] == 0
    assert run("threads", bundle)[0] == 0
    assert run("outliers", bundle)[0] == 0
    assert run("render", bundle, "-o", tmp_path / "out.svg")[0] == 0
    assert (tmp_path / "out.svg").stat().st_size > 0
