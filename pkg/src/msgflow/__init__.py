"""Offline message-flow analysis for distributed publish-subscribe traces.

Reconstructs per-message flow graphs from multi-host trace bundles,
corrects clock skew, extracts critical paths and latency breakdowns,
diagnoses drops and outliers, renders timelines, and ships a
deterministic simulator that produces ground-truth-annotated traces.
"""

from msgflow.analysis import (
    Breakdown,
    BreakdownRow,
    CriticalPath,
    MessageFlow,
    Segment,
    backward_flow,
    breakdown,
    critical_path,
    forward_flow,
)
from msgflow.clock_sync import (
    ClockCorrection,
    apply_corrections,
    estimate_corrections,
    load_corrections,
    save_corrections,
)
from msgflow.diagnostics import (
    DropReport,
    EdgeStats,
    Outlier,
    ThreadTimeline,
    detect_drops,
    detect_outliers,
    latency_stats,
    thread_states,
)
from msgflow.errors import (
    BundleError,
    ConfigError,
    GraphError,
    MsgflowError,
    SyncError,
    TraceFormatError,
    UnknownMessageError,
    ValidationError,
)
from msgflow.events import MessageKey, TraceEvent, decode_event, encode_event
from msgflow.flowgraph import (
    CallbackInstance,
    FlowGraph,
    MessageInstance,
    build_flow_graph,
)
from msgflow.ingest import EventLog, Topology, Violation, load_bundle, validate
from msgflow.render import (
    TimelineSpec,
    flow_graph_dot,
    render_report,
    render_thread_view,
    render_timeline,
)
from msgflow.simulator import (
    GroundTruth,
    SimConfig,
    load_config,
    load_truth,
    resolve_config,
    simulate,
)

__version__ = "0.1.0"

__all__ = [
    "Breakdown",
    "BreakdownRow",
    "BundleError",
    "CallbackInstance",
    "ClockCorrection",
    "ConfigError",
    "CriticalPath",
    "DropReport",
    "EdgeStats",
    "EventLog",
    "FlowGraph",
    "GraphError",
    "GroundTruth",
    "MessageFlow",
    "MessageInstance",
    "MessageKey",
    "MsgflowError",
    "Outlier",
    "Segment",
    "SimConfig",
    "SyncError",
    "ThreadTimeline",
    "TimelineSpec",
    "Topology",
    "TraceEvent",
    "TraceFormatError",
    "UnknownMessageError",
    "ValidationError",
    "Violation",
    "apply_corrections",
    "backward_flow",
    "breakdown",
    "build_flow_graph",
    "critical_path",
    "decode_event",
    "detect_drops",
    "detect_outliers",
    "encode_event",
    "estimate_corrections",
    "flow_graph_dot",
    "forward_flow",
    "latency_stats",
    "load_bundle",
    "load_config",
    "load_corrections",
    "load_truth",
    "render_report",
    "render_thread_view",
    "render_timeline",
    "resolve_config",
    "save_corrections",
    "simulate",
    "thread_states",
    "validate",
    "__version__",
]
