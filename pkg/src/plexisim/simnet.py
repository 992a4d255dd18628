"""Deterministic discrete-event model of the edge/fog transaction pipeline.

Edge nodes source signed transactions toward the fog tier, where endorsing
peers verify them, the orderer batches them into blocks, and commits land
after a fixed propagation cost. The endorsement stage has a bounded buffer
and no overflow queueing: arrivals beyond it fail immediately, which is
what makes latency blow up once the send rate passes the service capacity.

Two credential models are compared: identity tokens (the registry keeps
only per-device partial key material, transactions stay small) versus a
certificate baseline (certificate plus key pair stored per device, a
certificate attached to every transaction, costlier verification). Default
sizes and cost factors are calibration constants, not measurements.
"""

from __future__ import annotations

import heapq
import itertools
import json
import random
from collections import deque
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

from .errors import ConfigurationError, SimError, ValidationError

# Calibrated defaults: fog endorsement capacity 175 tps in token mode and
# 175/(35/24) = 120 tps in certificate mode.
DEFAULT_FOG_RATE_TPS = 175.0
DEFAULT_EDGE_RATE_TPS = 50.0
CERT_VERIFY_FACTOR = 35.0 / 24.0


class Tier(Enum):
    EDGE = "edge"
    FOG = "fog"


@dataclass(frozen=True)
class NodeSpec:
    node_id: str
    tier: Tier
    service_rate_tps: float
    link_delay_ms: float

    def __post_init__(self):
        if self.service_rate_tps <= 0:
            raise ValidationError(f"node {self.node_id}: service rate must be positive")


@dataclass(frozen=True)
class Topology:
    nodes: tuple

    def edges(self) -> list:
        return [n for n in self.nodes if n.tier is Tier.EDGE]

    def fogs(self) -> list:
        return [n for n in self.nodes if n.tier is Tier.FOG]

    def validate(self) -> None:
        if not self.fogs():
            raise ConfigurationError("topology needs at least one orderer-hosting fog node")
        if not self.edges():
            raise ConfigurationError("topology needs at least one edge node")


def default_topology(n_edge: int = 4, n_fog: int = 2) -> Topology:
    nodes = [
        NodeSpec(f"edge-{i}", Tier.EDGE, DEFAULT_EDGE_RATE_TPS, 25.0) for i in range(n_edge)
    ] + [
        NodeSpec(f"fog-{i}", Tier.FOG, DEFAULT_FOG_RATE_TPS, 10.0) for i in range(n_fog)
    ]
    return Topology(nodes=tuple(nodes))


def topology_from_dict(raw: dict) -> Topology:
    """JSON config form: {"nodes": [{node_id, tier, service_rate_tps, link_delay_ms}]}."""
    nodes = tuple(
        NodeSpec(
            node_id=n["node_id"],
            tier=Tier(n["tier"]),
            service_rate_tps=float(n["service_rate_tps"]),
            link_delay_ms=float(n["link_delay_ms"]),
        )
        for n in raw["nodes"]
    )
    topo = Topology(nodes=nodes)
    topo.validate()
    return topo


@dataclass(frozen=True)
class CredentialModel:
    mode: str                      # "nft" | "certificate"
    cert_bytes: int = 512
    keypair_bytes: int = 1024
    partial_key_bytes: int = 1024
    tx_overhead_bytes: int = 0
    verify_cost_factor: float = 1.0

    def per_device_storage(self) -> int:
        if self.mode == "certificate":
            return self.cert_bytes + self.keypair_bytes
        return self.partial_key_bytes

    @classmethod
    def nft_default(cls) -> "CredentialModel":
        return cls(mode="nft", tx_overhead_bytes=0, verify_cost_factor=1.0)

    @classmethod
    def certificate_default(cls) -> "CredentialModel":
        return cls(mode="certificate", tx_overhead_bytes=512,
                   verify_cost_factor=CERT_VERIFY_FACTOR)

    @classmethod
    def from_dict(cls, raw: dict) -> "CredentialModel":
        base = cls.certificate_default() if raw.get("mode") == "certificate" else cls.nft_default()
        fields = {k: raw[k] for k in
                  ("cert_bytes", "keypair_bytes", "partial_key_bytes",
                   "tx_overhead_bytes", "verify_cost_factor") if k in raw}
        return replace(base, **fields)


def memory_footprint(n_devices: int, model: CredentialModel) -> int:
    """Registry storage for a device population under one credential model."""
    if n_devices < 1:
        raise ValidationError("need at least one device")
    return n_devices * model.per_device_storage()


@dataclass(frozen=True)
class PipelineParams:
    """Fixed stage costs and buffering of the fog pipeline (simulated ms).

    Transaction bytes (base payload plus the credential model's per-tx
    overhead) are charged as transmission time on the edge-to-fog link.
    """

    endorse_round_ms: float = 250.0
    commit_delay_ms: float = 425.0
    buffer_depth: int = 900
    block_max_txs: int = 10
    block_interval_ms: float = 500.0
    base_tx_bytes: int = 256
    link_bytes_per_ms: float = 1024.0


@dataclass
class Metrics:
    send_rate_tps: float
    achieved_throughput_tps: float
    latency_ms_mean: float
    latency_ms_p95: float
    failed_tx_count: int
    storage_bytes: int

    def to_row(self) -> dict:
        return {
            "send_rate_tps": self.send_rate_tps,
            "achieved_throughput_tps": round(self.achieved_throughput_tps, 3),
            "latency_ms_mean": round(self.latency_ms_mean, 3),
            "latency_ms_p95": round(self.latency_ms_p95, 3),
            "failed_tx_count": self.failed_tx_count,
            "storage_bytes": self.storage_bytes,
        }


@dataclass(frozen=True)
class LoadScenario:
    """Transaction submissions: (send_time_ms, edge_node_id) pairs."""

    credential: CredentialModel
    submissions: tuple
    jitter_ms: float = 0.0

    @property
    def duration_ms(self) -> float:
        return max((t for t, _ in self.submissions), default=0.0)


def uniform_load(
    rate_tps: float,
    duration_s: float,
    topology: Topology,
    credential: CredentialModel,
) -> LoadScenario:
    edges = topology.edges()
    n = int(rate_tps * duration_s)
    subs = tuple(
        (i * 1000.0 / rate_tps, edges[i % len(edges)].node_id) for i in range(n)
    )
    return LoadScenario(credential=credential, submissions=subs)


# ---------------------------------------------------------------------------
# Event engine
# ---------------------------------------------------------------------------

class _EventQueue:
    def __init__(self):
        self._heap: list = []
        self._seq = itertools.count()
        self._now = 0.0

    @property
    def now(self) -> float:
        return self._now

    def push(self, time_ms: float, kind: str, data: dict) -> None:
        if time_ms < self._now - 1e-9:
            raise SimError(f"event {kind!r} scheduled in the past ({time_ms} < {self._now})")
        heapq.heappush(self._heap, (time_ms, next(self._seq), kind, data))

    def pop(self):
        time_ms, _, kind, data = heapq.heappop(self._heap)
        self._now = time_ms
        return time_ms, kind, data

    def __bool__(self) -> bool:
        return bool(self._heap)


def run_sim(
    topology: Topology,
    scenario: LoadScenario,
    seed: int = 0,
    params: Optional[PipelineParams] = None,
    n_devices: int = 100,
    measure_window: Optional[tuple] = None,
) -> tuple:
    """Process the load to quiescence; returns (trace, Metrics).

    The event queue is drained strictly in (time, sequence) order, so a
    fixed seed and inputs reproduce the trace byte for byte.
    """
    topology.validate()
    params = params or PipelineParams()
    rng = random.Random(seed)
    links = {n.node_id: n.link_delay_ms for n in topology.nodes}
    # Endorsement runs in lock-step across the quorum; the slowest fog bounds it.
    bottleneck = min(n.service_rate_tps for n in topology.fogs())
    service_ms = 1000.0 * scenario.credential.verify_cost_factor / bottleneck
    wire_ms = (
        params.base_tx_bytes + scenario.credential.tx_overhead_bytes
    ) / params.link_bytes_per_ms

    queue = _EventQueue()
    trace: list = []
    send_time: dict = {}
    commit_time: dict = {}
    failed: list = []

    server_busy = False
    backlog: deque = deque()
    batch: list = []
    batch_gen = 0

    def emit(kind: str, t: float, **data) -> None:
        entry = {"t": round(t, 6), "ev": kind}
        entry.update(data)
        trace.append(entry)

    for i, (t, node_id) in enumerate(scenario.submissions):
        jitter = rng.uniform(0.0, scenario.jitter_ms) if scenario.jitter_ms else 0.0
        queue.push(t + jitter, "send", {"tx": i, "node": node_id})

    def start_service(t: float, tx: int) -> None:
        nonlocal server_busy
        server_busy = True
        queue.push(t + service_ms, "endorsed", {"tx": tx})

    def cut_batch(t: float) -> None:
        nonlocal batch, batch_gen
        txs = batch
        batch = []
        batch_gen += 1
        commit_at = t + params.commit_delay_ms
        emit("block", t, txs=len(txs))
        for tx in txs:
            commit_time[tx] = commit_at
        queue.push(commit_at, "commit", {"txs": txs})

    while queue:
        t, kind, data = queue.pop()
        if kind == "send":
            tx = data["tx"]
            send_time[tx] = t
            emit("send", t, tx=tx, node=data["node"])
            queue.push(t + links[data["node"]] + wire_ms, "arrive", {"tx": tx})
        elif kind == "arrive":
            tx = data["tx"]
            if not server_busy:
                start_service(t, tx)
            elif len(backlog) < params.buffer_depth:
                backlog.append(tx)
            else:
                # No queueing past the buffer: the transaction fails now.
                failed.append(tx)
                emit("fail", t, tx=tx)
        elif kind == "endorsed":
            tx = data["tx"]
            queue.push(t + params.endorse_round_ms, "ordered", {"tx": tx})
            if backlog:
                start_service(t, backlog.popleft())
            else:
                server_busy = False
        elif kind == "ordered":
            tx = data["tx"]
            if not batch:
                queue.push(t + params.block_interval_ms, "batch_timeout", {"gen": batch_gen})
            batch.append(tx)
            if len(batch) >= params.block_max_txs:
                cut_batch(t)
        elif kind == "batch_timeout":
            if data["gen"] == batch_gen and batch:
                cut_batch(t)
        elif kind == "commit":
            for tx in data["txs"]:
                emit("commit", t, tx=tx)

    metrics = _measure(
        scenario, send_time, commit_time, failed, n_devices, measure_window
    )
    return trace, metrics


def _measure(
    scenario: LoadScenario,
    send_time: dict,
    commit_time: dict,
    failed: list,
    n_devices: int,
    window: Optional[tuple],
) -> Metrics:
    n = len(scenario.submissions)
    duration_ms = scenario.duration_ms
    if window is None:
        # Full-run measurement: count until the last commit lands.
        end = max([duration_ms, *commit_time.values()]) if commit_time else duration_ms
        window = (0.0, end if end > 0 else 1.0)
    w0, w1 = window

    latencies = [
        commit_time[tx] - send_time[tx]
        for tx in commit_time
        if w0 <= send_time[tx] <= w1
    ]
    commits_in_window = sum(1 for t in commit_time.values() if w0 <= t <= w1)
    span_s = (w1 - w0) / 1000.0
    achieved = commits_in_window / span_s if span_s > 0 else 0.0
    rate = n / (duration_ms / 1000.0) if duration_ms > 0 else 0.0

    latencies.sort()
    if latencies:
        mean = sum(latencies) / len(latencies)
        p95 = latencies[min(len(latencies) - 1, int(0.95 * len(latencies)))]
    else:
        mean = p95 = 0.0

    return Metrics(
        send_rate_tps=rate,
        achieved_throughput_tps=achieved,
        latency_ms_mean=mean,
        latency_ms_p95=p95,
        failed_tx_count=len(failed),
        storage_bytes=memory_footprint(n_devices, scenario.credential),
    )


def run_benchmark(
    send_rates: Sequence[float],
    model: CredentialModel,
    duration_s: float = 60.0,
    topology: Optional[Topology] = None,
    seed: int = 0,
    n_devices: int = 100,
    trim_s: float = 5.0,
) -> list:
    """One simulation per send rate; metrics over the steady-state window."""
    if not send_rates:
        raise ValidationError("need at least one send rate")
    if duration_s < 10:
        raise ValidationError("benchmark duration must be at least 10 simulated seconds")
    topology = topology or default_topology()
    results = []
    for rate in send_rates:
        scenario = uniform_load(rate, duration_s, topology, model)
        window = (trim_s * 1000.0, (duration_s - trim_s) * 1000.0)
        _, metrics = run_sim(
            topology, scenario, seed=seed, n_devices=n_devices, measure_window=window
        )
        metrics.send_rate_tps = rate
        results.append(metrics)
    return results


def saturation_point(metrics: Sequence[Metrics]) -> float:
    """The plateau: highest commit rate achieved across tested send rates."""
    return max(m.achieved_throughput_tps for m in metrics)


def write_trace(path, trace: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in trace:
            fh.write(json.dumps(entry, sort_keys=True, separators=(",", ":")) + "\n")
