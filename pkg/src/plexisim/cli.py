"""Command-line entry point: enroll, trade, attack, and bench scenarios.

Every command is deterministic under a fixed --seed and writes plain
CSV/JSON artifacts into --out. Exit codes: 0 success, 1 error, 2 domain
infeasibility (for example an uncoverable flexibility request).

Set PLEXISIM_LOG to a level name (DEBUG, INFO, ...) to adjust logging.
"""

from __future__ import annotations

import argparse
import csv as csv_mod
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import identity, simnet, telemetry
from .aggregator import (
    ActionType,
    DfAggregator,
    Direction,
    FlexRequest,
    FlexResource,
    RequestShape,
    ResourceKind,
    SetpointAction,
    Window,
)
from .clock import SimClock
from .csp import solve_csp
from .errors import EnrollmentRejected, SimError
from .ledger import LedgerSim
from .market import Bid
from .workflow import Actor, ActorRole, Topic, WorkflowEngine

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_UNSAT = 2


def _setup_logging() -> None:
    level = os.environ.get("PLEXISIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# enroll
# ---------------------------------------------------------------------------

def cmd_enroll(args) -> int:
    out = _out_dir(args.out)
    clock = SimClock()
    anchor = identity.setup(128, seed=args.seed)
    ledger = LedgerSim(clock, anchor_pk=identity.anchor_public_key(anchor))
    registry_path = Path(args.registry) if args.registry else out / "ledger.jsonl"
    if registry_path.exists():
        ledger.load_chain(registry_path)

    records = []
    duplicates = []
    for i in range(args.n):
        device = identity.make_device(f"dev-{i:04d}", seed=args.seed * 1_000_003 + i)
        try:
            _, token_id = identity.enroll(device, owner_id=f"owner-{i:04d}",
                                          anchor=anchor, registry=ledger)
            records.append(ledger.query(token_id).to_record())
        except EnrollmentRejected:
            duplicates.append(device.hardware_label)

    with open(out / "enrollments.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
    ledger.save_chain(registry_path)

    print(f"enrolled {len(records)} devices, {len(duplicates)} duplicates")
    if duplicates:
        for label in duplicates:
            print(f"duplicate enrollment rejected: {label}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


# ---------------------------------------------------------------------------
# trade
# ---------------------------------------------------------------------------

def demo_scenario() -> dict:
    """Grid-islanding demo: one DG, one HVAC, one ESS behind three bids."""
    return {
        "resources": [
            {"resource_id": "dg-1", "kind": "DG", "controllable": True,
             "capacity_kw": 5.0, "baseline": {"action": "IDLE", "level_kw": 0.0},
             "owner": "prosumer-a"},
            {"resource_id": "hvac-1", "kind": "HVAC", "controllable": True,
             "capacity_kw": 4.0, "baseline": {"action": "ON", "level_kw": 3.0},
             "owner": "prosumer-a"},
            {"resource_id": "ess-1", "kind": "ESS", "controllable": True,
             "capacity_kw": 5.0, "baseline": {"action": "IDLE", "level_kw": 0.0},
             "owner": "prosumer-b"},
            {"resource_id": "ess-2", "kind": "ESS", "controllable": True,
             "capacity_kw": 10.0, "baseline": {"action": "IDLE", "level_kw": 0.0},
             "owner": "prosumer-c"},
        ],
        "requests": [
            {"request_id": "req-1", "window": {"start": 1, "duration": 1},
             "shape": "shed", "quantity_kw": 10.0, "direction": "increase_supply",
             "incentive_per_kw": 4.0, "issuer": "dso-1"},
        ],
        "bids": [
            {"bid_id": "A", "prosumer": "prosumer-a", "offered_kw": 6.0,
             "price_per_kw": 3.0, "resource_ids": ["dg-1", "hvac-1"],
             "request_id": "req-1"},
            {"bid_id": "B", "prosumer": "prosumer-b", "offered_kw": 5.0,
             "price_per_kw": 2.0, "resource_ids": ["ess-1"], "request_id": "req-1"},
            {"bid_id": "C", "prosumer": "prosumer-c", "offered_kw": 10.0,
             "price_per_kw": 6.0, "resource_ids": ["ess-2"], "request_id": "req-1"},
        ],
    }


@dataclass
class ScenarioConfig:
    """A fully parsed, path-resolved trading scenario."""

    resources: list
    requests: list
    bids: list          # (Bid, request_id) pairs
    seed: int = 0
    out_dir: Path = Path("out")


def parse_scenario(raw: dict, seed: int = 0, out_dir: str = "out") -> ScenarioConfig:
    resources = [
        FlexResource(
            resource_id=r["resource_id"],
            kind=ResourceKind(r["kind"]),
            controllable=bool(r["controllable"]),
            capacity_kw=float(r["capacity_kw"]),
            baseline_setpoint=SetpointAction(
                ActionType(r["baseline"]["action"]), float(r["baseline"]["level_kw"])
            ),
            owner=r["owner"],
        )
        for r in raw["resources"]
    ]
    requests = [
        FlexRequest(
            request_id=q["request_id"],
            window=Window(int(q["window"]["start"]), int(q["window"]["duration"])),
            shape=RequestShape(q["shape"]),
            quantity_kw=float(q["quantity_kw"]),
            direction=Direction(q["direction"]),
            incentive_per_kw=float(q["incentive_per_kw"]),
            issuer=q["issuer"],
        )
        for q in raw["requests"]
    ]
    bids = [
        (
            Bid(
                bid_id=b["bid_id"],
                prosumer_id=b["prosumer"],
                offered_kw=float(b["offered_kw"]),
                price_per_kw=float(b["price_per_kw"]),
                resource_ids=tuple(b["resource_ids"]),
            ),
            b.get("request_id", raw["requests"][0]["request_id"]),
        )
        for b in raw["bids"]
    ]
    return ScenarioConfig(resources=resources, requests=requests, bids=bids,
                          seed=seed, out_dir=Path(out_dir).resolve())


def build_stack(seed: int) -> tuple:
    """Clock, ledger, workflow engine, and aggregator wired together."""
    clock = SimClock()
    anchor = identity.setup(128, seed=seed)
    ledger = LedgerSim(clock, anchor_pk=identity.anchor_public_key(anchor))
    contract_device = identity.make_device("dfasc-contract", seed=seed ^ 0x5F5F)
    contract_key, contract_token = identity.enroll(
        contract_device, owner_id="dfasc", anchor=anchor, registry=ledger
    )
    engine = WorkflowEngine(ledger, clock, contract_key)
    engine.register_actor(
        Actor("dfasc", ActorRole.DFASC_CONTRACT, {Topic.BID_OFFER}, contract_token)
    )
    agg = DfAggregator(engine, clock)
    return clock, anchor, ledger, engine, agg


def cmd_trade(args) -> int:
    out = _out_dir(args.out)
    if args.config:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    else:
        raw = demo_scenario()
    scenario = parse_scenario(raw, seed=args.seed, out_dir=args.out)
    resources, requests, bids = scenario.resources, scenario.requests, scenario.bids

    clock, anchor, ledger, engine, agg = build_stack(scenario.seed)

    # Every human or device actor gets an enrolled identity token.
    def ensure_actor(actor_id: str, role: ActorRole, topics: set) -> None:
        if actor_id in engine.actors:
            for t in topics:
                engine.subscribe(actor_id, t)
            return
        stable = int.from_bytes(hashlib.sha256(actor_id.encode()).digest()[:8], "big")
        dev = identity.make_device(actor_id, seed=args.seed ^ stable)
        _, token = identity.enroll(dev, owner_id=actor_id, anchor=anchor, registry=ledger)
        engine.register_actor(Actor(actor_id, role, set(topics), token))

    for req in requests:
        ensure_actor(req.issuer, ActorRole.DSO_TSO, {Topic.DF_FULFILLED})
    for res in resources:
        ensure_actor(res.owner, ActorRole.PROSUMER, {Topic.FLEX_BID_REQUEST})
        ensure_actor(f"meter:{res.resource_id}", ActorRole.RESOURCE, {Topic.DF_SCHEDULING})
        agg.register_resource(res)

    schedules = []
    unsat = []
    for req in requests:
        agg.create_flex_request(req)
        for bid, rid in bids:
            if rid == req.request_id:
                agg.submit_bid(bid, req.request_id)
        if agg.clear(req.request_id) is None:
            unsat.append(req.request_id)
            continue
        inst = agg.build_instance(req.request_id)
        assignment = solve_csp(inst)
        if assignment is None:
            unsat.append(req.request_id)
            continue
        schedule = agg.schedule_dr(assignment, req.window, req.request_id)
        clock.advance_to(max(clock.now(), req.window.end_ms))
        agg.tick()
        agg.activation_and_settlement(req.request_id)
        schedules.append(schedule.to_record())

    (out / "trace.json").write_text(
        json.dumps(engine.trace, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out / "schedules.json").write_text(
        json.dumps(schedules, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    ledger.save_chain(out / "ledger.jsonl")

    if ledger.replay() != ledger.state:
        print("ledger replay mismatch", file=sys.stderr)
        return EXIT_ERROR
    if unsat:
        print(f"unsat: insufficient flexibility for {', '.join(unsat)}")
        return EXIT_UNSAT
    states = {r["request_id"]: agg.workflow_state(r["request_id"]).name for r in schedules}
    print(f"fulfilled {len(schedules)} request(s): {states}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# attack
# ---------------------------------------------------------------------------

def cmd_attack(args) -> int:
    out = _out_dir(args.out)
    if args.config:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        series = telemetry.load_dataset(cfg["dataset"])
    else:
        series = telemetry.generate_synthetic(args.synthetic, seed=args.seed)
        telemetry.write_dataset(out / "dataset.csv", series)

    clock = SimClock()
    anchor = identity.setup(128, seed=args.seed)
    ledger = LedgerSim(clock, anchor_pk=identity.anchor_public_key(anchor))
    meter = identity.make_device("site-meter", seed=args.seed)
    key, _ = identity.enroll(meter, owner_id="site", anchor=anchor, registry=ledger)

    envelopes = telemetry.sign_stream(series, key)
    target = "net_kw" if args.attack == "fdi" else "tamb_c"
    profile = telemetry.AttackProfile(
        kind=telemetry.AttackKind(args.attack),
        target_field=target,
        magnitude=args.fraction,
    )
    attacked = telemetry.apply_profile(series, profile)

    df_original = telemetry.estimate_flexibility(series)
    df_attacked = telemetry.estimate_flexibility(attacked)
    flagged = set(telemetry.detect_tamper(attacked, envelopes, ledger))
    deltas = telemetry.per_step_deltas(series, attacked, target)
    gain = telemetry.madiot_gain(deltas, len(deltas))

    report = out / "attack_report.csv"
    with open(report, "w", newline="", encoding="utf-8") as fh:
        writer = csv_mod.writer(fh)
        writer.writerow(["time", "original", "attacked", "df_original", "df_attacked", "flagged"])
        for i, (o, a) in enumerate(zip(series, attacked)):
            writer.writerow(
                [o.time.isoformat(), repr(getattr(o, target)), repr(getattr(a, target)),
                 repr(df_original[i]), repr(df_attacked[i]), int(i in flagged)]
            )
    print(
        f"{args.attack} at {args.fraction}% on {target}: {len(flagged)}/{len(series)} "
        f"samples flagged, cumulative gain {gain:.3f}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def _parse_rates(text: str) -> list:
    return [float(x) for x in text.split(",") if x.strip()]


def cmd_bench(args) -> int:
    out = _out_dir(args.out)
    rates = _parse_rates(args.rates)
    modes = args.mode or ["nft", "certificate"]
    models = {
        "nft": simnet.CredentialModel.nft_default(),
        "certificate": simnet.CredentialModel.certificate_default(),
    }
    topology = None
    if args.config:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if "topology" in cfg:
            topology = simnet.topology_from_dict(cfg["topology"])
        for mode, raw in cfg.get("credential_models", {}).items():
            raw = dict(raw, mode=mode)
            models[mode] = simnet.CredentialModel.from_dict(raw)
    summary = {"seed": args.seed, "modes": {}}
    for mode in modes:
        model = models[mode]
        metrics = simnet.run_benchmark(
            rates, model, duration_s=args.duration, seed=args.seed, topology=topology
        )
        rows = [m.to_row() for m in metrics]
        path = out / f"metrics_{mode}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv_mod.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        (out / f"metrics_{mode}.json").write_text(
            json.dumps(rows, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        summary["modes"][mode] = {
            "saturation_tps": round(simnet.saturation_point(metrics), 3),
            "storage_bytes_100_devices": simnet.memory_footprint(100, model),
        }
    nft_store = simnet.memory_footprint(100, models["nft"])
    cert_store = simnet.memory_footprint(100, models["certificate"])
    summary["footprint_ratio"] = round(nft_store / cert_store, 6)
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(json.dumps(summary["modes"], sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plexisim")
    sub = parser.add_subparsers(dest="command", required=True)

    p_enroll = sub.add_parser("enroll", help="enroll simulated devices")
    p_enroll.add_argument("--n", type=int, default=10)
    p_enroll.add_argument("--seed", type=int, default=0)
    p_enroll.add_argument("--out", default="out")
    p_enroll.add_argument("--registry", default=None,
                          help="existing ledger block file to enroll against")
    p_enroll.set_defaults(func=cmd_enroll)

    p_trade = sub.add_parser("trade", help="run the 4-step trading workflow")
    p_trade.add_argument("--config", default=None, help="scenario JSON (default: demo)")
    p_trade.add_argument("--seed", type=int, default=0)
    p_trade.add_argument("--out", default="out")
    p_trade.set_defaults(func=cmd_trade)

    p_attack = sub.add_parser("attack", help="inject attacks over telemetry")
    p_attack.add_argument("--attack", choices=["fdi", "madiot"], default="fdi")
    p_attack.add_argument("--fraction", type=float, default=2.0)
    p_attack.add_argument("--synthetic", type=int, default=7,
                          help="days of synthetic telemetry when no --config")
    p_attack.add_argument("--config", default=None, help="JSON with a dataset path")
    p_attack.add_argument("--seed", type=int, default=0)
    p_attack.add_argument("--out", default="out")
    p_attack.set_defaults(func=cmd_attack)

    p_bench = sub.add_parser("bench", help="throughput/latency/footprint benchmark")
    p_bench.add_argument("--rates", default="20,40,60,80,100,120,140,160,180,200")
    p_bench.add_argument("--mode", action="append", choices=["nft", "certificate"])
    p_bench.add_argument("--duration", type=float, default=60.0)
    p_bench.add_argument("--config", default=None,
                         help="JSON with topology and credential model overrides")
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--out", default="out")
    p_bench.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except SimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
