"""Command-line entry points.

`serve` runs one socket-mode server (config gives topology via host and
base_port); `bench` and `sweep-tau` run workloads and report metrics;
`check` verifies a recorded history file for strict serializability;
`fault` replays a deterministic scenario with a server killed mid-run and
reports whether the cluster recovered.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

from . import harness, realmode
from .checker import (
    WindowExceeded,
    check_realtime_vector_order,
    check_strict_serializability,
)
from .harness import HistoryLog, ScenarioConfig


def parse_config(path: Optional[str]) -> dict:
    """key=value lines; # comments; later keys win."""
    out = {
        "tau_ms": 10.0, "nop_ms": 1.0, "gatekeepers": 2, "shards": 2,
        "seed": 0, "data_dir": None, "host": "127.0.0.1", "base_port": 7400,
    }
    if path is None:
        return out
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    for key in ("gatekeepers", "shards", "seed", "base_port"):
        out[key] = int(out[key])
    for key in ("tau_ms", "nop_ms"):
        out[key] = float(out[key])
    if out["data_dir"] in ("", "none", None):
        out["data_dir"] = None
    return out


def topology_from_config(cfg: dict) -> realmode.Topology:
    base = cfg["base_port"]
    return realmode.Topology(
        cfg["host"], base, base + 1, base + 2,
        {g: base + 10 + g for g in range(cfg["gatekeepers"])},
        {s: base + 100 + s for s in range(cfg["shards"])},
    )


def cmd_serve(args) -> int:
    cfg = parse_config(args.config)
    topo = topology_from_config(cfg)
    role = args.role
    if role == "store":
        realmode.serve_store(topo.store_port, cfg["data_dir"], cfg["host"])
    elif role == "oracle":
        realmode.serve_oracle(topo.oracle_port, cfg["host"])
    elif role == "manager":
        realmode.serve_manager(topo.manager_port, cfg["gatekeepers"], cfg["shards"], cfg["host"])
    elif role == "gatekeeper":
        realmode.serve_gatekeeper(args.index, topo, cfg["gatekeepers"], cfg["shards"],
                                  cfg["tau_ms"], cfg["nop_ms"])
    elif role == "shard":
        realmode.serve_shard(args.index, topo, cfg["gatekeepers"])
    return 0


def cmd_load(args) -> int:
    cfg = parse_config(args.config)
    vertices, edges = harness.load_edge_list(args.edgelist)
    topo = topology_from_config(cfg)
    cluster = realmode.RunningCluster(topo, [], cfg["gatekeepers"], cfg["shards"])
    realmode.load_graph(cluster, vertices, edges)
    print(f"loaded {len(vertices)} vertices, {len(edges)} edges")
    return 0


def _scenario_from_config(cfg: dict, args) -> ScenarioConfig:
    vertices, edges = harness.ring_graph(24)
    return ScenarioConfig(
        seed=cfg["seed"],
        n_gatekeepers=cfg["gatekeepers"],
        n_shards=cfg["shards"],
        n_clients=getattr(args, "clients", 4) or 4,
        duration_ms=(getattr(args, "duration", 1.0) or 1.0) * 1000.0,
        tau_ms=cfg["tau_ms"],
        nop_ms=cfg["nop_ms"],
        workload=getattr(args, "workload", "readmix:0.8") or "readmix:0.8",
        initial_vertices=vertices,
        initial_edges=edges,
        data_dir=cfg["data_dir"],
    )


def cmd_bench(args) -> int:
    cfg = parse_config(args.config)
    scenario = _scenario_from_config(cfg, args)
    res = harness.run_scenario(scenario)
    c = res.counters
    secs = scenario.duration_ms / 1000.0
    print(f"workload={args.workload} clients={args.clients} duration_s={args.duration}")
    print(f"throughput_ops_per_s={c.ops / secs:.1f}")
    print(f"commits={c.commits} programs={c.programs_ok} aborts={sum(c.aborts.values())}")
    print(f"abort_rate={c.abort_rate():.4f} mean_latency_ms={c.mean_latency():.3f}")
    print(f"announces={c.announces} oracle_calls={c.oracle_calls}")
    if args.history:
        res.history.save(args.history)
        with open(args.history + ".initial.json", "w") as f:
            json.dump(res.initial_snapshot, f)
        print(f"history written to {args.history}")
    return 0


def cmd_sweep_tau(args) -> int:
    cfg = parse_config(args.config)
    values = [float(v) for v in args.values.split(",")]
    base = _scenario_from_config(cfg, args)
    points = harness.sweep_tau(values, base)
    print("tau_ms\tannounce_per_s\tannounce_per_op\toracle_per_op\tabort_rate"
          "\tmean_latency_ms")
    for p in points:
        print(f"{p.tau_ms:g}\t{p.announce_rate:.1f}\t{p.announces_per_op:.4f}"
              f"\t{p.oracle_calls_per_op:.4f}"
              f"\t{p.abort_rate:.4f}\t{p.mean_latency_ms:.3f}")
    return 0


def cmd_check(args) -> int:
    history = HistoryLog.load(args.history)
    initial = {}
    if args.initial:
        with open(args.initial) as f:
            initial = json.load(f)
    try:
        ok, detail = check_strict_serializability(history, initial)
    except WindowExceeded as exc:
        print(f"REFUSED: {exc}")
        return 2
    rt_ok, rt_detail = check_realtime_vector_order(history)
    print(f"strict serializability: {'OK' if ok else 'VIOLATION'} ({detail})")
    print(f"real-time timestamp order: {'OK' if rt_ok else 'VIOLATION'} ({rt_detail})")
    return 0 if ok and rt_ok else 1


def cmd_fault(args) -> int:
    cfg = parse_config(args.config)
    kind, _, index = args.kill.partition(":")
    scenario = _scenario_from_config(cfg, args)
    scenario = ScenarioConfig(**{
        **scenario.__dict__,
        "faults": ((kind, int(index or 0), args.at),),
        "duration_ms": max(scenario.duration_ms, args.at + 1500.0),
    })
    res = harness.run_scenario(scenario)
    after = [r for r in res.history.records if r.resp > args.at]
    print(f"killed {kind}:{index or 0} at {args.at}ms; final epoch {res.manager.epoch}")
    print(f"operations completed after the kill: {len(after)}")
    print("recovered" if res.manager.epoch >= 1 and after else "NO RECOVERY")
    return 0 if res.manager.epoch >= 1 and after else 1


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="refinedb")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("serve", help="run one server")
    p.add_argument("role", choices=["gatekeeper", "shard", "oracle", "store", "manager"])
    p.add_argument("--config")
    p.add_argument("--index", type=int, default=0)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("load", help="load an edge list into a running cluster")
    p.add_argument("edgelist")
    p.add_argument("--config")
    p.set_defaults(fn=cmd_load)

    p = sub.add_parser("bench", help="run a workload and report metrics")
    p.add_argument("--workload", default="tao")
    p.add_argument("--clients", type=int, default=4)
    p.add_argument("--duration", type=float, default=1.0, help="seconds")
    p.add_argument("--config")
    p.add_argument("--history", help="write the operation history here")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("sweep-tau", help="coordination/latency trade-off sweep")
    p.add_argument("--values", default="1,4,16,64,256")
    p.add_argument("--workload", default="readmix:0.8")
    p.add_argument("--clients", type=int, default=4)
    p.add_argument("--duration", type=float, default=1.0)
    p.add_argument("--config")
    p.set_defaults(fn=cmd_sweep_tau)

    p = sub.add_parser("check", help="verify a history file")
    p.add_argument("history")
    p.add_argument("--initial", help="initial snapshot JSON")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("fault", help="kill a server mid-run and verify recovery")
    p.add_argument("--kill", required=True, help="kind:index, e.g. gatekeeper:0")
    p.add_argument("--at", type=float, required=True, help="kill instant, ms")
    p.add_argument("--config")
    p.set_defaults(fn=cmd_fault)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
