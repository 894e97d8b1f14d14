"""Command-line experiment runner: run scenarios, verify ledgers, serve agents."""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

from .config import ScenarioConfig, load_scenario
from .engine import Simulation, SimulationAborted
from .ledger import CostFunctions, CostLedger, EpochTracker, LedgerError
from .world import ConfigError


def bundled_config_path(name: str) -> Path:
    return Path(resources.files("rmfs_core").joinpath(f"configs/{name}.toml"))


def _resolve_config(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    bundled = bundled_config_path(arg)
    if bundled.exists():
        return bundled
    raise ConfigError(f"config {arg!r} not found (no such file, no bundled config)")


def build_simulation(cfg: ScenarioConfig, seed: int | None = None,
                     log_events: bool = True, hub=None, wire_robots=None):
    if seed is not None:
        cfg.run.seed = seed
    world = cfg.build_world()
    costs = CostFunctions.from_layout(world.layout, metric=cfg.ledger.cost_metric,
                                      kin=cfg.kinematics)
    tracker = EpochTracker(CostLedger(costs, pod_count=len(world.pods)),
                           burn_in=cfg.ledger.burn_in)
    sim = Simulation(world, cfg.plugins, seed=cfg.run.seed, kin=cfg.kinematics,
                     generator=cfg.build_generator(), tracker=tracker,
                     t_pick_line=cfg.station_ops.t_pick_line,
                     log_events=log_events, hub=hub, wire_robots=wire_robots)
    return sim, tracker


def _write_outputs(out: Path, log, metrics, tracker, checkpoints) -> None:
    out.mkdir(parents=True, exist_ok=True)
    log.write(out / "events.log")
    (out / "metrics.csv").write_text(metrics.to_csv(), encoding="utf-8")
    ledger = tracker.ledger
    points = [n for n in checkpoints if n <= len(ledger)]
    if len(ledger) and len(ledger) not in points:
        points.append(len(ledger))
    reports = ledger.convergence_report(points)
    (out / "ledger.csv").write_text(CostLedger.convergence_csv(reports),
                                    encoding="utf-8")
    (out / "epochs.tsv").write_text(ledger.dump(), encoding="utf-8")


def cmd_run(args) -> int:
    cfg = load_scenario(_resolve_config(args.config))
    if args.horizon is not None:
        cfg.run.horizon_s = args.horizon
    sim, tracker = build_simulation(cfg, seed=args.seed)
    out = Path(args.out)
    try:
        log, metrics = sim.run(cfg.run.horizon_s, max_epochs=cfg.run.max_epochs)
    except SimulationAborted as exc:
        out.mkdir(parents=True, exist_ok=True)
        sim.log.write(out / "events.log")
        print(f"run aborted: {exc.cause}", file=sys.stderr)
        return 1
    _write_outputs(out, log, metrics, tracker, cfg.ledger.checkpoints)
    print(f"completed: horizon={metrics.horizon:.1f}s "
          f"orders={metrics.completed_orders} epochs={metrics.ledger_epochs} "
          f"out={out}")
    return 0


# --- ledger verification: a naive second pass over the epoch dump ---

def parse_dump(text: str) -> list[tuple[int, int, int, int, int, int | None]]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) <= 1:
        raise LedgerError("empty dump")
    rows = []
    for expected, line in enumerate(lines[1:]):
        parts = line.split("\t")
        if len(parts) != 6:
            raise LedgerError(f"malformed record: {line!r}")
        if int(parts[0]) != expected:
            raise LedgerError(f"record {expected} missing")
        rows.append((int(parts[0]), int(parts[1]), int(parts[2]), int(parts[3]),
                     int(parts[4]), None if parts[5] == "-" else int(parts[5])))
    return rows


def naive_statistics(rows, costs: CostFunctions, n: int) -> dict[str, float]:
    """Re-derive every ledger statistic with plain loops and sums."""
    head = rows[:n]
    a = costs.to_station
    b = costs.from_station
    direct = 0.0
    departed = 0.0
    residual = 0.0
    for _t, s, pi, p, tau, d in head:
        cost = a[(p, tau)] + b[(s, pi)]
        direct += cost
        if d is not None and d < n:
            departed += cost
        else:
            residual += cost
    shifted = 0.0
    for _t, s, pi, p, tau, d in head:
        shifted += b[(s, pi)]
        if d is not None and d < n:
            shifted += a[(pi, rows[d][4])]
    stations = sorted({sid for _pl, sid in a})
    counts = {sid: 0 for sid in stations}
    for _t, _s, _pi, _p, tau, _d in head:
        counts[tau] += 1
    qhat = {sid: counts[sid] / n for sid in stations}
    decomposed = 0.0
    for _t, s, pi, _p, _tau, d in head:
        decomposed += b[(s, pi)]
        if d is not None and d < n:
            for sid in stations:
                if qhat[sid] > 0.0:
                    decomposed += qhat[sid] * a[(pi, sid)]
    return {"direct_avg": direct / n, "departed_part": departed / n,
            "residual_part": residual / n, "shifted_avg": shifted / n,
            "decomposed_est": decomposed / n}


def verify_ledger(dump_text: str, costs: CostFunctions, pod_count: int,
                  n: int | None = None) -> float:
    """Max relative deviation between the ledger statistics and the naive pass."""
    rows = parse_dump(dump_text)
    ledger = CostLedger.from_dump(dump_text, costs, pod_count)
    n = len(rows) if n is None else n
    oracle = naive_statistics(rows, costs, n)
    report = ledger.report(n)
    worst = 0.0
    for key, value in oracle.items():
        ours = getattr(report, key)
        scale = max(abs(value), 1e-12)
        worst = max(worst, abs(ours - value) / scale)
    return worst


def cmd_verify_ledger(args) -> int:
    cfg = load_scenario(_resolve_config(args.config))
    world = cfg.build_world()
    costs = CostFunctions.from_layout(world.layout, metric=cfg.ledger.cost_metric,
                                      kin=cfg.kinematics)
    text = Path(args.dump).read_text(encoding="utf-8")
    deviation = verify_ledger(text, costs, pod_count=len(world.pods))
    print(f"max relative deviation: {deviation:.3e}")
    return 0 if deviation <= 1e-9 else 1


def cmd_serve(args) -> int:
    import time

    from . import wire as wiremod
    from .bridge import WsBridge

    cfg = load_scenario(_resolve_config(args.config))
    host, port = args.bind.rsplit(":", 1)
    try:
        hub = wiremod.WireHub(host, int(port))
    except OSError as exc:
        print(f"cannot bind {args.bind}: {exc}", file=sys.stderr)
        return 2
    bridge = None
    if args.ws_bind:
        ws_host, ws_port = args.ws_bind.rsplit(":", 1)
        bridge = WsBridge(hub, ws_host, int(ws_port))
    print(f"wire listening on {hub.address[0]}:{hub.address[1]}")
    deadline = time.monotonic() + cfg.wire.grace_s
    expected = set(cfg.build_world().robots)
    while time.monotonic() < deadline:
        if all(hub.connected("robot", rid) for rid in expected):
            break
        time.sleep(0.05)
    wire_robots = {rid for rid in expected if hub.connected("robot", rid)}
    if not wire_robots and not cfg.wire.fallback_in_process:
        print("no robots connected within grace period", file=sys.stderr)
        hub.close()
        return 1
    sim, tracker = build_simulation(cfg, seed=args.seed, hub=hub,
                                    wire_robots=wire_robots)
    try:
        log, metrics = sim.run(cfg.run.horizon_s, max_epochs=cfg.run.max_epochs,
                               wall_clock=args.wall_clock)
    finally:
        if bridge is not None:
            bridge.close()
        hub.close()
    out = Path(args.out)
    _write_outputs(out, log, metrics, tracker, cfg.ledger.checkpoints)
    print(f"completed: horizon={metrics.horizon:.1f}s "
          f"orders={metrics.completed_orders} out={out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rmfs", description="mobile-fulfillment control core")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario to completion")
    p_run.add_argument("--config", required=True,
                       help="path or bundled name (threebyfour, montecarlo)")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--horizon", type=float, default=None)
    p_run.add_argument("--out", default="out")
    p_run.set_defaults(fn=cmd_run)

    p_ver = sub.add_parser("verify-ledger", help="re-check ledger statistics "
                           "against a naive pass over the epoch dump")
    p_ver.add_argument("--dump", required=True)
    p_ver.add_argument("--config", required=True)
    p_ver.set_defaults(fn=cmd_verify_ledger)

    p_srv = sub.add_parser("serve", help="run with the agent wire enabled")
    p_srv.add_argument("--config", required=True)
    p_srv.add_argument("--bind", default="127.0.0.1:7411")
    p_srv.add_argument("--ws-bind", default="", help="websocket bridge address")
    p_srv.add_argument("--seed", type=int, default=None)
    p_srv.add_argument("--out", default="out")
    p_srv.add_argument("--wall-clock", action="store_true")
    p_srv.set_defaults(fn=cmd_serve)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, LedgerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
