"""Scenario configuration: one TOML file with fixed sections, unknown keys rejected."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .orders import OrderGenerator
from .pathing import Kinematics
from .policies import PluginBinding
from .world import (Compartment, ConfigError, Layout, LayoutConfig, Pod, Robot,
                    SkuInfo, Station, World, build_layout)


@dataclass
class RunConfig:
    horizon_s: float = 7200.0
    seed: int = 1
    max_epochs: int | None = None


@dataclass
class OrdersConfig:
    rate_per_hour: float = 30.0
    mean_lines: float = 1.8
    max_lines: int = 4
    qty_min: int = 1
    qty_max: int = 3
    sku_weights: dict[str, float] = field(default_factory=dict)
    replenish_rate_per_hour: float = 0.0
    replenish_qty: int = 3
    replenish_sku: str = "random"  # or "lowest-stock"


@dataclass
class LedgerConfig:
    burn_in: int = 100
    cost_metric: str = "hops"
    checkpoints: list[int] = field(default_factory=lambda: [100, 1000, 10000])


@dataclass
class WireConfig:
    bind: str = "127.0.0.1:7411"
    ws_bind: str = "127.0.0.1:7412"
    grace_s: float = 5.0
    fallback_in_process: bool = True


@dataclass
class StationOpsConfig:
    t_pick_line: float = 5.0


@dataclass
class ScenarioConfig:
    layout: LayoutConfig
    pods: list[Pod]
    robots: list[Robot]
    skus: dict[str, SkuInfo]
    kinematics: Kinematics
    plugins: PluginBinding
    orders: OrdersConfig
    ledger: LedgerConfig
    run: RunConfig
    wire: WireConfig
    station_ops: StationOpsConfig

    def build_world(self) -> World:
        layout = build_layout(self.layout)
        return World(layout=layout, pods=list(self.pods), robots=list(self.robots),
                     skus=dict(self.skus))

    def build_generator(self, seed: int | None = None) -> OrderGenerator:
        oc = self.orders
        return OrderGenerator(rate_per_hour=oc.rate_per_hour,
                              sku_weights=oc.sku_weights,
                              seed=self.run.seed if seed is None else seed,
                              mean_lines=oc.mean_lines, max_lines=oc.max_lines,
                              qty_min=oc.qty_min, qty_max=oc.qty_max,
                              replenish_rate_per_hour=oc.replenish_rate_per_hour,
                              replenish_qty=oc.replenish_qty)


def _reject_unknown(section: dict, allowed: set[str], path: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key {path}.{key}")


def _cell(value, path: str) -> tuple[int, int]:
    if (not isinstance(value, list) or len(value) != 2
            or not all(isinstance(v, int) for v in value)):
        raise ConfigError(f"{path} must be [row, col]")
    return (value[0], value[1])


def parse_scenario(text: str) -> ScenarioConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from None
    _reject_unknown(data, {"layout", "pods", "robots", "skus", "kinematics",
                           "plugins", "orders", "ledger", "run", "wire",
                           "station_ops"}, "")

    lay = data.get("layout")
    if lay is None:
        raise ConfigError("missing [layout] section")
    _reject_unknown(lay, {"rows", "cols", "spacing_m", "stations", "storage",
                          "dwelling"}, "layout")
    stations = []
    for i, st in enumerate(lay.get("stations", [])):
        path = f"layout.stations[{i}]"
        _reject_unknown(st, {"id", "kind", "cell", "capacity", "order_slots"}, path)
        for required in ("id", "kind", "cell"):
            if required not in st:
                raise ConfigError(f"{path}.{required} is required")
        stations.append(Station(id=st["id"], kind=st["kind"],
                                cell=_cell(st["cell"], f"{path}.cell"),
                                capacity=st.get("capacity", 2),
                                order_slots=st.get("order_slots", 4)))
    layout_cfg = LayoutConfig(
        rows=lay.get("rows", 0), cols=lay.get("cols", 0),
        spacing_m=lay.get("spacing_m", 1.0),
        stations=tuple(stations),
        storage=tuple(_cell(c, "layout.storage") for c in lay.get("storage", [])),
        dwelling=tuple(_cell(c, "layout.dwelling") for c in lay.get("dwelling", [])))

    # pods and robots reference layout cells; node ids are resolved here
    cols = layout_cfg.cols

    def node_of(cell: tuple[int, int]) -> int:
        return cell[0] * cols + cell[1]

    pods = []
    for i, pd in enumerate(data.get("pods", [])):
        path = f"pods[{i}]"
        _reject_unknown(pd, {"id", "home", "comp_rows", "comp_cols", "capacity",
                             "contents"}, path)
        for required in ("id", "home"):
            if required not in pd:
                raise ConfigError(f"{path}.{required} is required")
        comp_rows = pd.get("comp_rows", 2)
        comp_cols = pd.get("comp_cols", 3)
        capacity = pd.get("capacity", 10)
        compartments = {(r, c): Compartment(sku=None, count=0, capacity=capacity)
                        for r in range(comp_rows) for c in range(comp_cols)}
        for j, entry in enumerate(pd.get("contents", [])):
            epath = f"{path}.contents[{j}]"
            if not isinstance(entry, list) or len(entry) != 4:
                raise ConfigError(f"{epath} must be [row, col, sku, count]")
            r, c, sku, count = entry
            if (r, c) not in compartments:
                raise ConfigError(f"{epath}: no compartment ({r}, {c})")
            if not isinstance(count, int) or count < 0 or count > capacity:
                raise ConfigError(f"{epath}: bad count {count}")
            compartments[(r, c)] = Compartment(sku=str(sku), count=count,
                                               capacity=capacity)
        home = node_of(_cell(pd["home"], f"{path}.home"))
        pods.append(Pod(id=pd["id"], comp_rows=comp_rows, comp_cols=comp_cols,
                        compartments=compartments, location=("storage", home),
                        home=home))

    robots = []
    for i, rb in enumerate(data.get("robots", [])):
        path = f"robots[{i}]"
        _reject_unknown(rb, {"id", "at", "orientation"}, path)
        for required in ("id", "at"):
            if required not in rb:
                raise ConfigError(f"{path}.{required} is required")
        robots.append(Robot(id=rb["id"], node=node_of(_cell(rb["at"], f"{path}.at")),
                            orientation=float(rb.get("orientation", 0.0))))

    skus = {}
    for i, sk in enumerate(data.get("skus", [])):
        path = f"skus[{i}]"
        _reject_unknown(sk, {"id", "name", "optimum", "maximum",
                             "min_presentation"}, path)
        if "id" not in sk:
            raise ConfigError(f"{path}.id is required")
        skus[sk["id"]] = SkuInfo(name=sk.get("name", sk["id"]),
                                 optimum=sk.get("optimum", 10),
                                 maximum=sk.get("maximum", 10),
                                 min_presentation=sk.get("min_presentation", 1))

    kin_data = data.get("kinematics", {})
    _reject_unknown(kin_data, {"v_max", "t_full_turn", "t_lift", "t_lift_pickup",
                               "t_lift_setdown"}, "kinematics")
    t_lift = kin_data.get("t_lift", 3.0)
    kin = Kinematics(v_max=kin_data.get("v_max", 0.05),
                     t_full_turn=kin_data.get("t_full_turn", 3.0),
                     t_lift_pickup=kin_data.get("t_lift_pickup", t_lift),
                     t_lift_setdown=kin_data.get("t_lift_setdown", t_lift))

    plug = data.get("plugins", {})
    _reject_unknown(plug, {"roa", "poa", "rps", "pps", "pr", "ta", "pp"}, "plugins")
    binding = PluginBinding(**{k: v for k, v in plug.items()})

    oc_data = data.get("orders", {})
    _reject_unknown(oc_data, {"rate_per_hour", "mean_lines", "max_lines", "qty_min",
                              "qty_max", "sku_weights", "replenish_rate_per_hour",
                              "replenish_qty", "replenish_sku"}, "orders")
    orders = OrdersConfig(**oc_data)
    if orders.replenish_sku not in ("random", "lowest-stock"):
        raise ConfigError(f"orders.replenish_sku must be random or lowest-stock, "
                          f"got {orders.replenish_sku!r}")

    led_data = data.get("ledger", {})
    _reject_unknown(led_data, {"burn_in", "cost_metric", "checkpoints"}, "ledger")
    ledger = LedgerConfig(**led_data)
    if ledger.cost_metric not in ("hops", "time"):
        raise ConfigError(f"ledger.cost_metric must be hops or time, "
                          f"got {ledger.cost_metric!r}")

    run_data = data.get("run", {})
    _reject_unknown(run_data, {"horizon_s", "seed", "max_epochs"}, "run")
    run = RunConfig(**run_data)

    wire_data = data.get("wire", {})
    _reject_unknown(wire_data, {"bind", "ws_bind", "grace_s",
                                "fallback_in_process"}, "wire")
    wirecfg = WireConfig(**wire_data)

    ops_data = data.get("station_ops", {})
    _reject_unknown(ops_data, {"t_pick_line"}, "station_ops")
    ops = StationOpsConfig(**ops_data)

    return ScenarioConfig(layout=layout_cfg, pods=pods, robots=robots, skus=skus,
                          kinematics=kin, plugins=binding, orders=orders,
                          ledger=ledger, run=run, wire=wirecfg, station_ops=ops)


def load_scenario(path) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())
