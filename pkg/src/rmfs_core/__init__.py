"""Robotic mobile fulfillment control core.

Deterministic discrete-event simulation of a grid warehouse where robots
carry inventory pods between storage places and human-staffed stations,
with pluggable decision policies, a TCP agent protocol, and a ledger that
estimates the long-run average pod-repositioning cost.
"""

from .config import ScenarioConfig, load_scenario, parse_scenario
from .engine import (EventLog, EventQueue, MetricsReport, Simulation,
                     SimulationAborted)
from .ledger import CostFunctions, CostLedger, EpochTracker, LedgerReport
from .orders import OrderGateway, OrderGenerator, Request, Transfer
from .pathing import (Kinematics, PlanRequest, ReservationTable, TimedPath,
                      lift_dwell, plan)
from .policies import PluginBinding, registered, resolve
from .world import (Compartment, Layout, LayoutConfig, Pod, PickOrder, Robot,
                    Station, World, apply_inventory_delta, build_layout,
                    graph_distance, random_layout)

__version__ = "0.1.0"
