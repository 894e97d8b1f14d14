"""Long-run repositioning-cost ledger.

Tracks one epoch per pod-storage decision: the station the stored pod leaves
(s), the storage place it is assigned (pi), and the paired departure of
another pod from its place (p) toward its chosen station (tau).  A later
departure of the stored pod links back to its assignment epoch (d).

Four statistics are exposed over any prefix of N epochs:

  direct_average     (1/N) sum of  A(p_t, tau_t) + B(s_t, pi_t)
  split_average      the same sum partitioned by whether the pod assigned at
                     t departed again before epoch N
  shifted_average    re-pairs each assignment with its own pod's eventual
                     departure station: A(pi_t, tau_{d_t}) counted only when
                     d_t < N, plus the B terms
  decomposed_estimate replaces the departure station by its empirical
                     distribution: sum_s qhat_s * A(pi_t, s) over departed
                     epochs, plus the B terms

The split partition is exact by construction; the residual part is bounded
by pod_count * c_max / N because at most one assignment per pod can remain
open at any horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .pathing import Kinematics, edge_time
from .world import Layout


class LedgerError(ValueError):
    pass


@dataclass(frozen=True)
class CostFunctions:
    """Travel costs between storage places and stations, plus their bound."""

    to_station: dict[tuple[int, int], float]    # (place node, station id) -> cost
    from_station: dict[tuple[int, int], float]  # (station id, place node) -> cost
    c_max: float

    def a(self, place: int, station: int) -> float:
        return self.to_station[(place, station)]

    def b(self, station: int, place: int) -> float:
        return self.from_station[(station, place)]

    @classmethod
    def from_layout(cls, layout: Layout, metric: str = "hops",
                    kin: Kinematics | None = None) -> "CostFunctions":
        if metric not in ("hops", "time"):
            raise LedgerError(f"unknown cost metric {metric!r}")
        scale = 1.0
        if metric == "time":
            scale = edge_time(kin or Kinematics(), layout.spacing_m)
        to_station = {}
        from_station = {}
        for st in layout.stations:
            hops = layout.hops_from(layout.station_node[st.id])
            for place in layout.storage_nodes():
                cost = hops[place] * scale
                to_station[(place, st.id)] = cost
                from_station[(st.id, place)] = cost
        if not to_station:
            raise LedgerError("layout has no storage places")
        c_max = (max(to_station.values()) + max(from_station.values()))
        return cls(to_station=to_station, from_station=from_station, c_max=c_max)


@dataclass
class EpochRecord:
    t: int
    s: int       # station the stored pod left
    pi: int      # storage place assigned to it
    p: int       # place the paired departing pod left
    tau: int     # station that departing pod went to
    d: int | None = None  # epoch at which the stored pod departed again


@dataclass
class LedgerReport:
    n: int
    direct_avg: float
    departed_part: float
    residual_part: float
    shifted_avg: float
    decomposed_est: float
    decomposed_unweighted: float
    station_freq: dict[int, float]
    residual_bound: float


class CostLedger:
    def __init__(self, costs: CostFunctions, pod_count: int):
        self.costs = costs
        self.pod_count = pod_count
        self.records: list[EpochRecord] = []

    def __len__(self) -> int:
        return len(self.records)

    def record_epoch(self, s: int, pi: int, p: int, tau: int) -> int:
        if (s, pi) not in self.costs.from_station or (p, tau) not in self.costs.to_station:
            raise LedgerError(f"epoch references unknown place/station: "
                              f"s={s} pi={pi} p={p} tau={tau}")
        t = len(self.records)
        self.records.append(EpochRecord(t=t, s=s, pi=pi, p=p, tau=tau))
        return t

    def link_departure(self, t_assign: int, t_depart: int) -> None:
        if not 0 <= t_assign < len(self.records):
            raise LedgerError(f"no epoch {t_assign}")
        if t_depart <= t_assign:
            raise LedgerError(f"departure {t_depart} not after assignment {t_assign}")
        rec = self.records[t_assign]
        if rec.d is not None:
            raise LedgerError(f"epoch {t_assign} already linked to {rec.d}")
        rec.d = t_depart

    def _check_n(self, n: int) -> None:
        if n <= 0 or not self.records:
            raise LedgerError("empty ledger")
        if n > len(self.records):
            raise LedgerError(f"only {len(self.records)} epochs recorded, asked for {n}")

    def _epoch_cost(self, rec: EpochRecord) -> float:
        return self.costs.a(rec.p, rec.tau) + self.costs.b(rec.s, rec.pi)

    def direct_average(self, n: int) -> float:
        departed, residual = self.split_average(n)
        return departed + residual

    def split_average(self, n: int) -> tuple[float, float]:
        """(departed_part, residual_part); they sum to direct_average exactly."""
        self._check_n(n)
        departed = []
        residual = []
        for rec in self.records[:n]:
            cost = self._epoch_cost(rec)
            if rec.d is not None and rec.d < n:
                departed.append(cost)
            else:
                residual.append(cost)
        return math.fsum(departed) / n, math.fsum(residual) / n

    def shifted_average(self, n: int) -> float:
        self._check_n(n)
        terms = []
        for rec in self.records[:n]:
            b = self.costs.b(rec.s, rec.pi)
            if rec.d is not None and rec.d < n:
                terms.append(self.costs.a(rec.pi, self.records[rec.d].tau) + b)
            else:
                terms.append(b)
        return math.fsum(terms) / n

    def station_frequencies(self, n: int) -> dict[int, float]:
        """Empirical distribution of the departure stations over the first n epochs."""
        self._check_n(n)
        counts: dict[int, int] = {}
        for rec in self.records[:n]:
            counts[rec.tau] = counts.get(rec.tau, 0) + 1
        stations = sorted({sid for _p, sid in self.costs.to_station})
        return {sid: counts.get(sid, 0) / n for sid in stations}

    def decomposed_estimate(self, n: int) -> float:
        """Station-decomposed estimator with empirical weights.

        Keeps the departed indicator so that it collapses to shifted_average
        exactly when only one station exists.
        """
        freq = self.station_frequencies(n)
        weighted = [(sid, q) for sid, q in sorted(freq.items()) if q > 0.0]
        terms = []
        for rec in self.records[:n]:
            b = self.costs.b(rec.s, rec.pi)
            if rec.d is not None and rec.d < n:
                a_mix = math.fsum(q * self.costs.a(rec.pi, sid) for sid, q in weighted)
                terms.append(a_mix + b)
            else:
                terms.append(b)
        return math.fsum(terms) / n

    def decomposed_unweighted(self, n: int) -> float:
        """Plain per-station sum without weights or indicator (diagnostic)."""
        self._check_n(n)
        stations = sorted({sid for _p, sid in self.costs.to_station})
        terms = []
        for rec in self.records[:n]:
            a_sum = math.fsum(self.costs.a(rec.pi, sid) for sid in stations)
            terms.append(a_sum + self.costs.b(rec.s, rec.pi))
        return math.fsum(terms) / n

    def unlinked_count(self, n: int) -> int:
        return sum(1 for rec in self.records[:n] if rec.d is None or rec.d >= n)

    def residual_bound(self, n: int) -> float:
        return self.pod_count * self.costs.c_max / n

    def report(self, n: int | None = None) -> LedgerReport:
        n = len(self.records) if n is None else n
        departed, residual = self.split_average(n)
        return LedgerReport(
            n=n,
            direct_avg=departed + residual,
            departed_part=departed,
            residual_part=residual,
            shifted_avg=self.shifted_average(n),
            decomposed_est=self.decomposed_estimate(n),
            decomposed_unweighted=self.decomposed_unweighted(n),
            station_freq=self.station_frequencies(n),
            residual_bound=self.residual_bound(n),
        )

    def convergence_report(self, checkpoints: list[int]) -> list[LedgerReport]:
        return [self.report(n) for n in checkpoints]

    @staticmethod
    def convergence_csv(reports: list[LedgerReport]) -> str:
        header = ("n,direct_avg,departed_part,residual_part,shifted_avg,"
                  "decomposed_est,decomposed_unweighted,residual_bound")
        lines = [header]
        for r in reports:
            lines.append(f"{r.n},{r.direct_avg:.9f},{r.departed_part:.9f},"
                         f"{r.residual_part:.9f},{r.shifted_avg:.9f},"
                         f"{r.decomposed_est:.9f},{r.decomposed_unweighted:.9f},"
                         f"{r.residual_bound:.9f}")
        return "\n".join(lines) + "\n"

    def dump(self) -> str:
        """Plain-text epoch table: t, s, pi, p, tau, d per line."""
        lines = ["t\ts\tpi\tp\ttau\td"]
        for rec in self.records:
            d = "-" if rec.d is None else str(rec.d)
            lines.append(f"{rec.t}\t{rec.s}\t{rec.pi}\t{rec.p}\t{rec.tau}\t{d}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dump(cls, text: str, costs: CostFunctions, pod_count: int) -> "CostLedger":
        ledger = cls(costs, pod_count)
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if len(lines) <= 1:
            raise LedgerError("empty dump")
        links = []
        for expected, line in enumerate(lines[1:]):
            parts = line.split("\t")
            if len(parts) != 6:
                raise LedgerError(f"malformed record: {line!r}")
            t = int(parts[0])
            if t != expected:
                raise LedgerError(f"record {expected} missing")
            ledger.record_epoch(s=int(parts[1]), pi=int(parts[2]),
                                p=int(parts[3]), tau=int(parts[4]))
            if parts[5] != "-":
                links.append((t, int(parts[5])))
        for t, d in links:
            ledger.link_departure(t, d)
        return ledger


class EpochTracker:
    """Pairs pod departures with storage decisions and feeds the ledger.

    A departure is logged when a pod is committed to leave its storage place
    for a station.  Each storage decision consumes the oldest unconsumed
    departure as its (p, tau) pair; the epoch at which a pod's own departure
    is consumed becomes the d-link of its previous storage epoch.  The first
    burn_in storage decisions run the pairing but are not recorded.
    """

    def __init__(self, ledger: CostLedger, burn_in: int = 0):
        self.ledger = ledger
        self.burn_in = burn_in
        self._pending: list[tuple[int, int, int]] = []  # (pod, place, station) FIFO
        self._pod_epoch: dict[int, int | None] = {}  # pod -> epoch of its last recorded storage
        self._decisions = 0

    @property
    def epochs_recorded(self) -> int:
        return len(self.ledger)

    def pod_departed(self, pod: int, place: int, station: int) -> None:
        self._pending.append((pod, place, station))

    def pod_stored(self, pod: int, from_station: int, place: int) -> None:
        if not self._pending:
            raise LedgerError(f"storage of pod {pod} with no pending departure")
        dep_pod, dep_place, dep_station = self._pending.pop(0)
        recorded = self._decisions >= self.burn_in
        self._decisions += 1
        epoch = None
        if recorded:
            epoch = self.ledger.record_epoch(s=from_station, pi=place,
                                             p=dep_place, tau=dep_station)
            prev = self._pod_epoch.get(dep_pod)
            if prev is not None:
                self.ledger.link_departure(prev, epoch)
            self._pod_epoch[dep_pod] = None
        self._pod_epoch[pod] = epoch
