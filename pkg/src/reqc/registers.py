"""Register-yield statistics: closed forms, Monte Carlo census and hole-burning bookkeeping."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, NamedTuple

import numpy as np

from .crystal import (ChannelPlan, CouplingGraph, CouplingParams, Crystal, CrystalParams, Level,
                      ParameterError, channel_labels, coupling_graph, density_for_occupancy,
                      generate_crystal)


def p_register_exact(nbar: float, N: int) -> float:
    """Probability that every one of ``N`` channels holds exactly one ion, Poisson mean ``nbar``.

    Maximal at ``nbar == 1`` where it equals ``exp(-N)``.
    """
    _check_query(nbar, N)
    return (math.exp(-nbar) * nbar) ** N


def p_register_postselect(nbar: float, N: int) -> float:
    """Yield when any non-empty channel can be trimmed to a single ion."""
    _check_query(nbar, N)
    return (-math.expm1(-nbar)) ** N


def _check_query(nbar, N):
    if nbar < 0:
        raise ParameterError("nbar must be non-negative")
    if N < 0 or int(N) != N:
        raise ParameterError("N must be a non-negative integer")


class RequiredOccupancy(NamedTuple):
    approx: float  # ln(N / (1 - P)), valid when 1 - P << 1
    exact: float   # -ln(1 - P**(1/N)), inverts the post-selected yield exactly


def required_nbar(N: int, target_P: float) -> RequiredOccupancy:
    if N < 1:
        raise ParameterError("N must be at least 1")
    if not 0 < target_P < 1:
        raise ParameterError("target_P must lie in (0, 1)")
    approx = math.log(N / (1 - target_P))
    exact = -math.log(-math.expm1(math.log(target_P) / N))
    return RequiredOccupancy(approx, exact)


def enhancement_factor(n: int) -> float:
    """Approximate gain in n-ion registers from routing through a bus ion."""
    if n < 2:
        raise ParameterError("register needs at least two ions")
    return 8.0 ** (n - 2)


# -- census -------------------------------------------------------------------

class Architecture(str, Enum):
    CLIQUE = "clique"
    BUS = "bus"


def wilson_interval(hits: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if trials == 0:
        return (0.0, 1.0)
    p = hits / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return (max(0.0, min(centre - half, p)), min(1.0, max(centre + half, p)))


@dataclass(frozen=True)
class CensusResult:
    architecture: Architecture
    N: int
    trials: int
    hits: int

    def __post_init__(self):
        if not 0 <= self.hits <= self.trials:
            raise ValueError("need 0 <= hits <= trials")

    @property
    def p_hat(self) -> float:
        return self.hits / self.trials if self.trials else float("nan")

    @property
    def ci95(self) -> tuple[float, float]:
        return wilson_interval(self.hits, self.trials)

    @property
    def sigma(self) -> float:
        """Binomial standard error of ``p_hat``."""
        if not self.trials:
            return float("nan")
        p = self.p_hat
        return math.sqrt(p * (1 - p) / self.trials)

    def __add__(self, other: CensusResult) -> CensusResult:
        if (self.architecture, self.N) != (other.architecture, other.N):
            raise ValueError("can only merge results of the same architecture and N")
        return CensusResult(self.architecture, self.N, self.trials + other.trials,
                            self.hits + other.hits)


def _indices(crystal: Crystal, ids: np.ndarray) -> np.ndarray:
    if len(crystal) and np.array_equal(crystal.ids, np.arange(len(crystal))):
        return ids
    return np.fromiter((crystal.index_of(i) for i in ids.ravel()), np.int64,
                       count=ids.size).reshape(ids.shape)


def _census_counts(crystal: Crystal, graph: CouplingGraph, plan: ChannelPlan,
                   bus_channel: int) -> tuple[int, int, int]:
    """(candidates, bus-star hits, clique hits) over every live ion of the bus channel."""
    if not 0 <= bus_channel < len(plan):
        raise ValueError(f"bus_channel {bus_channel} not in plan")
    labels = channel_labels(crystal, plan)
    labels[crystal.levels == Level.AUX] = -1
    qubit_channels = [k for k in range(len(plan)) if k != bus_channel]
    slot = np.full(len(plan), -1)
    slot[qubit_channels] = np.arange(len(qubit_channels))

    candidates = np.flatnonzero(labels == bus_channel)
    n_cand = len(candidates)
    if n_cand == 0:
        return 0, 0, 0
    if not qubit_channels:
        return n_cand, n_cand, n_cand

    idx = _indices(crystal, graph.pairs) if graph.edge_count else np.empty((0, 2), np.int64)
    counts = np.zeros((len(crystal), len(qubit_channels)), dtype=np.int64)
    pick = np.full((len(crystal), len(qubit_channels)), -1, dtype=np.int64)
    for a, b in ((0, 1), (1, 0)):
        src, dst = idx[:, a], idx[:, b]
        m = (labels[src] == bus_channel) & (labels[dst] >= 0) & (labels[dst] != bus_channel)
        src, dst = src[m], dst[m]
        col = slot[labels[dst]]
        np.add.at(counts, (src, col), 1)
        pick[src, col] = dst

    star = np.all(counts[candidates] == 1, axis=1)
    star_hits = candidates[star]
    clique_hits = 0
    for c in star_hits:
        members = crystal.ids[pick[c]]
        if all(graph.has_edge(members[i], members[j])
               for i in range(len(members)) for j in range(i + 1, len(members))):
            clique_hits += 1
    return n_cand, len(star_hits), clique_hits


def census(crystal: Crystal, graph: CouplingGraph, plan: ChannelPlan,
           architecture: Architecture | str, bus_channel: int = 0) -> CensusResult:
    """Count candidate bus ions that complete a register.

    Every live ion of ``bus_channel`` is a candidate; the remaining channels
    of ``plan`` are the N qubit channels.  A bus-star hit needs exactly one
    coupled neighbour in each qubit channel.  A clique hit additionally needs
    those N neighbours to be pairwise coupled.  Candidates sharing part of a
    neighbourhood are correlated, so the binomial error is a slight
    underestimate.
    """
    architecture = Architecture(architecture)
    trials, star, clique = _census_counts(crystal, graph, plan, bus_channel)
    hits = star if architecture is Architecture.BUS else clique
    return CensusResult(architecture, len(plan) - 1, trials, hits)


@dataclass(frozen=True)
class CensusSetup:
    """Box, density and channel layout realising a target per-ball occupancy.

    The bus channel is channel 0.  ``nbar`` is the mean number of ions of one
    channel within the coupling radius of a candidate.
    """

    nbar: float
    N: int
    coupling: CouplingParams
    candidates_per_crystal: float = 2000.0
    channel_width: float = 1.0e6
    vacated_width: float = 1.2e6

    def __post_init__(self):
        if self.nbar <= 0:
            raise ParameterError("census setup needs nbar > 0")

    @property
    def radius(self) -> float:
        return self.coupling.radius()

    @property
    def bandwidth(self) -> float:
        return (self.N + 1) * 1.05 * self.vacated_width

    @property
    def density(self) -> float:
        return density_for_occupancy(self.nbar, self.radius, self.channel_width, self.bandwidth)

    @property
    def box_side(self) -> float:
        ball = 4.0 / 3.0 * math.pi * self.radius**3
        side = (self.candidates_per_crystal * ball / self.nbar) ** (1 / 3)
        return max(side, 2.5 * self.radius)

    def plan(self) -> ChannelPlan:
        return ChannelPlan.evenly_spaced(self.N + 1, self.bandwidth, self.channel_width,
                                         self.vacated_width)

    def crystal_params(self, seed: int) -> CrystalParams:
        return CrystalParams(self.box_side, self.density, self.bandwidth,
                             self.coupling.dmu_ref, seed)


def run_census(setup: CensusSetup, trials: int, seeds: Iterable[int]) -> dict[Architecture, CensusResult]:
    """Generate crystals from ``seeds`` until at least ``trials`` candidates are seen."""
    plan = setup.plan()
    total = dict.fromkeys(("trials", "star", "clique"), 0)
    for seed in seeds:
        crystal = generate_crystal(setup.crystal_params(seed))
        graph = coupling_graph(crystal, setup.coupling)
        t, s, c = _census_counts(crystal, graph, plan, 0)
        total["trials"] += t
        total["star"] += s
        total["clique"] += c
        if total["trials"] >= trials:
            break
    return {
        Architecture.BUS: CensusResult(Architecture.BUS, setup.N, total["trials"], total["star"]),
        Architecture.CLIQUE: CensusResult(Architecture.CLIQUE, setup.N, total["trials"], total["clique"]),
    }


CENSUS_COLUMNS = ("architecture", "N", "nbar_analytic", "trials", "hits", "p_hat",
                  "ci_lo", "ci_hi", "p_eq1")


def census_row(result: CensusResult, nbar: float) -> dict:
    lo, hi = result.ci95
    return {
        "architecture": result.architecture.value,
        "N": result.N,
        "nbar_analytic": nbar,
        "trials": result.trials,
        "hits": result.hits,
        "p_hat": result.p_hat,
        "ci_lo": lo,
        "ci_hi": hi,
        "p_eq1": p_register_exact(nbar, result.N),
    }


def write_census_csv(rows: Iterable[dict], fh) -> None:
    writer = csv.DictWriter(fh, fieldnames=CENSUS_COLUMNS, extrasaction="ignore",
                            lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


# -- hole burning -------------------------------------------------------------

def holeburn_simulate(crystal: Crystal, graph: CouplingGraph, plan: ChannelPlan,
                      chosen_bus_channel: int) -> Crystal:
    """Classical level bookkeeping of channel preparation with a protecting bus.

    Ions inside a vacated interval but outside its channel are burnt away.
    Hole burning at each qubit channel with the bus channel excited removes
    every qubit-channel ion not coupled to a live bus ion; a bus ion lacking a
    coupled live ion in some qubit channel is removed too.  The two rules are
    iterated to a fixed point, so applying the function again is a no-op.
    """
    if not 0 <= chosen_bus_channel < len(plan):
        raise ValueError(f"bus channel {chosen_bus_channel} not in plan")
    levels = crystal.levels.copy()
    labels = channel_labels(crystal, plan)
    near = np.zeros(len(crystal), dtype=bool)
    for c in plan.centers:
        near |= np.abs(crystal.shifts - c) <= plan.vacated_width / 2
    levels[near & (labels < 0)] = Level.AUX

    qubit_channels = [k for k in range(len(plan)) if k != chosen_bus_channel]
    idx = _indices(crystal, graph.pairs) if graph.edge_count else np.empty((0, 2), np.int64)
    i, j = idx[:, 0], idx[:, 1]

    while True:
        live = levels != Level.AUX
        bus = live & (labels == chosen_bus_channel)
        qubit = live & (labels >= 0) & (labels != chosen_bus_channel)

        protected = np.zeros(len(crystal), dtype=bool)
        e = bus[i] & qubit[j]
        protected[j[e]] = True
        e = bus[j] & qubit[i]
        protected[i[e]] = True
        drop_qubit = qubit & ~protected

        seen = np.zeros((len(crystal), len(plan)), dtype=bool)
        e = bus[i] & qubit[j]
        seen[i[e], labels[j[e]]] = True
        e = bus[j] & qubit[i]
        seen[j[e], labels[i[e]]] = True
        complete = np.all(seen[:, qubit_channels], axis=1) if qubit_channels else np.ones(len(crystal), bool)
        drop_bus = bus & ~complete

        drop = drop_qubit | drop_bus
        if not drop.any():
            break
        levels[drop] = Level.AUX
    return crystal.with_levels(levels)


__all__ = [
    "Architecture", "CENSUS_COLUMNS", "CensusResult", "CensusSetup", "RequiredOccupancy",
    "census", "census_row", "enhancement_factor", "holeburn_simulate", "p_register_exact",
    "p_register_postselect", "required_nbar", "run_census", "wilson_interval",
    "write_census_csv",
]
