"""Single-instance operation with a designated read-out ion.

The read-out ion sits next to qubit 1 of a chain.  Exciting qubit 1 moves the
read-out resonance from ``nu_r`` to ``nu0``; a read-out laser parked at
``nu0`` therefore fluoresces exactly when qubit 1 was promoted to |e>.
Fluorescence is modelled at the photon-count level.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .crystal import (DEBYE, CouplingParams, Ion, Level, ParameterError, Species,
                      coupling_strength)
from .qsim import BlockadeContext, StateVector, cnot, measure_population, product_state, reset_ion


class RoutingError(ValueError):
    """Operation addressed a qubit that is not reachable that way."""


class ScanExhaustedError(RuntimeError):
    """A scan covered its whole range without finding the expected signal."""


@dataclass(frozen=True)
class ReadoutModel:
    emission_interval: float = 2.0e-7
    detection_efficiency: float = 0.01
    photons_needed: int = 100
    qubit_e_lifetime: float = 2.0e-3
    trap_probability_per_cycle: float = 1e-6
    nu0: float = 0.0
    homogeneous_linewidth: float = 5.0e7
    detection_threshold: int = 1

    def __post_init__(self):
        for name in ("emission_interval", "detection_efficiency", "qubit_e_lifetime",
                     "homogeneous_linewidth"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if self.detection_efficiency > 1:
            raise ParameterError("detection_efficiency cannot exceed 1")
        if self.photons_needed < 1 or self.detection_threshold < 1:
            raise ParameterError("photon counts must be at least 1")
        if not 0 <= self.trap_probability_per_cycle < 1:
            raise ParameterError("trap probability must lie in [0, 1)")

    @property
    def mean_cycles(self) -> float:
        """Fluorescence cycles while qubit 1 stays excited."""
        return self.qubit_e_lifetime / self.emission_interval

    @property
    def mean_detected(self) -> float:
        return self.mean_cycles * self.detection_efficiency


# Ce3+ 4f-5d line, as in YPO4
PRESETS = {
    "eu_yso_budget": ReadoutModel(),
    "ce3": ReadoutModel(emission_interval=2.0e-8, homogeneous_linewidth=5.0e7),
}


def save_presets(presets: dict[str, ReadoutModel], path: str | Path) -> None:
    Path(path).write_text(json.dumps({k: asdict(v) for k, v in presets.items()}, indent=1) + "\n")


def load_presets(path: str | Path) -> dict[str, ReadoutModel]:
    raw = json.loads(Path(path).read_text())
    return {k: ReadoutModel(**v) for k, v in raw.items()}


class PhotonBudget(NamedTuple):
    required_emission_interval: float
    emitted_photons: float
    max_trap_probability: float
    required_cycles: int


def photon_budget(model: ReadoutModel, success_target: float = 0.99) -> PhotonBudget:
    """Emission rate and trap-free cycling needed to collect ``photons_needed`` photons.

    The photons must arrive within the qubit's excited-state lifetime, and
    the read-out ion must survive all emitted cycles with probability
    ``success_target``.
    """
    if model.detection_efficiency <= 0:
        raise ParameterError("detection efficiency must be positive")
    if not 0 < success_target < 1:
        raise ParameterError("success_target must lie in (0, 1)")
    emitted = model.photons_needed / model.detection_efficiency
    interval = model.qubit_e_lifetime / emitted
    p_max = -math.expm1(math.log(success_target) / emitted)
    return PhotonBudget(interval, emitted, p_max, math.ceil(1.0 / p_max))


class FluorescenceShot(NamedTuple):
    photons_detected: int
    trapped: bool


def _fluorescence(model: ReadoutModel, rng: np.random.Generator) -> FluorescenceShot:
    cycles = int(rng.poisson(model.mean_cycles))
    trapped = False
    if model.trap_probability_per_cycle > 0:
        first_trap = int(rng.geometric(model.trap_probability_per_cycle))
        if first_trap <= cycles:
            trapped = True
            cycles = first_trap - 1
    return FluorescenceShot(int(rng.binomial(cycles, model.detection_efficiency)), trapped)


# -- chains -------------------------------------------------------------------

@dataclass(frozen=True)
class GroundTruthChain:
    """Read-out ion plus qubits; qubit k couples to qubit k-1, qubit 1 to the read-out ion.

    Qubit ``shift`` is its optical 0<->e frequency; the read-out ion's
    ``shift`` is its unperturbed resonance.  ``couplings[0]`` is the
    read-out/qubit-1 shift, ``couplings[k]`` the qubit k/qubit k+1 shift.
    """

    readout_ion: Ion | None
    qubits: tuple[Ion, ...]
    couplings: tuple[float, ...]
    g_min: float = 1.0e6

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(self.qubits))
        object.__setattr__(self, "couplings", tuple(float(g) for g in self.couplings))
        if len(self.couplings) != len(self.qubits):
            raise ValueError("need one coupling per qubit (read-out/q1, q1/q2, ...)")
        if any(g < self.g_min for g in self.couplings):
            raise ValueError("chain couplings must reach g_min")

    @property
    def nu_r(self) -> float:
        return self.readout_ion.shift

    @property
    def nu0(self) -> float:
        return self.readout_ion.shift + self.couplings[0]

    @property
    def qubit_freqs(self) -> tuple[float, ...]:
        return tuple(q.shift for q in self.qubits)

    def qubit(self, index: int) -> Ion:
        if not 1 <= index <= len(self.qubits):
            raise RoutingError(f"no qubit {index} in a chain of {len(self.qubits)}")
        return self.qubits[index - 1]

    def blockade_context(self) -> BlockadeContext:
        pairs = {(self.qubits[k - 1].id, self.qubits[k].id): self.couplings[k]
                 for k in range(1, len(self.qubits))}
        return BlockadeContext(pairs, self.g_min)

    def colliding_pairs(self, resolution: float) -> list[tuple[int, int]]:
        f = self.qubit_freqs
        return [(i + 1, j + 1) for i in range(len(f)) for j in range(i + 1, len(f))
                if abs(f[i] - f[j]) <= resolution]


def make_chain(length: int, rng: np.random.Generator, qubit_band: tuple[float, float] = (0.0, 2.0e8),
               readout_band: tuple[float, float] = (0.0, 5.0e8), spacing: float = 1.0e-9,
               readout_dmu: float = 0.1 * DEBYE, qubit_dmu: float = 0.8e-31,
               coupling: CouplingParams | None = None, min_separation: float = 0.0,
               edge_margin: float = 2.5e7) -> GroundTruthChain:
    """Random straight chain with ions ``spacing`` apart and random frequencies.

    Couplings follow the crystal's dipole law.  ``nu_r`` and ``nu0`` are both
    kept ``edge_margin`` inside the read-out band (half a homogeneous line by
    default) so the whole fluorescence peak is scannable.  Qubit frequencies
    are redrawn until pairwise further apart than ``min_separation``.
    """
    cp = coupling or CouplingParams()
    box = spacing * (length + 3) * 4
    shift_r1 = cp.g_ref * readout_dmu * qubit_dmu / cp.dmu_ref**2 * (cp.r_ref / spacing) ** 3
    lo, hi = readout_band[0] + edge_margin, readout_band[1] - edge_margin - shift_r1
    if hi < lo:
        raise ParameterError("read-out band too narrow to hold both nu_r and nu0")
    ro = Ion(-1, (spacing, box / 2, box / 2), float(rng.uniform(lo, hi)), readout_dmu, Species.READOUT)
    while True:
        freqs = np.sort(rng.uniform(*qubit_band, size=length))
        if length < 2 or np.min(np.diff(freqs)) > min_separation:
            break
    freqs = rng.permutation(freqs)
    qubits = tuple(Ion(k, ((k + 2) * spacing, box / 2, box / 2), float(freqs[k]), qubit_dmu)
                   for k in range(length))
    chain_ions = (ro,) + qubits
    g = tuple(coupling_strength(chain_ions[k], chain_ions[k + 1], cp, box) for k in range(length))
    return GroundTruthChain(ro, qubits, g, cp.g_min)


class ReadoutResult(NamedTuple):
    fluoresced: bool
    photons_detected: int
    trapped: bool
    budget_met: bool


def readout_qubit(chain: GroundTruthChain, qubit_index: int, state_of_qubit: Level,
                  model: ReadoutModel, rng: np.random.Generator,
                  pi_fidelity: float = 1.0) -> ReadoutResult:
    """pi pulse on qubit 1's 0<->e line with the read-out laser at nu0; fluorescence means |0>.

    ``fluoresced`` requires ``detection_threshold`` detected photons (no dark
    counts are modelled); ``budget_met`` reports whether ``photons_needed``
    were collected.
    """
    if qubit_index != 1:
        raise RoutingError("only qubit 1 couples to the read-out ion; transfer the state first")
    chain.qubit(1)
    excited = Level(state_of_qubit) is Level.ZERO and rng.random() < pi_fidelity
    if not excited:
        return ReadoutResult(False, 0, False, False)
    shot = _fluorescence(model, rng)
    return ReadoutResult(shot.photons_detected >= model.detection_threshold, shot.photons_detected,
                         shot.trapped, shot.photons_detected >= model.photons_needed)


@dataclass(frozen=True)
class ProtocolStep:
    kind: str  # "pump" or "cnot"
    target: int
    control: int | None = None


def transfer_state(chain: GroundTruthChain, from_index: int, to_index: int | None = None) -> list[ProtocolStep]:
    """Pump qubit ``to_index`` to |0>, then CNOT controlled by ``from_index``."""
    to_index = from_index - 1 if to_index is None else to_index
    if to_index != from_index - 1 or to_index < 1:
        raise RoutingError(f"cannot transfer qubit {from_index} to qubit {to_index}: not the adjacent lower qubit")
    src, dst = chain.qubit(from_index), chain.qubit(to_index)
    return [ProtocolStep("pump", dst.id), ProtocolStep("cnot", dst.id, src.id)]


def execute_protocol(state: StateVector, steps: Sequence[ProtocolStep], context: BlockadeContext,
                     rng: np.random.Generator | None = None) -> StateVector:
    for step in steps:
        if step.kind == "pump":
            state = reset_ion(state, step.target, rng)
        elif step.kind == "cnot":
            state = cnot(state, step.control, step.target, context)
        else:
            raise ValueError(f"unknown protocol step {step.kind!r}")
    return state


def _sample_level(state: StateVector, ion_id: int, rng: np.random.Generator) -> Level:
    p = np.array([measure_population(state, ion_id, lv) for lv in Level])
    return Level(int(rng.choice(len(p), p=p / p.sum())))


def readout_register(chain: GroundTruthChain, levels: Sequence[Level], model: ReadoutModel,
                     rng: np.random.Generator) -> list[bool]:
    """Read every qubit in turn through qubit 1; True means the qubit was |0>.

    Qubit k is moved down the chain by successive pump+CNOT transfers before
    being read, so earlier qubits are overwritten along the way.
    """
    ids = [q.id for q in chain.qubits]
    state = product_state(ids, levels)
    ctx = chain.blockade_context()
    out = []
    for k in range(1, len(ids) + 1):
        for j in range(k, 1, -1):
            state = execute_protocol(state, transfer_state(chain, j), ctx, rng)
        level = _sample_level(state, ids[0], rng)
        out.append(readout_qubit(chain, 1, level, model, rng).fluoresced)
    return out


# -- characterisation ---------------------------------------------------------

@dataclass(frozen=True)
class ScanSettings:
    resolution: float = 1.0e6
    pi_pulse_fidelity: float = 1.0
    qubit_band: tuple[float, float] = (0.0, 2.0e8)
    readout_band: tuple[float, float] = (0.0, 5.0e8)
    attempts: int = 2
    confirmations: int = 5
    max_qubits: int = 16

    def __post_init__(self):
        if not self.resolution > 0:
            raise ParameterError("resolution must be positive")
        if not 0 < self.pi_pulse_fidelity <= 1:
            raise ParameterError("pi_pulse_fidelity must lie in (0, 1]")
        if self.attempts < 1 or self.confirmations < 0:
            raise ParameterError("need at least one attempt")

    def grid(self, band: tuple[float, float]) -> np.ndarray:
        lo, hi = band
        return lo + self.resolution * np.arange(int(math.floor((hi - lo) / self.resolution)) + 1)


@dataclass(frozen=True)
class ScanLogEntry:
    step: str
    laser: str
    frequency: float
    pulses: tuple[float, ...]
    fluoresced: bool
    predicted: bool


SCAN_LOG_COLUMNS = ("step", "laser", "frequency_Hz", "pulse_applied", "fluoresced", "predicted")


@dataclass
class DiscoveredChain:
    found_nu_readout: float | None = None
    found_nu0: float | None = None
    found_qubit_freqs: list[float] = field(default_factory=list)
    scan_log: list[ScanLogEntry] = field(default_factory=list)
    collisions: list[float] = field(default_factory=list)
    trapped: bool = False

    @property
    def collision_flagged(self) -> bool:
        return bool(self.collisions)

    def matches(self, truth: GroundTruthChain, resolution: float) -> bool:
        """Every frequency recovered within ``resolution / 2``."""
        tol = resolution / 2 * (1 + 1e-9)
        if self.found_nu_readout is None or self.found_nu0 is None:
            return False
        if len(self.found_qubit_freqs) != len(truth.qubits):
            return False
        return (abs(self.found_nu_readout - truth.nu_r) <= tol
                and abs(self.found_nu0 - truth.nu0) <= tol
                and all(abs(a - b) <= tol for a, b in zip(self.found_qubit_freqs, truth.qubit_freqs)))

    def write_log(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCAN_LOG_COLUMNS)
        for e in self.scan_log:
            w.writerow([e.step, e.laser, repr(e.frequency), ";".join(repr(p) for p in e.pulses),
                        int(e.fluoresced), int(e.predicted)])


class _Physics:
    """Level bookkeeping of one shot: qubit pulses, then the read-out laser."""

    def __init__(self, freqs, couplings_qq, nu_r, shift_r, linewidth, resolution):
        self.freqs = list(freqs)
        self.g = list(couplings_qq)  # g[k] couples qubit k and k+1 (0-based)
        self.nu_r = nu_r
        self.shift_r = shift_r
        self.linewidth = linewidth
        self.resolution = resolution

    def _detuned_freq(self, k, excited):
        f = self.freqs[k]
        if k > 0 and excited[k - 1]:
            f += self.g[k - 1]
        if k + 1 < len(self.freqs) and excited[k + 1]:
            f += self.g[k]
        return f

    def shot(self, pulses, nu_laser, fidelity, rng) -> bool:
        n = len(self.freqs)
        excited = [False] * n
        for nu in pulses:
            # all ions in resonance at the start of a pulse respond together
            hit = [k for k in range(n)
                   if abs(self._detuned_freq(k, excited) - nu) <= self.resolution / 2]
            for k in hit:
                if fidelity >= 1.0 or rng is None or rng.random() < fidelity:
                    excited[k] = not excited[k]
        if self.nu_r is None:
            return False
        res = self.nu_r + (self.shift_r if n and excited[0] else 0.0)
        return abs(nu_laser - res) <= self.linewidth / 2


def initiate_characterization(ground_truth: GroundTruthChain, scan: ScanSettings,
                              rng: np.random.Generator, model: ReadoutModel | None = None) -> DiscoveredChain:
    """Map out the read-out ion and the qubit chain from fluorescence alone.

    Stages: scan the read-out laser for the bare resonance; scan the qubit
    laser with pi pulses until fluorescence stops (qubit 1); excite qubit 1
    and rescan the read-out laser (nu0); then for qubit k scan the qubit
    laser followed by pi pulses on qubits k-1 ... 1 and watch for the
    fluorescence at nu0 to deviate from what the already-known chain
    predicts.  Every candidate is re-probed ``confirmations`` times and kept
    on a majority.
    """
    model = model or ReadoutModel(trap_probability_per_cycle=0.0)
    if scan.resolution > model.homogeneous_linewidth:
        raise ParameterError("scan resolution must not exceed the read-out linewidth")
    if ground_truth.readout_ion is None:
        raise ScanExhaustedError("no read-out ion fluoresces anywhere in the scan range")
    truth = _Physics(ground_truth.qubit_freqs, ground_truth.couplings[1:], ground_truth.nu_r,
                     ground_truth.couplings[0], model.homogeneous_linewidth, scan.resolution)
    found = DiscoveredChain()
    fidelity = scan.pi_pulse_fidelity

    def observe(pulses, nu_laser):
        if found.trapped:
            return False
        if not truth.shot(pulses, nu_laser, fidelity, rng):
            return False
        shot = _fluorescence(model, rng)
        if shot.trapped:
            found.trapped = True
        return shot.photons_detected >= model.detection_threshold

    def predict(pulses, nu_laser):
        known = _Physics(found.found_qubit_freqs, [math.inf] * len(found.found_qubit_freqs),
                         found.found_nu_readout,
                         (found.found_nu0 - found.found_nu_readout) if found.found_nu0 is not None else math.inf,
                         model.homogeneous_linewidth, scan.resolution)
        return known.shot(pulses, nu_laser, 1.0, None)

    def signal(step, laser, freq, pulses, nu_laser, expected):
        """Robust test that the observation differs from ``expected``."""
        votes = []
        for _ in range(scan.attempts):
            obs = observe(pulses, nu_laser)
            found.scan_log.append(ScanLogEntry(step, laser, float(freq), tuple(pulses), obs, expected))
            if obs != expected:
                break
        else:
            return False
        for _ in range(scan.confirmations):
            obs = observe(pulses, nu_laser)
            found.scan_log.append(ScanLogEntry(step, laser, float(freq), tuple(pulses), obs, expected))
            votes.append(obs != expected)
        return sum(votes) * 2 > len(votes) if votes else True

    def readout_scan(step, pulses, expected_fn):
        run = []
        for nu in scan.grid(scan.readout_band):
            if signal(step, "readout", nu, pulses, nu, expected_fn(nu)):
                run.append(float(nu))
            elif run:
                break
        if not run:
            raise ScanExhaustedError(f"{step}: no read-out fluorescence in {scan.readout_band}")
        return 0.5 * (run[0] + run[-1])

    found.found_nu_readout = readout_scan("readout_scan", (), lambda nu: False)

    qubit_grid = scan.grid(scan.qubit_band)
    for k in range(1, scan.max_qubits + 1):
        if k == 2:
            pulses_q1 = (found.found_qubit_freqs[0],)
            found.found_nu0 = readout_scan("nu0_scan", pulses_q1,
                                           lambda nu: predict(pulses_q1, nu))
        nu_laser = found.found_nu_readout if k == 1 else found.found_nu0
        cascade = tuple(reversed(found.found_qubit_freqs))
        step = f"qubit{k}_scan"
        hit = None
        for nu in qubit_grid:
            pulses = (float(nu),) + cascade
            if signal(step, "qubit", nu, pulses, nu_laser, predict(pulses, nu_laser)):
                hit = float(nu)
                break
        if hit is None:
            break
        if any(abs(hit - f) <= scan.resolution / 2 for f in found.found_qubit_freqs):
            found.collisions.append(hit)
            break
        found.found_qubit_freqs.append(hit)
    return found


# -- addressing ---------------------------------------------------------------

@dataclass(frozen=True)
class StarkParams:
    """Linear Stark shift; ``coefficient`` in Hz per (V/cm), ``field`` in V/cm."""

    coefficient: float = 35.0e3
    field: float = 0.0

    def __post_init__(self):
        if not self.coefficient > 0:
            raise ParameterError("Stark coefficient must be positive")

    @property
    def coefficient_si(self) -> float:
        """Hz per (V/m)."""
        return self.coefficient / 100.0


def stark_shift(params: StarkParams) -> float:
    if params.field < 0:
        raise ParameterError("field magnitude must be non-negative")
    return params.coefficient * params.field


def stark_address(freqs: Sequence[float], selected: Sequence[int], params: StarkParams) -> np.ndarray:
    """Shift the transition frequencies of the ions near the energised electrode."""
    out = np.asarray(freqs, dtype=float).copy()
    out[list(selected)] += stark_shift(params)
    return out


def collision_probability(n_assigned: int, usable_channels: int) -> float:
    """Chance that ``n_assigned`` uniformly drawn channels are not all distinct."""
    if usable_channels < 1:
        raise ParameterError("need at least one usable channel")
    if n_assigned > usable_channels:
        return 1.0
    p_distinct = 1.0
    for k in range(n_assigned):
        p_distinct *= 1.0 - k / usable_channels
    return 1.0 - p_distinct


__all__ = [
    "DiscoveredChain", "FluorescenceShot", "GroundTruthChain", "PRESETS", "PhotonBudget",
    "ProtocolStep", "ReadoutModel", "ReadoutResult", "RoutingError", "SCAN_LOG_COLUMNS",
    "ScanExhaustedError", "ScanLogEntry", "ScanSettings", "StarkParams", "collision_probability",
    "execute_protocol", "initiate_characterization", "load_presets", "make_chain",
    "photon_budget", "readout_qubit", "readout_register", "save_presets", "stark_address",
    "stark_shift", "transfer_state",
]
