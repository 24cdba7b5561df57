"""State-vector engine for a handful of four-level ions.

Each ion has levels |0>, |1>, |aux>, |e> (basis indices 0..3, see
:class:`reqc.crystal.Level`).  Amplitudes are stored in C order with the first
ion of ``ion_ids`` varying slowest.

Two-level rotations follow R(theta, phi) = exp(-i theta/2 (cos phi sx + sin phi sy))
with |lower> as the first basis vector of the transition.  Hamiltonians are in
angular units (hbar = 1); coupling strengths from the crystal are in Hz and
get a factor 2*pi.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .crystal import CouplingGraph, Level

NLEVELS = 4
GOLDEN_ANGLE = 2 * math.pi * (1 - 2 / (1 + math.sqrt(5)))
DEFAULT_ALPHA_SCHEDULE = (math.pi, 2 * math.pi / 3, 2 * math.pi / 5, GOLDEN_ANGLE)


class AddressingError(KeyError):
    """Unknown ion or level."""


class ArchitectureError(ValueError):
    """Gate requested between ions that are not coupled above threshold."""


class ProtocolStateError(ValueError):
    """Protocol precondition on ion levels violated."""


class PulseMode(str, Enum):
    IDEAL_BLOCKADE = "ideal_blockade"
    DETUNED = "detuned"


@dataclass(frozen=True, eq=False)
class StateVector:
    ion_ids: tuple[int, ...]
    amplitudes: np.ndarray

    def __post_init__(self):
        ids = tuple(int(i) for i in self.ion_ids)
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate ion ids")
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(NLEVELS ** len(ids))
        object.__setattr__(self, "ion_ids", ids)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def n_ions(self) -> int:
        return len(self.ion_ids)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def axis(self, ion_id: int) -> int:
        try:
            return self.ion_ids.index(int(ion_id))
        except ValueError:
            raise AddressingError(f"ion {ion_id} not in state {self.ion_ids}") from None

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape((NLEVELS,) * self.n_ions)

    def replace(self, tensor: np.ndarray) -> StateVector:
        return StateVector(self.ion_ids, tensor.reshape(-1))

    def __repr__(self):
        return f"StateVector(ion_ids={self.ion_ids}, norm={self.norm:.12f})"


def product_state(ion_ids: Sequence[int], levels: Sequence[Level | int] | None = None) -> StateVector:
    ion_ids = tuple(ion_ids)
    levels = [Level.ZERO] * len(ion_ids) if levels is None else list(levels)
    if len(levels) != len(ion_ids):
        raise ValueError("one level per ion")
    amps = np.zeros(NLEVELS ** len(ion_ids), dtype=complex)
    index = 0
    for lv in levels:
        index = index * NLEVELS + int(Level(lv))
    amps[index] = 1.0
    return StateVector(ion_ids, amps)


def from_local_states(ion_ids: Sequence[int], local: Sequence[np.ndarray]) -> StateVector:
    """Tensor product of single-ion amplitude vectors (each of length 4)."""
    amps = np.ones(1, dtype=complex)
    for v in local:
        amps = np.kron(amps, np.asarray(v, dtype=complex))
    return StateVector(tuple(ion_ids), amps / np.linalg.norm(amps))


@dataclass(frozen=True)
class BlockadeContext:
    """Pairwise couplings (Hz) seen by the pulses, plus the blockade threshold."""

    couplings: dict = field(default_factory=dict)
    g_min: float = 1.0e6
    _adj: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        norm = {}
        for key, g in dict(self.couplings).items():
            a, b = tuple(key)
            if a == b:
                raise ValueError("self-coupling")
            norm[frozenset((int(a), int(b)))] = float(g)
        object.__setattr__(self, "couplings", norm)
        adj: dict[int, dict[int, float]] = {}
        for key, g in norm.items():
            a, b = tuple(key)
            adj.setdefault(a, {})[b] = g
            adj.setdefault(b, {})[a] = g
        object.__setattr__(self, "_adj", adj)

    @classmethod
    def from_graph(cls, graph: CouplingGraph) -> BlockadeContext:
        return cls({(int(i), int(j)): float(g) for (i, j), g in zip(graph.pairs, graph.g)},
                   graph.g_min)

    @classmethod
    def star(cls, centre: int, others: Iterable[int], g: float = 1.0e8,
             g_min: float = 1.0e6) -> BlockadeContext:
        return cls({(centre, o): g for o in others}, g_min)

    def strength(self, a: int, b: int) -> float:
        return self.couplings.get(frozenset((int(a), int(b))), 0.0)

    def partners(self, ion_id: int) -> dict[int, float]:
        return self._adj.get(int(ion_id), {})


_EMPTY_CONTEXT = BlockadeContext()


@dataclass(frozen=True)
class PulseOp:
    target: int | tuple[int, ...]
    transition: tuple[Level, Level] = (Level.ZERO, Level.E)
    area: float = math.pi
    phase: float = 0.0
    mode: PulseMode = PulseMode.IDEAL_BLOCKADE
    duration: float = 0.0

    def __post_init__(self):
        lo, hi = (Level(x) for x in self.transition)
        if lo == hi:
            raise ValueError("transition levels must differ")
        if self.area < 0:
            raise ValueError("pulse area must be non-negative")
        object.__setattr__(self, "transition", (lo, hi))
        object.__setattr__(self, "mode", PulseMode(self.mode))
        if self.mode is PulseMode.DETUNED and not self.duration > 0:
            raise ValueError("detuned pulses need a positive duration")

    @property
    def targets(self) -> tuple[int, ...]:
        if isinstance(self.target, (int, np.integer)):
            return (int(self.target),)
        return tuple(int(t) for t in self.target)


def _two_level(tensor, axis, lo, hi, u, keep=None):
    """Apply the 2x2 matrix ``u`` (entries may be arrays) to levels ``lo``, ``hi`` of ``axis``.

    Branches where ``keep`` is True are left untouched.
    """
    idx_lo = (slice(None),) * axis + (lo,)
    idx_hi = (slice(None),) * axis + (hi,)
    a, b = tensor[idx_lo], tensor[idx_hi]
    new_a = u[0] * a + u[1] * b
    new_b = u[2] * a + u[3] * b
    if keep is not None:
        new_a = np.where(keep, a, new_a)
        new_b = np.where(keep, b, new_b)
    out = tensor.copy()
    out[idx_lo] = new_a
    out[idx_hi] = new_b
    return out


def rotation_matrix(area: float, phase: float) -> np.ndarray:
    c, s = math.cos(area / 2), math.sin(area / 2)
    return np.array([[c, -1j * s * cmath.exp(-1j * phase)],
                     [-1j * s * cmath.exp(1j * phase), c]])


_E_MASK = (np.arange(NLEVELS) == Level.E).astype(float)


def _excited_sum(state: StateVector, axis: int, weights: dict[int, float]):
    """Summed weight of partner ions in |e>, on the tensor shape with ``axis`` removed.

    Returns None when no partner is part of the state.
    """
    n = state.n_ions - 1
    total = None
    for ion, w in weights.items():
        if int(ion) not in state.ion_ids:
            continue
        m = state.axis(ion)
        m = m if m < axis else m - 1
        term = (w * _E_MASK).reshape((1,) * m + (NLEVELS,) + (1,) * (n - m - 1))
        total = term if total is None else total + term
    return total


def apply_pulse(state: StateVector, op: PulseOp, excited_context: BlockadeContext | None = None) -> StateVector:
    """Drive ``op.transition`` on every target ion in turn.

    In ideal-blockade mode the rotation is suppressed on each basis branch in
    which a partner coupled at or above ``g_min`` sits in |e>.  In detuned mode
    the upper level is shifted by the summed coupling of excited partners and
    the exact two-level propagator for ``op.duration`` is used.
    """
    ctx = excited_context or _EMPTY_CONTEXT
    lo, hi = (int(x) for x in op.transition)
    tensor = state.tensor()
    for target in op.targets:
        axis = state.axis(target)
        partners = ctx.partners(target)
        if op.mode is PulseMode.IDEAL_BLOCKADE:
            strong = {i: 1.0 for i, g in partners.items() if g >= ctx.g_min}
            excited = _excited_sum(state, axis, strong)
            R = rotation_matrix(op.area, op.phase).ravel()
            tensor = _two_level(tensor, axis, lo, hi, R, None if excited is None else excited > 0)
        else:
            excited = _excited_sum(state, axis, partners)
            delta = 0.0 if excited is None else 2 * math.pi * excited
            u = _detuned_propagator(op.area / op.duration, op.phase, delta, op.duration)
            tensor = _two_level(tensor, axis, lo, hi, u)
    return state.replace(tensor)


def _detuned_propagator(rabi, phase, delta, t):
    """Entries of exp(-i H t) for H = [[0, rabi/2 e^{-i phase}], [c.c., delta]]."""
    delta = np.asarray(delta, dtype=float)
    c = 0.5 * rabi * np.exp(-1j * phase)
    lam = np.sqrt(abs(c) ** 2 + delta**2 / 4)
    cos = np.cos(lam * t)
    sin_over = t * np.sinc(lam * t / math.pi)
    glob = np.exp(-0.5j * delta * t)
    u00 = glob * (cos + 0.5j * delta * sin_over)
    u11 = glob * (cos - 0.5j * delta * sin_over)
    u01 = glob * (-1j * c * sin_over)
    u10 = glob * (-1j * np.conj(c) * sin_over)
    return [u00, u01, u10, u11]


def rotate(state: StateVector, ion_id: int, transition=(Level.ZERO, Level.ONE),
           area: float = math.pi, phase: float = 0.0) -> StateVector:
    """Unconditional rotation of one ion."""
    return apply_pulse(state, PulseOp(ion_id, transition, area, phase))


def phase_shift(state: StateVector, ion_id: int, level: Level, phi: float) -> StateVector:
    """Multiply the ``level`` component of ``ion_id`` by exp(i phi)."""
    tensor = state.tensor().copy()
    idx = [slice(None)] * state.n_ions
    idx[state.axis(ion_id)] = int(level)
    tensor[tuple(idx)] *= np.exp(1j * phi)
    return state.replace(tensor)


def controlled_x(state: StateVector, control: int, control_level: Level, target: int,
                 pair=(Level.ZERO, Level.ONE)) -> StateVector:
    """Swap ``pair`` levels of ``target`` on branches where ``control`` is in ``control_level``."""
    tensor = state.tensor().copy()
    ca, ta = state.axis(control), state.axis(target)
    idx_a = [slice(None)] * state.n_ions
    idx_b = [slice(None)] * state.n_ions
    idx_a[ca] = idx_b[ca] = int(control_level)
    idx_a[ta], idx_b[ta] = int(pair[0]), int(pair[1])
    a, b = tensor[tuple(idx_a)].copy(), tensor[tuple(idx_b)].copy()
    tensor[tuple(idx_a)], tensor[tuple(idx_b)] = b, a
    return state.replace(tensor)


def measure_population(state: StateVector, ion_id: int, level: Level | int) -> float:
    try:
        level = Level(level)
    except ValueError:
        raise AddressingError(f"unknown level {level!r}") from None
    comp = np.take(state.tensor(), int(level), axis=state.axis(ion_id))
    return float(np.vdot(comp, comp).real)


def populations(state: StateVector, ion_id: int) -> np.ndarray:
    return np.array([measure_population(state, ion_id, lv) for lv in Level])


def project(state: StateVector, ion_id: int, level: Level) -> StateVector:
    """Collapse ``ion_id`` onto ``level`` and renormalise."""
    tensor = np.zeros_like(state.tensor())
    idx = [slice(None)] * state.n_ions
    idx[state.axis(ion_id)] = int(level)
    tensor[tuple(idx)] = state.tensor()[tuple(idx)]
    norm = np.linalg.norm(tensor)
    if norm == 0:
        raise ProtocolStateError(f"ion {ion_id} has no {Level(level).name} component")
    return state.replace(tensor / norm)


def move_level(state: StateVector, ion_id: int, src: Level, dst: Level) -> StateVector:
    """Transfer all ``src`` amplitude of an ion to ``dst`` (which must be empty)."""
    if measure_population(state, ion_id, dst) > 1e-24:
        raise ProtocolStateError(f"ion {ion_id} already populates {Level(dst).name}")
    return _swap_levels(state, ion_id, src, dst)


def _swap_levels(state, ion_id, a, b):
    tensor = state.tensor().copy()
    idx_a = [slice(None)] * state.n_ions
    idx_b = [slice(None)] * state.n_ions
    ax = state.axis(ion_id)
    idx_a[ax], idx_b[ax] = int(a), int(b)
    tmp = tensor[tuple(idx_a)].copy()
    tensor[tuple(idx_a)] = tensor[tuple(idx_b)]
    tensor[tuple(idx_b)] = tmp
    return state.replace(tensor)


def reset_ion(state: StateVector, ion_id: int, rng: np.random.Generator | None = None,
              level: Level = Level.ZERO) -> StateVector:
    """Re-initialise one ion to ``level``.

    If the ion is unentangled its local state is simply replaced.  Otherwise
    it is first measured in the level basis, which needs ``rng``.
    """
    ax = state.axis(ion_id)
    mat = np.moveaxis(state.tensor(), ax, 0).reshape(NLEVELS, -1)
    u, s, vh = np.linalg.svd(mat, full_matrices=False)
    if len(s) == 1 or s[1] < 1e-9 * s[0]:
        rest = s[0] * vh[0]
    else:
        if rng is None:
            raise ProtocolStateError(f"ion {ion_id} is entangled; resetting it needs an rng")
        probs = np.einsum("ij,ij->i", mat.conj(), mat).real
        outcome = rng.choice(NLEVELS, p=probs / probs.sum())
        rest = mat[outcome] / math.sqrt(probs[outcome])
    new = np.zeros((NLEVELS, rest.size), dtype=complex)
    new[int(level)] = rest / np.linalg.norm(rest)
    tensor = np.moveaxis(new.reshape((NLEVELS,) + (NLEVELS,) * (state.n_ions - 1)), 0, ax)
    return state.replace(tensor)


def drop_ion(state: StateVector, ion_id: int, level: Level) -> StateVector:
    """Remove an ion known to sit in ``level`` with certainty from the register."""
    if abs(measure_population(state, ion_id, level) - 1.0) > 1e-9:
        raise ProtocolStateError(f"ion {ion_id} is not definitely in {Level(level).name}")
    ax = state.axis(ion_id)
    rest = np.take(state.tensor(), int(level), axis=ax)
    ids = tuple(i for i in state.ion_ids if i != int(ion_id))
    return StateVector(ids, rest.reshape(-1) / np.linalg.norm(rest))


# -- two-qubit gate -----------------------------------------------------------

def blockade_cz(state: StateVector, control_id: int, target_id: int,
                context: BlockadeContext | None = None, mode: PulseMode = PulseMode.IDEAL_BLOCKADE,
                rabi: float | None = None) -> StateVector:
    """Controlled phase from pi(control) . 2pi(target) . pi(control) on the 0<->e lines.

    Each of |00>, |01>, |10> returns with a sign flip and |11> is untouched,
    i.e. CZ times a global phase of -1 on the qubit subspace.
    """
    ctx = context or BlockadeContext.star(control_id, [target_id])
    mode = PulseMode(mode)
    if mode is PulseMode.IDEAL_BLOCKADE and ctx.strength(control_id, target_id) < ctx.g_min:
        raise ArchitectureError(f"ions {control_id} and {target_id} are not coupled above g_min")
    if mode is PulseMode.DETUNED and not rabi:
        raise ValueError("detuned blockade gate needs a Rabi frequency")

    def pulse(ion, area):
        duration = area / rabi if mode is PulseMode.DETUNED else 0.0
        return PulseOp(ion, (Level.ZERO, Level.E), area, 0.0, mode, duration)

    for op in (pulse(control_id, math.pi), pulse(target_id, 2 * math.pi), pulse(control_id, math.pi)):
        state = apply_pulse(state, op, ctx)
    return state


def cnot(state: StateVector, control_id: int, target_id: int,
         context: BlockadeContext | None = None) -> StateVector:
    """CNOT (up to a global sign) built from the blockade gate and target rotations."""
    state = rotate(state, target_id, (Level.ZERO, Level.ONE), math.pi / 2, math.pi / 2)
    state = blockade_cz(state, control_id, target_id, context)
    state = rotate(state, target_id, (Level.ZERO, Level.ONE), math.pi / 2, -math.pi / 2)
    return phase_shift(state, control_id, Level.ONE, math.pi)


# -- distillation -------------------------------------------------------------

def _trace(trace, text):
    if trace is not None:
        trace.append(text)


def interrogate(state: StateVector, bus_id: int, channel_ids: Sequence[int], alpha: float,
                context: BlockadeContext | None = None, trace: list | None = None) -> StateVector:
    """Steps 1-3 of a distillation round: encode the channel occupancy on the bus.

    Starting from bus |0> and n channel ions in |0>, leaves the bus in
    sin((n-1)alpha/2)|0> + cos((n-1)alpha/2)|1> up to a global phase.
    """
    ctx = context or BlockadeContext.star(bus_id, channel_ids)
    state = rotate(state, bus_id, (Level.ZERO, Level.ONE), math.pi / 2, math.pi / 2)
    _trace(trace, f"bus {bus_id}: pi/2 (0-1) -> (|0>+|1>)/sqrt2")
    state = apply_pulse(state, PulseOp(bus_id, (Level.ZERO, Level.E), math.pi, 0.0), ctx)
    _trace(trace, f"bus {bus_id}: pi (0-e)")
    if channel_ids:
        # the pi phase offset on the return pulse cancels the sign of a 2pi rotation
        state = apply_pulse(state, PulseOp(tuple(channel_ids), (Level.ZERO, Level.E), math.pi, 0.0), ctx)
        state = apply_pulse(state, PulseOp(tuple(channel_ids), (Level.ZERO, Level.E), math.pi,
                                           math.pi - alpha), ctx)
        _trace(trace, f"channel {tuple(channel_ids)}: pi, pi(phase pi-alpha) (0-e), alpha={alpha:.6f}")
    state = apply_pulse(state, PulseOp(bus_id, (Level.ZERO, Level.E), math.pi, math.pi), ctx)
    _trace(trace, f"bus {bus_id}: pi (e-0)")
    state = rotate(state, bus_id, (Level.ZERO, Level.ONE), math.pi / 2, alpha + math.pi / 2)
    # frame update so the |1> amplitude is real relative to |0>
    state = phase_shift(state, bus_id, Level.ONE, -(alpha + math.pi / 2))
    _trace(trace, f"bus {bus_id}: pi/2 about azimuth alpha+pi/2")
    return state


def interrogate_inverse(state: StateVector, bus_id: int, channel_ids: Sequence[int], alpha: float,
                        context: BlockadeContext | None = None) -> StateVector:
    """Exact inverse of :func:`interrogate`."""
    ctx = context or BlockadeContext.star(bus_id, channel_ids)
    state = phase_shift(state, bus_id, Level.ONE, alpha + math.pi / 2)
    state = rotate(state, bus_id, (Level.ZERO, Level.ONE), math.pi / 2, alpha + math.pi / 2 + math.pi)
    state = apply_pulse(state, PulseOp(bus_id, (Level.ZERO, Level.E), math.pi, 0.0), ctx)
    if channel_ids:
        state = apply_pulse(state, PulseOp(tuple(channel_ids), (Level.ZERO, Level.E), math.pi,
                                           -alpha), ctx)
        state = apply_pulse(state, PulseOp(tuple(channel_ids), (Level.ZERO, Level.E), math.pi,
                                           math.pi), ctx)
    state = apply_pulse(state, PulseOp(bus_id, (Level.ZERO, Level.E), math.pi, math.pi), ctx)
    state = rotate(state, bus_id, (Level.ZERO, Level.ONE), math.pi / 2, -math.pi / 2)
    return state


def tag(state: StateVector, bus_id: int, channel_ids: Sequence[int]) -> StateVector:
    """Flip channel ions 0<->1 where the bus is |1>; tagged ions are those left in |0>."""
    for c in channel_ids:
        state = controlled_x(state, bus_id, Level.ONE, c)
    return state


def _check_ground(state, ids, what):
    for i in ids:
        if measure_population(state, i, Level.ZERO) < 1 - 1e-9:
            raise ProtocolStateError(f"{what} ion {i} is not in |0>")


def distill_round(state: StateVector, bus_id: int, channel_ids: Sequence[int], alpha: float,
                  beta: float, rng: np.random.Generator, context: BlockadeContext | None = None,
                  branch_to_aux: float = 1.0, trace: list | None = None) -> tuple[StateVector, int]:
    """One round of the single-ion-per-channel distillation.

    ``beta`` is the probability that a tagged ion decays.  The decay is
    unravelled ion by ion: with probability ``beta * P(|0>)`` the ion is found
    decayed and collapsed to |0> (then moved to |aux> with probability
    ``branch_to_aux``), otherwise its |0> amplitude is damped by sqrt(1-beta).
    """
    channel_ids = tuple(channel_ids)
    context = context or BlockadeContext.star(bus_id, channel_ids)
    _check_ground(state, (bus_id,), "bus")
    _check_ground(state, channel_ids, "channel")
    state = interrogate(state, bus_id, channel_ids, alpha, context, trace)
    state = tag(state, bus_id, channel_ids)
    _trace(trace, f"cnot bus {bus_id} -> channel {channel_ids}")

    decays = 0
    damp = math.sqrt(1.0 - beta)
    for c in channel_ids:
        p0 = measure_population(state, c, Level.ZERO)
        if rng.random() < beta * p0:
            state = project(state, c, Level.ZERO)
            if rng.random() < branch_to_aux:
                state = _swap_levels(state, c, Level.ZERO, Level.AUX)
            decays += 1
        else:
            tensor = state.tensor().copy()
            idx = [slice(None)] * state.n_ions
            idx[state.axis(c)] = int(Level.ZERO)
            tensor[tuple(idx)] *= damp
            state = state.replace(tensor / np.linalg.norm(tensor))
    _trace(trace, f"decay step beta={beta}: {decays} decays")

    state = tag(state, bus_id, channel_ids)
    state = reset_ion(state, bus_id, rng)
    _trace(trace, f"cnot, reset bus {bus_id}")
    return state, decays


@dataclass(frozen=True)
class DistillConfig:
    alpha_schedule: tuple[float, ...] = DEFAULT_ALPHA_SCHEDULE
    beta: float = 0.05
    branch_to_aux: float = 1.0
    max_rounds: int = 1000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "alpha_schedule", tuple(float(a) for a in self.alpha_schedule))
        if not self.alpha_schedule:
            raise ValueError("alpha schedule is empty")
        if not all(0 < a < 2 * math.pi for a in self.alpha_schedule):
            raise ValueError("alpha values must lie in (0, 2pi)")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not 0 <= self.branch_to_aux <= 1:
            raise ValueError("branch_to_aux must lie in [0, 1]")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be positive")


@dataclass(frozen=True)
class DistillOutcome:
    final_occupancy: int
    rounds_used: int
    per_round_decays: tuple[int, ...]
    per_round_occupancy: tuple[int, ...]
    timed_out: bool = False

    @property
    def total_decays(self) -> int:
        return sum(self.per_round_decays)


def distill_until_single(n_initial: int, config: DistillConfig,
                         rng: np.random.Generator | None = None,
                         trace: list | None = None) -> DistillOutcome:
    """Repeat rounds, cycling through the alpha schedule, until one ion (or none) is left.

    Stopping needs the occupancy to be at most one and a full pass over the
    schedule without a decay; ``max_rounds`` caps the run (timed-out outcome).
    """
    if n_initial < 0:
        raise ValueError("n_initial must be non-negative")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    bus = 0
    live = list(range(1, n_initial + 1))
    state = product_state([bus] + live)
    decays, occupancy = [], []
    quiet = 0
    rounds = 0
    while rounds < config.max_rounds:
        alpha = config.alpha_schedule[rounds % len(config.alpha_schedule)]
        occupancy.append(len(live))
        state, d = distill_round(state, bus, live, alpha, config.beta, rng,
                                 branch_to_aux=config.branch_to_aux, trace=trace)
        rounds += 1
        decays.append(d)
        for ion in list(live):
            if measure_population(state, ion, Level.AUX) > 0.5:
                state = drop_ion(state, ion, Level.AUX)
                live.remove(ion)
        quiet = quiet + 1 if d == 0 else 0
        if len(live) <= 1 and quiet >= len(config.alpha_schedule):
            break
    timed_out = len(live) > 1
    return DistillOutcome(len(live), rounds, tuple(decays), tuple(occupancy), timed_out)


__all__ = [
    "AddressingError", "ArchitectureError", "BlockadeContext", "DEFAULT_ALPHA_SCHEDULE",
    "DistillConfig", "DistillOutcome", "GOLDEN_ANGLE", "NLEVELS", "ProtocolStateError",
    "PulseMode", "PulseOp", "StateVector", "apply_pulse", "blockade_cz", "cnot",
    "controlled_x", "distill_round", "distill_until_single", "drop_ion", "from_local_states",
    "interrogate", "interrogate_inverse", "measure_population", "phase_shift", "populations",
    "product_state", "project", "reset_ion", "rotate", "rotation_matrix", "tag",
]
