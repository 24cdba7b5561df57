"""Bipartite entanglement of pure states and how fast a Hamiltonian can create it.

Entropies are in bits.  Hamiltonians are angular frequencies (hbar = 1), so
rates come out in bits per second when ``H`` is in rad/s.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .crystal import Level
from .qsim import NLEVELS, StateVector

DEGENERACY_GAP = 1e-6


class NormalizationError(ValueError):
    pass


class OperatorError(ValueError):
    pass


class StepSizeError(RuntimeError):
    pass


class DegenerateSchmidtWarning(UserWarning):
    """Schmidt spectrum (nearly) degenerate; the decomposition is not unique there."""


@dataclass(frozen=True)
class Bipartition:
    side_a: tuple[int, ...]
    side_b: tuple[int, ...]

    def __post_init__(self):
        a = tuple(int(i) for i in self.side_a)
        b = tuple(int(i) for i in self.side_b)
        if set(a) & set(b):
            raise ValueError("sides of a bipartition must be disjoint")
        object.__setattr__(self, "side_a", a)
        object.__setattr__(self, "side_b", b)

    def check(self, state: StateVector) -> None:
        if sorted(self.side_a + self.side_b) != sorted(state.ion_ids):
            raise ValueError(f"bipartition {self} does not cover ions {state.ion_ids}")

    @property
    def dims(self) -> tuple[int, int]:
        return NLEVELS ** len(self.side_a), NLEVELS ** len(self.side_b)


def coefficient_matrix(state: StateVector, bipartition: Bipartition) -> np.ndarray:
    """Amplitudes reshaped to (dim A, dim B)."""
    bipartition.check(state)
    order = [state.axis(i) for i in bipartition.side_a + bipartition.side_b]
    t = np.transpose(state.tensor(), order)
    return t.reshape(bipartition.dims)


def operator_matrix(H: np.ndarray, state: StateVector, bipartition: Bipartition) -> np.ndarray:
    """Re-index a full-space operator (ordered like ``state``) to the A-then-B ordering."""
    n = state.n_ions
    order = [state.axis(i) for i in bipartition.side_a + bipartition.side_b]
    T = np.asarray(H).reshape((NLEVELS,) * (2 * n))
    T = np.transpose(T, order + [n + k for k in order])
    d = NLEVELS**n
    return T.reshape(d, d)


@dataclass(frozen=True, eq=False)
class SchmidtDecomposition:
    """Psi = sum_i coeffs[i] |basis_a[i]> |basis_b[i]>, coefficients descending.

    ``basis_a`` and ``basis_b`` hold the vectors as rows.
    """

    coeffs: np.ndarray
    basis_a: np.ndarray
    basis_b: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return np.einsum("i,ia,ib->ab", self.coeffs, self.basis_a, self.basis_b)

    @property
    def rank(self) -> int:
        return int(np.sum(self.coeffs > 1e-14))

    def min_gap(self) -> float:
        c = self.coeffs[self.coeffs > 1e-14]
        return float(np.min(np.abs(np.diff(c)))) if len(c) > 1 else math.inf


def _check_norm(state: StateVector):
    if abs(state.norm - 1.0) > 1e-9:
        raise NormalizationError(f"state norm {state.norm!r} differs from 1")


def schmidt_decompose(state: StateVector, bipartition: Bipartition) -> SchmidtDecomposition:
    _check_norm(state)
    M = coefficient_matrix(state, bipartition)
    U, s, Vh = np.linalg.svd(M, full_matrices=False)
    va = U.T.copy()
    ub = Vh.copy()
    for i in range(len(s)):
        # first non-negligible component of each |v_i> real and positive
        k = int(np.argmax(np.abs(va[i]) > 1e-12))
        ph = va[i, k] / abs(va[i, k]) if abs(va[i, k]) > 0 else 1.0
        va[i] *= np.conj(ph)
        ub[i] *= ph
    return SchmidtDecomposition(s, va, ub)


def entropy_from_coeffs(coeffs: Sequence[float]) -> float:
    p = np.asarray(coeffs, dtype=float) ** 2
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p))) + 0.0


def von_neumann_entropy(state: StateVector, bipartition: Bipartition) -> float:
    return entropy_from_coeffs(schmidt_decompose(state, bipartition).coeffs)


def _check_hermitian(H: np.ndarray):
    H = np.asarray(H)
    scale = max(1.0, float(np.max(np.abs(H)))) if H.size else 1.0
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise OperatorError(f"operator must be square, got shape {H.shape}")
    if np.max(np.abs(H - H.conj().T)) > 1e-10 * scale:
        raise OperatorError("operator is not Hermitian")


def entanglement_rate(state: StateVector, bipartition: Bipartition, H: np.ndarray) -> float:
    """dE/dt (bits per unit time) of the instantaneous state under ``H``.

    Uses 2 sum_ij log2(c_j/c_i) c_i c_j Im<v_i u_i|H|v_j u_j>; pairs with a
    vanishing coefficient contribute their limit, zero.  A near-degenerate
    Schmidt spectrum triggers :class:`DegenerateSchmidtWarning`.
    """
    _check_hermitian(H)
    dec = schmidt_decompose(state, bipartition)
    if dec.min_gap() < DEGENERACY_GAP:
        warnings.warn(f"Schmidt gap {dec.min_gap():.2e} below {DEGENERACY_GAP}",
                      DegenerateSchmidtWarning, stacklevel=2)
    Hm = operator_matrix(H, state, bipartition)
    da, db = bipartition.dims
    T = Hm.reshape(da, db, da, db)
    # H_ij = <v_i u_i| H |v_j u_j>
    Hij = np.einsum("ia,ib,abcd,jc,jd->ij", dec.basis_a.conj(), dec.basis_b.conj(), T,
                    dec.basis_a, dec.basis_b)
    c = dec.coeffs
    nz = c > 1e-14
    logc = np.where(nz, np.log2(np.where(nz, c, 1.0)), 0.0)
    L = logc[None, :] - logc[:, None]
    W = np.outer(c, c) * L
    W[~(nz[:, None] & nz[None, :])] = 0.0
    return float(2.0 * np.sum(W * Hij.imag))


def excited_projector(state: StateVector, ion_id: int) -> np.ndarray:
    """Full-space projector onto ``ion_id`` being in |e>."""
    diag = np.ones((NLEVELS,) * state.n_ions)
    idx = [slice(None)] * state.n_ions
    ax = state.axis(ion_id)
    for lv in range(NLEVELS):
        if lv != Level.E:
            idx[ax] = lv
            diag[tuple(idx)] = 0.0
    return np.diag(diag.reshape(-1))


def coupling_hamiltonian(state: StateVector, ion_a: int, ion_b: int, g: float) -> np.ndarray:
    """g |ee><ee| between two ions, identity on the rest."""
    Pa = np.diag(excited_projector(state, ion_a))
    Pb = np.diag(excited_projector(state, ion_b))
    return np.diag(g * Pa * Pb)


def total_excitation(state: StateVector, ion_ids: Sequence[int] | None = None) -> float:
    """Summed |e> population of the given ions (default: all)."""
    probs = np.abs(state.tensor()) ** 2
    total = 0.0
    for i in (state.ion_ids if ion_ids is None else ion_ids):
        total += float(np.sum(np.take(probs, int(Level.E), axis=state.axis(i))))
    return total


def excitation_weights(dec: SchmidtDecomposition, level: int = int(Level.E)) -> np.ndarray:
    """w_i = (|<v_i|e>|^2 + |<u_i|e>|^2) / 2 for single-ion sides."""
    return 0.5 * (np.abs(dec.basis_a[:, level]) ** 2 + np.abs(dec.basis_b[:, level]) ** 2)


@dataclass(frozen=True)
class RateReport:
    E: float
    Edot: float
    P_e_tot: float
    bound: float
    satisfied: bool
    P_e_schmidt: float = field(default=float("nan"))


def rate_bound_check(state: StateVector, bipartition: Bipartition, g: float,
                     tol: float = 1e-9) -> RateReport:
    """Compare |dE/dt| under g|ee><ee| with P_e_tot * g / 2 for a two-ion state."""
    if len(bipartition.side_a) != 1 or len(bipartition.side_b) != 1:
        raise ValueError("the excitation bound is defined for one ion on each side")
    if not g > 0:
        raise ValueError("g must be positive")
    a, b = bipartition.side_a[0], bipartition.side_b[0]
    Hc = coupling_hamiltonian(state, a, b, g)
    dec = schmidt_decompose(state, bipartition)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSchmidtWarning)
        edot = entanglement_rate(state, bipartition, Hc)
    p_e = total_excitation(state, (a, b))
    p_e_schmidt = float(2.0 * np.sum(excitation_weights(dec) * dec.coeffs**2))
    bound = 0.5 * p_e * g
    return RateReport(entropy_from_coeffs(dec.coeffs), edot, p_e, bound,
                      abs(edot) <= bound + tol, p_e_schmidt)


# -- the f(theta) constant ----------------------------------------------------

def f_theta(theta: float) -> float:
    """|log2 tan(theta)| sin(theta) cos(theta), extended by continuity to 0 at the endpoints."""
    theta = float(theta)
    if theta <= 0.0 or theta >= math.pi / 2:
        return 0.0
    s, c = math.sin(theta), math.cos(theta)
    if s == 0.0 or c == 0.0:
        return 0.0
    return abs(math.log2(s / c)) * s * c


def f_max(xatol: float = 1e-10) -> tuple[float, float]:
    """(theta*, f(theta*)) on (0, pi/4]; f is symmetric about pi/4."""
    res = minimize_scalar(lambda t: -f_theta(t), bounds=(1e-9, math.pi / 4),
                          method="bounded", options={"xatol": xatol})
    return float(res.x), float(-res.fun)


# -- trajectories -------------------------------------------------------------

@dataclass(frozen=True)
class Drive:
    """Resonant-frame drive on the 0<->e line of one ion (rad/s)."""

    ion: int
    rabi: float
    phase: float = 0.0
    detuning: float = 0.0


@dataclass(frozen=True)
class Segment:
    duration: float
    drives: tuple[Drive, ...] = ()


def blockade_cz_plan(rabi: float, control: int = 0, target: int = 1) -> list[Segment]:
    """pi on the control, 2pi on the target, pi on the control, at Rabi frequency ``rabi``."""
    t_pi = math.pi / rabi
    return [
        Segment(t_pi, (Drive(control, rabi),)),
        Segment(2 * t_pi, (Drive(target, rabi),)),
        Segment(t_pi, (Drive(control, rabi),)),
    ]


def _control_hamiltonian(state: StateVector, drives: Sequence[Drive]) -> np.ndarray:
    d = NLEVELS**state.n_ions
    H = np.zeros((d, d), dtype=complex)
    for dr in drives:
        local = np.zeros((NLEVELS, NLEVELS), dtype=complex)
        local[Level.ZERO, Level.E] = 0.5 * dr.rabi * np.exp(-1j * dr.phase)
        local[Level.E, Level.ZERO] = 0.5 * dr.rabi * np.exp(1j * dr.phase)
        local[Level.E, Level.E] = dr.detuning
        ax = state.axis(dr.ion)
        op = np.ones((1, 1))
        for k in range(state.n_ions):
            op = np.kron(op, local if k == ax else np.eye(NLEVELS))
        H += op
    return H


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: list
    P_e: np.ndarray
    E: np.ndarray
    integrated_P_e: np.ndarray
    g: float

    @property
    def total_integrated_P_e(self) -> float:
        return float(self.integrated_P_e[-1])

    def bound_margin(self) -> np.ndarray:
        """g/2 * running integral of P_e minus E(t); non-negative when the bound holds."""
        return 0.5 * self.g * self.integrated_P_e - self.E

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "P_e", "E", "running_integral_P_e"])
        for row in zip(self.times, self.P_e, self.E, self.integrated_P_e):
            w.writerow([repr(float(x)) for x in row])
        margin = self.bound_margin()
        w.writerow(["# bound", f"g={self.g!r}", f"min_margin={float(margin.min())!r}",
                    f"satisfied={bool(np.all(margin >= -1e-9))}"])


def simulate_gate_trajectory(initial_state: StateVector, pulse_plan: Sequence[Segment], g: float,
                             dt: float, pair: tuple[int, int] | None = None) -> Trajectory:
    """Integrate i dpsi/dt = (H_controls + g|ee><ee|) psi with classical RK4.

    Every segment is cut into equal steps no longer than ``dt``.  E(t) is the
    entanglement between the two ions of ``pair`` (default: the first two).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    _check_norm(initial_state)
    a, b = pair or initial_state.ion_ids[:2]
    others = tuple(i for i in initial_state.ion_ids if i not in (a, b))
    part = Bipartition((a,) + others, (b,))
    Hc = coupling_hamiltonian(initial_state, a, b, g)

    psi = initial_state.amplitudes.copy()
    times, states, pe, ent = [0.0], [initial_state], [total_excitation(initial_state, (a, b))], \
        [von_neumann_entropy(initial_state, part)]
    t = 0.0
    for seg in pulse_plan:
        if seg.duration <= 0:
            continue
        A = -1j * (_control_hamiltonian(initial_state, seg.drives) + Hc)
        steps = max(1, math.ceil(seg.duration / dt - 1e-9))
        h = seg.duration / steps
        for _ in range(steps):
            k1 = A @ psi
            k2 = A @ (psi + 0.5 * h * k1)
            k3 = A @ (psi + 0.5 * h * k2)
            k4 = A @ (psi + h * k3)
            psi = psi + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
            drift = abs(np.linalg.norm(psi) - 1.0)
            if drift > 1e-6:
                raise StepSizeError(f"norm drift {drift:.2e} at t={t:.3e}; use a smaller dt")
            # observables use the normalised state; psi itself is never renormalised
            st = StateVector(initial_state.ion_ids, psi / np.linalg.norm(psi))
            times.append(t)
            states.append(st)
            pe.append(total_excitation(st, (a, b)))
            ent.append(von_neumann_entropy(st, part))
    times = np.array(times)
    pe = np.array(pe)
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (pe[1:] + pe[:-1]) * np.diff(times))])
    return Trajectory(times, states, pe, np.array(ent), integral, g)


__all__ = [
    "Bipartition", "DegenerateSchmidtWarning", "Drive", "NormalizationError", "OperatorError",
    "RateReport", "SchmidtDecomposition", "Segment", "StepSizeError", "Trajectory",
    "blockade_cz_plan", "coefficient_matrix", "coupling_hamiltonian", "entanglement_rate",
    "entropy_from_coeffs", "excitation_weights", "excited_projector", "f_max", "f_theta",
    "operator_matrix", "rate_bound_check", "schmidt_decompose", "simulate_gate_trajectory",
    "total_excitation", "von_neumann_entropy",
]
