import io
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from reqc.entanglement import (Bipartition, DegenerateSchmidtWarning, Drive, NormalizationError,
                               OperatorError, Segment, StepSizeError, blockade_cz_plan,
                               coupling_hamiltonian, entanglement_rate, entropy_from_coeffs,
                               excited_projector, f_max, f_theta, rate_bound_check,
                               schmidt_decompose, simulate_gate_trajectory, total_excitation,
                               von_neumann_entropy)
from reqc.qsim import StateVector, from_local_states, product_state

AB = Bipartition((0,), (1,))
PLUS = np.array([1, 1, 0, 0]) / math.sqrt(2)


def random_state(rng, n=2):
    psi = rng.normal(size=4**n) + 1j * rng.normal(size=4**n)
    return StateVector(tuple(range(n)), psi / np.linalg.norm(psi))


def random_hermitian(rng, d, scale=1.0):
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * (A + A.conj().T) / 2


def oracle_entropy(psi, da, db):
    """Entropy from the eigenvalues of the reduced density matrix of A."""
    M = psi.reshape(da, db)
    rho = M @ M.conj().T
    lam = np.linalg.eigvalsh(rho)
    lam = lam[lam > 1e-16]
    return float(-np.sum(lam * np.log2(lam)))


def fd_rate(psi, H, h=1e-5, da=4, db=4):
    plus = expm(-1j * H * h) @ psi
    minus = expm(1j * H * h) @ psi
    return (oracle_entropy(plus, da, db) - oracle_entropy(minus, da, db)) / (2 * h)


def test_schmidt_product_and_bell():
    assert schmidt_decompose(product_state([0, 1]), AB).coeffs[0] == pytest.approx(1.0)
    bell = np.zeros(16)
    bell[0] = bell[5] = 1 / math.sqrt(2)
    dec = schmidt_decompose(StateVector((0, 1), bell), AB)
    assert dec.coeffs[:2] == pytest.approx([1 / math.sqrt(2)] * 2)
    assert von_neumann_entropy(StateVector((0, 1), bell), AB) == pytest.approx(1.0, abs=1e-12)
    assert von_neumann_entropy(product_state([0, 1]), AB) == 0.0


def test_entropy_formula_value():
    assert entropy_from_coeffs([math.sqrt(0.9), math.sqrt(0.1)]) == pytest.approx(0.4690, abs=1e-4)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), na=st.integers(1, 2), nb=st.integers(1, 2))
def test_schmidt_reconstruction_and_orthonormality(seed, na, nb):
    rng = np.random.default_rng(seed)
    n = na + nb
    s = random_state(rng, n)
    ids = list(rng.permutation(n))
    bp = Bipartition(tuple(ids[:na]), tuple(ids[na:]))
    dec = schmidt_decompose(s, bp)
    assert np.sum(dec.coeffs**2) == pytest.approx(1.0, abs=1e-10)
    from reqc.entanglement import coefficient_matrix
    M = coefficient_matrix(s, bp)
    assert np.max(np.abs(dec.reconstruct() - M)) < 1e-10
    k = len(dec.coeffs)
    assert np.allclose(dec.basis_a.conj() @ dec.basis_a.T, np.eye(k), atol=1e-10)
    assert np.allclose(dec.basis_b.conj() @ dec.basis_b.T, np.eye(k), atol=1e-10)
    # coefficients equal the singular values of an independent dense decomposition
    lam = np.sort(np.linalg.eigvalsh(M @ M.conj().T))[::-1][:k]
    assert np.allclose(dec.coeffs**2, lam, atol=1e-10)


def test_normalization_error():
    with pytest.raises(NormalizationError):
        schmidt_decompose(StateVector((0, 1), np.ones(16)), AB)


def test_bipartition_must_cover_state():
    with pytest.raises(ValueError):
        schmidt_decompose(product_state([0, 1, 2]), AB)
    with pytest.raises(ValueError):
        Bipartition((0,), (0, 1))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_entropy_invariant_under_local_unitaries(seed):
    rng = np.random.default_rng(seed)
    s = random_state(rng)
    U = expm(-1j * random_hermitian(rng, 4))
    V = expm(-1j * random_hermitian(rng, 4))
    t = np.einsum("ab,cd,bd->ac", U, V, s.tensor())
    e0 = von_neumann_entropy(s, AB)
    assert von_neumann_entropy(StateVector((0, 1), t), AB) == pytest.approx(e0, abs=1e-10)
    assert e0 == pytest.approx(oracle_entropy(s.amplitudes, 4, 4), abs=1e-10)


def test_rate_matches_finite_differences():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(100):
        s = random_state(rng)
        H = random_hermitian(rng, 16)
        with warnings.catch_warnings():
            warnings.simplefilter("error", DegenerateSchmidtWarning)
            rate = entanglement_rate(s, AB, H)
        err = abs(rate - fd_rate(s.amplitudes, H))
        worst = max(worst, err / max(1.0, abs(rate)))
    assert worst <= 1e-6


def test_rate_with_permuted_ion_order():
    rng = np.random.default_rng(7)
    s = random_state(rng, 3)
    H = random_hermitian(rng, 64)
    bp = Bipartition((2,), (0, 1))
    # oracle: reorder the state so that ion 2 is first
    psi = np.transpose(s.tensor(), (2, 0, 1)).ravel()
    Hp = np.transpose(H.reshape((4,) * 6), (2, 0, 1, 5, 3, 4)).reshape(64, 64)
    assert entanglement_rate(s, bp, H) == pytest.approx(fd_rate(psi, Hp, da=4, db=16), abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_local_hamiltonian_gives_zero_rate(seed):
    rng = np.random.default_rng(seed)
    s = random_state(rng)
    Ha = random_hermitian(rng, 4, 10.0)
    Hb = random_hermitian(rng, 4, 10.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSchmidtWarning)
        assert abs(entanglement_rate(s, AB, np.kron(np.eye(4), Hb))) < 1e-10
        assert abs(entanglement_rate(s, AB, np.kron(Ha, np.eye(4)))) < 1e-10


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_rate_additive_and_time_reversal_odd(seed):
    rng = np.random.default_rng(seed)
    s = random_state(rng)
    H1, H2 = random_hermitian(rng, 16), random_hermitian(rng, 16)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSchmidtWarning)
        r1, r2 = entanglement_rate(s, AB, H1), entanglement_rate(s, AB, H2)
        assert entanglement_rate(s, AB, H1 + H2) == pytest.approx(r1 + r2, abs=1e-9)
        assert entanglement_rate(s, AB, -H1) == pytest.approx(-r1, abs=1e-12)


def test_non_hermitian_operator_rejected():
    with pytest.raises(OperatorError):
        entanglement_rate(random_state(np.random.default_rng(0)), AB, np.triu(np.ones((16, 16))))
    with pytest.raises(OperatorError):
        entanglement_rate(random_state(np.random.default_rng(0)), AB, np.ones((16, 4)))


def test_degenerate_spectrum_warns():
    bell = np.zeros(16)
    bell[0] = bell[5] = 1 / math.sqrt(2)
    with pytest.warns(DegenerateSchmidtWarning):
        entanglement_rate(StateVector((0, 1), bell), AB, np.eye(16))


def test_bound_trivial_for_ground_state():
    rep = rate_bound_check(product_state([0, 1]), AB, 1e8)
    assert (rep.Edot, rep.bound, rep.satisfied) == (0.0, 0.0, True)


def test_proven_bound_holds_and_excitation_two_ways():
    # |Edot| <= 4 f_max g sum_i c_i^2 w_i = 2 f_max P_e g follows from the w-inequality
    _, fstar = f_max()
    rng = np.random.default_rng(5)
    g = 2 * math.pi * 1e7
    for _ in range(2000):
        rep = rate_bound_check(random_state(rng), AB, g)
        assert rep.P_e_schmidt == pytest.approx(rep.P_e_tot, abs=1e-10)
        assert abs(rep.Edot) <= 2 * fstar * rep.P_e_tot * g * (1 + 1e-12)


# a two-level state (levels g and e of each ion) found by maximising |Edot| / (P_e g / 2)
HALF_BOUND_COUNTEREXAMPLE = {0: 0.8066, 3: 0.2786 + 0.2597j, 12: 0.3643 - 0.1112j, 15: -0.0328 + 0.2412j}


def test_half_bound_is_not_universal():
    psi = np.zeros(16, complex)
    for k, v in HALF_BOUND_COUNTEREXAMPLE.items():
        psi[k] = v
    psi /= np.linalg.norm(psi)
    g = 1.0
    Hc = np.zeros((16, 16))
    Hc[15, 15] = g
    fd = fd_rate(psi, Hc, h=1e-6)
    rep = rate_bound_check(StateVector((0, 1), psi), AB, g)
    assert rep.Edot == pytest.approx(fd, rel=1e-6)
    assert abs(fd) / rep.bound > 1.25
    assert not rep.satisfied


def test_excitation_helpers():
    s = from_local_states((0, 1), [np.array([0, 0, 0, 1.0]), np.array([0.6, 0, 0, 0.8])])
    assert total_excitation(s) == pytest.approx(1.64)
    P = excited_projector(s, 1)
    assert np.real(np.vdot(s.amplitudes, P @ s.amplitudes)) == pytest.approx(0.64)
    H = coupling_hamiltonian(s, 0, 1, 3.0)
    assert np.real(np.vdot(s.amplitudes, H @ s.amplitudes)) == pytest.approx(3.0 * 0.64)


def test_f_theta_values_and_symmetry():
    assert f_theta(math.pi / 4) == pytest.approx(0.0, abs=1e-15)
    assert f_theta(0.0) == 0.0 and f_theta(math.pi / 2) == 0.0
    for t in np.linspace(0.01, math.pi / 2 - 0.01, 50):
        assert f_theta(t) == pytest.approx(f_theta(math.pi / 2 - t), abs=1e-12)


def test_f_max_against_grid_oracle():
    grid = np.linspace(1e-6, math.pi / 4, 2_000_001)
    vals = np.abs(np.log2(np.tan(grid))) * np.sin(grid) * np.cos(grid)
    k = int(np.argmax(vals))
    theta, f = f_max()
    assert theta == pytest.approx(grid[k], abs=1e-6)
    assert f == pytest.approx(vals[k], abs=1e-12)
    assert f == pytest.approx(0.4781, abs=5e-4)
    assert theta == pytest.approx(0.2929, abs=5e-4)
    assert math.tan(theta) == pytest.approx(0.3017, abs=1e-3)


def test_zero_controls_keep_ground_state():
    tr = simulate_gate_trajectory(product_state([0, 1]), [Segment(1e-7)], 2 * math.pi * 1e7, 1e-9)
    assert np.all(tr.P_e == 0) and np.all(tr.E == 0)
    assert np.all(np.diff(tr.times) > 0)


def test_ideal_limit_trajectory_reaches_one_ebit_and_obeys_bound():
    g, rabi = 2 * math.pi * 4e7, 2 * math.pi * 1e6
    tr = simulate_gate_trajectory(from_local_states((0, 1), [PLUS, PLUS]), blockade_cz_plan(rabi),
                                  g, 0.05 / g)
    assert np.all(tr.bound_margin() >= -1e-9)
    assert tr.E[-1] > 0.97
    assert tr.total_integrated_P_e > 2 / g
    for st_ in tr.states[:: len(tr.states) // 10]:
        assert st_.norm == pytest.approx(1.0, abs=1e-6)
    buf = io.StringIO()
    tr.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,P_e,E,running_integral_P_e"
    assert lines[-1].startswith("# bound") and "satisfied=True" in lines[-1]


def test_step_size_error():
    g = 2 * math.pi * 1e8
    with pytest.raises(StepSizeError):
        simulate_gate_trajectory(from_local_states((0, 1), [PLUS, PLUS]),
                                 blockade_cz_plan(2 * math.pi * 1e6), g, 1.0 / g)


def test_drive_with_detuning_and_phase():
    # single driven ion, exact Rabi oscillation check
    rabi = 2 * math.pi * 1e6
    plan = [Segment(math.pi / rabi, (Drive(0, rabi, 0.3),))]
    tr = simulate_gate_trajectory(product_state([0, 1]), plan, 1.0, 1e-10)
    assert tr.P_e[-1] == pytest.approx(1.0, abs=1e-8)
    assert tr.E[-1] == pytest.approx(0.0, abs=1e-8)
