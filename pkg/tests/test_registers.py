import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reqc.crystal import (ChannelPlan, CouplingParams, Crystal, CrystalParams, Ion, Level,
                          ParameterError, coupling_graph, generate_crystal, minimum_image)
from reqc.registers import (Architecture, CensusResult, CensusSetup, census, census_row,
                            enhancement_factor, holeburn_simulate, p_register_exact,
                            p_register_postselect, required_nbar, run_census, wilson_interval,
                            write_census_csv)

CP = CouplingParams()


def test_exact_yield_examples():
    assert p_register_exact(1.0, 1) == pytest.approx(math.exp(-1), rel=1e-15)
    assert p_register_exact(0.3, 0) == 1.0
    assert p_register_exact(1.0, 10) == pytest.approx(4.539992976248485e-05, rel=1e-12)


def test_exact_yield_maximum_is_e_to_minus_n():
    for N in range(1, 11):
        for nbar in np.linspace(0.01, 5, 400):
            assert p_register_exact(nbar, N) <= math.exp(-N) * (1 + 1e-12)
        assert p_register_exact(1.0, N) == pytest.approx(math.exp(-N), rel=1e-12)
        assert p_register_exact(1.05, N) < math.exp(-N)


def test_postselect_yield_examples():
    assert p_register_postselect(4.6052, 10) == pytest.approx(0.9044, abs=1e-4)
    # (1 - 1e-3)^100; the N=10 value 0.9044 does not carry over to N=100
    assert p_register_postselect(6.9078, 100) == pytest.approx(0.9047962, abs=1e-6)
    assert p_register_postselect(6.9078, 100) > 0.9
    assert p_register_postselect(0.0, 4) == 0.0


@settings(max_examples=200)
@given(nbar=st.floats(0.0, 20.0), dn=st.floats(1e-3, 5.0), N=st.integers(1, 50))
def test_postselect_yield_monotone(nbar, dn, N):
    assert p_register_postselect(nbar + dn, N) >= p_register_postselect(nbar, N)
    assert p_register_postselect(nbar, N + 1) <= p_register_postselect(nbar, N)


def test_required_nbar():
    assert required_nbar(10, 0.9).approx == pytest.approx(4.6052, abs=1e-4)
    assert required_nbar(100, 0.9).approx == pytest.approx(6.9078, abs=1e-4)
    assert required_nbar(1, 1 - math.exp(-1)).exact == pytest.approx(1.0, rel=1e-12)
    r = required_nbar(10, 0.9)
    assert p_register_postselect(r.exact, 10) == pytest.approx(0.9, rel=1e-12)
    with pytest.raises(ParameterError):
        required_nbar(10, 1.0)


def test_invalid_queries():
    with pytest.raises(ParameterError):
        p_register_exact(-1.0, 2)
    with pytest.raises(ParameterError):
        p_register_postselect(1.0, 1.5)


def test_enhancement_factor():
    assert [enhancement_factor(n) for n in (2, 3, 5)] == [1, 8, 512]
    with pytest.raises(ParameterError):
        enhancement_factor(1)


@settings(max_examples=200)
@given(trials=st.integers(1, 10_000), frac=st.floats(0, 1))
def test_wilson_contains_p_hat(trials, frac):
    hits = int(frac * trials)
    lo, hi = wilson_interval(hits, trials)
    assert 0 <= lo <= hits / trials <= hi <= 1


def test_wilson_matches_textbook_value():
    # 20/100 at 95%: (0.1333, 0.2888)
    lo, hi = wilson_interval(20, 100)
    assert lo == pytest.approx(0.13333, abs=1e-4)
    assert hi == pytest.approx(0.28885, abs=1e-4)


def test_census_result_merge_and_validation():
    a = CensusResult(Architecture.BUS, 2, 10, 3) + CensusResult(Architecture.BUS, 2, 5, 1)
    assert (a.trials, a.hits) == (15, 4)
    with pytest.raises(ValueError):
        CensusResult(Architecture.BUS, 2, 3, 4)
    with pytest.raises(ValueError):
        a + CensusResult(Architecture.CLIQUE, 2, 1, 1)
    assert math.isnan(CensusResult(Architecture.BUS, 1, 0, 0).p_hat)


def naive_census(crystal, plan, R):
    """Oracle: per-candidate loops over minimum-image distances."""
    L = crystal.params.box_side
    half = plan.channel_width / 2
    chan = {}
    for k, ion in enumerate(crystal.ions):
        if ion.level == Level.AUX:
            continue
        for c, centre in enumerate(plan.centers):
            if abs(ion.shift - centre) <= half:
                chan[k] = c

    def close(a, b):
        d = minimum_image(crystal.positions[a] - crystal.positions[b], L)
        return math.sqrt(float(d @ d)) <= R

    trials = star = clique = 0
    for a, c in chan.items():
        if c != 0:
            continue
        trials += 1
        picks = []
        for q in range(1, len(plan)):
            near = [b for b, cb in chan.items() if cb == q and close(a, b)]
            if len(near) != 1:
                break
            picks.append(near[0])
        else:
            star += 1
            clique += all(close(x, y) for i, x in enumerate(picks) for y in picks[i + 1:])
    return trials, star, clique


@pytest.mark.parametrize("N,nbar,seed", [(1, 1.0, 0), (2, 1.0, 1), (3, 0.7, 2), (3, 2.0, 3)])
def test_census_matches_naive_oracle(N, nbar, seed):
    setup = CensusSetup(nbar, N, CP, candidates_per_crystal=60)
    crystal = generate_crystal(setup.crystal_params(seed))
    graph = coupling_graph(crystal, CP)
    plan = setup.plan()
    bus = census(crystal, graph, plan, "bus")
    clique = census(crystal, graph, plan, Architecture.CLIQUE)
    t, s, c = naive_census(crystal, plan, CP.radius() * (1 + 1e-12))
    assert (bus.trials, bus.hits, clique.hits) == (t, s, c)
    assert t > 20


def test_census_n0_and_empty():
    setup = CensusSetup(1.0, 0, CP, candidates_per_crystal=50)
    res = run_census(setup, 10, range(5))
    assert res[Architecture.BUS].p_hat == 1.0
    empty = generate_crystal(CrystalParams(1e-8, 0.0, 1e9))
    r = census(empty, coupling_graph(empty, CP), ChannelPlan((1e8, 2e8), 1e6, 1.2e6), "bus")
    assert (r.trials, r.hits) == (0, 0)


def test_census_converges_to_exact_yield_at_nbar_1():
    setup = CensusSetup(1.0, 1, CP)
    res = run_census(setup, 10_000, range(1000))[Architecture.BUS]
    expect = math.exp(-1)
    assert abs(res.p_hat - expect) < 3 * math.sqrt(expect * (1 - expect) / res.trials)


def test_census_csv():
    res = run_census(CensusSetup(1.0, 2, CP, candidates_per_crystal=200), 500, range(100))
    buf = io.StringIO()
    write_census_csv([census_row(r, 1.0) for r in res.values()], buf)
    rows = list(csv.DictReader(io.StringIO(buf.getvalue())))
    assert {r["architecture"] for r in rows} == {"bus", "clique"}
    assert float(rows[0]["p_eq1"]) == p_register_exact(1.0, 2)


# -- hole burning ---------------------------------------------------------------

def _hand_crystal(extra=()):
    """Bus ion in channel 0 with one coupled partner in channels 1 and 2."""
    p = CrystalParams(1e-7, 0.0, 1e8)
    ions = [Ion(0, (1e-8, 1e-8, 1e-8), 1e7, 0.8e-31),
            Ion(1, (1.2e-8, 1e-8, 1e-8), 3e7, 0.8e-31),
            Ion(2, (1e-8, 1.2e-8, 1e-8), 5e7, 0.8e-31)] + list(extra)
    plan = ChannelPlan((1e7, 3e7, 5e7), 1e6, 1.2e6)
    return Crystal.from_ions(p, ions), plan


def test_holeburn_keeps_perfect_register():
    c, plan = _hand_crystal()
    out = holeburn_simulate(c, coupling_graph(c, CP), plan, 0)
    assert out == c


def test_holeburn_removes_unprotected_channel_ion():
    lonely = Ion(3, (6e-8, 6e-8, 6e-8), 3e7 + 1e5, 0.8e-31)
    burnt = Ion(4, (8e-8, 8e-8, 8e-8), 3e7 + 5.5e5, 0.8e-31)  # vacated, outside channel
    c, plan = _hand_crystal([lonely, burnt])
    out = holeburn_simulate(c, coupling_graph(c, CP), plan, 0)
    assert out.ion(3).level is Level.AUX
    assert out.ion(4).level is Level.AUX
    assert [out.ion(i).level for i in (0, 1, 2)] == [Level.ZERO] * 3


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_holeburn_idempotent_and_preserves_registers(seed):
    setup = CensusSetup(1.5, 2, CP, candidates_per_crystal=100)
    c = generate_crystal(setup.crystal_params(seed))
    g = coupling_graph(c, CP)
    plan = setup.plan()
    once = holeburn_simulate(c, g, plan, 0)
    assert holeburn_simulate(once, g, plan, 0) == once
    # every complete star register before burning survives
    before = census(c, g, plan, "bus").hits
    after = census(once, g, plan, "bus")
    assert after.hits >= before
