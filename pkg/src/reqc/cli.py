"""Batch front-end: ``reqc <command> [--config cfg.json] [--seed S] ...``.

Every command turns its config block into a list of independent tasks,
runs them (optionally in a process pool), sorts the resulting rows on a
canonical key and writes CSV or JSON preceded by a schema line.  Per-task
seeds come from :func:`derive_seed`, so output bytes depend only on the
config and the master seed.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .crystal import (CouplingParams, CrystalParams, ParameterError, ball_occupancy,
                      generate_crystal, save_crystal)
from .entanglement import (Bipartition, blockade_cz_plan, f_max, rate_bound_check,
                           simulate_gate_trajectory)
from .qsim import DEFAULT_ALPHA_SCHEDULE, DistillConfig, StateVector, distill_until_single, from_local_states
from .readout import (PRESETS, ReadoutModel, ScanSettings, StarkParams, collision_probability,
                      initiate_characterization, make_chain, photon_budget, stark_shift)
from .registers import (Architecture, CensusSetup, p_register_exact, p_register_postselect,
                        required_nbar, run_census)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

DEFAULT_CONFIG: dict[str, Any] = {
    "master_seed": 0,
    "trials": 100,
    "parallel": 1,
    "out": None,
    "format": "csv",
    "crystal": {"box_side": 2.0e-7, "density": 1.0e25, "bandwidth": 1.0e10, "dmu_default": 0.8e-31},
    "channels": {"channel_width": 1.0e6, "vacated_width": 1.2e6},
    "coupling": {"g_ref": 8.0e7, "r_ref": 1.0e-9, "dmu_ref": 0.8e-31, "g_min": 1.0e6},
    "census": {"nbar": [0.5, 1.0, 2.0], "N": [1, 2, 3], "candidates_per_crystal": 2000.0},
    "stats": {"nbar": [0.5, 1.0, 2.0, 4.6052, 6.9078], "N": [1, 3, 10, 100], "target_P": 0.9},
    "distill": {"n_initial": 2, "beta": 0.05, "branch_to_aux": 1.0, "max_rounds": 1000,
                "alpha_schedule": list(DEFAULT_ALPHA_SCHEDULE)},
    "entanglement": {"g": [1.0e8], "rabi": [1.0e7], "dt_fraction": 0.02},
    "readout": {"preset": "eu_yso_budget", "success_target": 0.99, "chain_length": 3,
                "resolution": 1.0e6, "pi_pulse_fidelity": 1.0, "trap_probability_per_cycle": 0.0,
                "qubit_band": [0.0, 2.0e8], "readout_band": [0.0, 5.0e8]},
    "stark": {"field": [0.0, 1.0, 1.0e6], "coefficient": 35.0e3,
              "collision_n": [1, 2, 10], "usable_channels": 100},
}


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


# -- config ---------------------------------------------------------------------

def _merge(base: dict, override: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}"
        if key not in base:
            raise ConfigError(where, "unknown field")
        ref = base[key]
        if isinstance(ref, dict):
            if not isinstance(value, dict):
                raise ConfigError(where, "expected an object")
            out[key] = _merge(ref, value, where)
        else:
            out[key] = _check_type(ref, value, where)
    return out


def _check_type(ref, value, where):
    if ref is None or value is None:
        return value
    if isinstance(ref, bool):
        ok = isinstance(value, bool)
    elif isinstance(ref, (int, float)):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if ok and isinstance(value, float) and not math.isfinite(value):
            ok = False
    elif isinstance(ref, str):
        ok = isinstance(value, str)
    elif isinstance(ref, list):
        ok = isinstance(value, list) and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    else:
        ok = True
    if not ok:
        raise ConfigError(where, f"expected {type(ref).__name__}, got {value!r}")
    return value


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError("$", f"cannot read config: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON at line {exc.lineno} column {exc.colno}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("$", "config must be a JSON object")
    return _merge(DEFAULT_CONFIG, raw, "$")


def save_config(config: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config, indent=1, sort_keys=True) + "\n")


def derive_seed(master_seed: int, command: str, index: int) -> int:
    """Stable 64-bit seed: blake2b over ``"master:command:index"``."""
    digest = hashlib.blake2b(f"{master_seed}:{command}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _build(block: str, factory: Callable, *args, **kwargs):
    """Construct a model object, reporting invalid values as config errors."""
    try:
        return factory(*args, **kwargs)
    except (ParameterError, ValueError, TypeError) as exc:
        raise ConfigError(f"$.{block}", str(exc)) from exc


def _coupling(cfg) -> CouplingParams:
    return _build("coupling", CouplingParams, **cfg["coupling"])


# -- tasks (module level so they pickle) ------------------------------------------

def _task_census(args):
    nbar, N, coupling, channels, per_crystal, trials, master, idx = args
    setup = CensusSetup(nbar, N, coupling, per_crystal, channels["channel_width"], channels["vacated_width"])
    seeds = (derive_seed(master, f"census:{idx}", k) for k in range(10**9))
    res = run_census(setup, trials, seeds)
    bus, clique = res[Architecture.BUS], res[Architecture.CLIQUE]
    ratio = bus.p_hat / clique.p_hat if N >= 3 and clique.hits else None
    rows = []
    for r in (bus, clique):
        lo, hi = r.ci95
        rows.append({"architecture": r.architecture.value, "N": N, "nbar": nbar, "trials": r.trials,
                     "hits": r.hits, "p_hat": r.p_hat, "ci_lo": lo, "ci_hi": hi,
                     "p_eq1": p_register_exact(nbar, N), "bus_clique_ratio": ratio})
    return rows


def _task_distill(args):
    n, cfg, trial, seed = args
    out = distill_until_single(n, cfg, np.random.default_rng(seed))
    return [{"trial": trial, "seed": seed, "n_initial": n, "final_occupancy": out.final_occupancy,
             "rounds_used": out.rounds_used, "total_decays": out.total_decays,
             "timed_out": out.timed_out}]


def random_two_ion_state(rng: np.random.Generator) -> StateVector:
    psi = rng.normal(size=16) + 1j * rng.normal(size=16)
    return StateVector((0, 1), psi / np.linalg.norm(psi))


def _task_ent_rate(args):
    g, trial, seed = args
    state = random_two_ion_state(np.random.default_rng(seed))
    rep = rate_bound_check(state, Bipartition((0,), (1,)), g)
    return [{"trial": trial, "seed": seed, "E": rep.E, "Edot": rep.Edot, "P_e_tot": rep.P_e_tot,
             "bound": rep.bound, "satisfied": rep.satisfied}]


def _task_gate_bound(args):
    g, rabi, dt_fraction = args
    plus = np.array([1, 1, 0, 0], dtype=complex) / math.sqrt(2)
    state = from_local_states((0, 1), (plus, plus))
    tr = simulate_gate_trajectory(state, blockade_cz_plan(2 * math.pi * rabi), 2 * math.pi * g,
                                  dt_fraction / (2 * math.pi * g))
    margin = tr.bound_margin()
    return [{"g": g, "rabi": rabi, "steps": len(tr.times) - 1, "E_final": float(tr.E[-1]),
             "integral_P_e": tr.total_integrated_P_e, "min_margin": float(margin.min()),
             "satisfied": bool(np.all(margin >= -1e-9))}]


def _task_readout_init(args):
    ro, trial, seed = args
    rng = np.random.default_rng(seed)
    chain = make_chain(ro["chain_length"], rng, tuple(ro["qubit_band"]), tuple(ro["readout_band"]),
                       min_separation=ro["resolution"])
    scan = ScanSettings(ro["resolution"], ro["pi_pulse_fidelity"], tuple(ro["qubit_band"]),
                        tuple(ro["readout_band"]))
    model = _readout_model(ro)
    found = initiate_characterization(chain, scan, rng, model)
    return [{"trial": trial, "seed": seed, "chain_length": len(chain.qubits),
             "found_qubits": len(found.found_qubit_freqs), "recovered": found.matches(chain, ro["resolution"]),
             "collision_flagged": found.collision_flagged, "trapped": found.trapped,
             "scan_steps": len(found.scan_log)}]


def _readout_model(ro) -> ReadoutModel:
    if ro["preset"] not in PRESETS:
        raise ConfigError("$.readout.preset", f"unknown preset {ro['preset']!r}; have {sorted(PRESETS)}")
    base = PRESETS[ro["preset"]]
    return _build("readout", ReadoutModel, **{**base.__dict__,
                                                "trap_probability_per_cycle": ro["trap_probability_per_cycle"]})


def _run_tasks(fn, tasks: Sequence, parallel: int) -> list[dict]:
    if parallel > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            chunks = list(pool.map(fn, tasks))
    else:
        chunks = [fn(t) for t in tasks]
    return [row for chunk in chunks for row in chunk]


# -- commands ------------------------------------------------------------------

def cmd_gen_crystal(cfg) -> list[dict]:
    if not cfg["out"]:
        raise ConfigError("$.out", "gen-crystal needs --out for the crystal file")
    params = _build("crystal", CrystalParams, seed=cfg["master_seed"], **cfg["crystal"])
    cp = _coupling(cfg)
    crystal = generate_crystal(params)
    path = Path(cfg["out"])
    save_crystal(crystal, path)
    nbar = ball_occupancy(params.density, cp.radius(params.dmu_default, params.dmu_default),
                          cfg["channels"]["channel_width"], params.bandwidth)
    cfg["out"] = None  # the summary goes to stdout
    return [{"file": str(path), "ion_count": len(crystal), "nbar_per_channel": nbar}]


def cmd_census(cfg) -> list[dict]:
    c = cfg["census"]
    cp = _coupling(cfg)
    tasks = []
    for i, (nbar, N) in enumerate((a, b) for a in c["nbar"] for b in c["N"]):
        if not nbar > 0 or int(N) != N or N < 0:
            raise ConfigError("$.census", f"need nbar > 0 and integer N >= 0, got ({nbar}, {N})")
        tasks.append((float(nbar), int(N), cp, cfg["channels"], float(c["candidates_per_crystal"]),
                      cfg["trials"], cfg["master_seed"], i))
    rows = _run_tasks(_task_census, tasks, cfg["parallel"])
    return sorted(rows, key=lambda r: (r["N"], r["nbar"], r["architecture"]))


def cmd_stats(cfg) -> list[dict]:
    s = cfg["stats"]
    rows = []
    for N in s["N"]:
        need = _build("stats", required_nbar, int(N), s["target_P"])
        for nbar in s["nbar"]:
            rows.append({"N": int(N), "nbar": nbar,
                         "p_register_exact": _build("stats", p_register_exact, nbar, int(N)),
                         "p_register_postselect": _build("stats", p_register_postselect, nbar, int(N)),
                         "target_P": s["target_P"], "required_nbar_approx": need.approx,
                         "required_nbar_exact": need.exact})
    return sorted(rows, key=lambda r: (r["N"], r["nbar"]))


def cmd_distill(cfg) -> list[dict]:
    d = cfg["distill"]
    dc = _build("distill", DistillConfig, tuple(d["alpha_schedule"]), d["beta"], d["branch_to_aux"],
                int(d["max_rounds"]), cfg["master_seed"])
    n = int(d["n_initial"])
    if n < 0:
        raise ConfigError("$.distill.n_initial", "must be non-negative")
    tasks = [(n, dc, t, derive_seed(cfg["master_seed"], "distill", t)) for t in range(cfg["trials"])]
    return sorted(_run_tasks(_task_distill, tasks, cfg["parallel"]), key=lambda r: r["trial"])


def cmd_ent_rate(cfg) -> list[dict]:
    g = cfg["entanglement"]["g"][0] * 2 * math.pi
    tasks = [(g, t, derive_seed(cfg["master_seed"], "ent-rate", t)) for t in range(cfg["trials"])]
    return sorted(_run_tasks(_task_ent_rate, tasks, cfg["parallel"]), key=lambda r: r["trial"])


def cmd_f_max(cfg) -> list[dict]:
    theta, f = f_max()
    return [{"theta_star": theta, "tan_theta_star": math.tan(theta), "f_max": f}]


def cmd_gate_bound(cfg) -> list[dict]:
    e = cfg["entanglement"]
    if not all(x > 0 for x in e["g"] + e["rabi"]) or not e["dt_fraction"] > 0:
        raise ConfigError("$.entanglement", "g, rabi and dt_fraction must be positive")
    tasks = [(g, r, e["dt_fraction"]) for g in e["g"] for r in e["rabi"]]
    return sorted(_run_tasks(_task_gate_bound, tasks, cfg["parallel"]), key=lambda r: (r["g"], r["rabi"]))


def cmd_readout_budget(cfg) -> list[dict]:
    ro = cfg["readout"]
    model = _readout_model(ro)
    b = _build("readout", photon_budget, model, ro["success_target"])
    return [{"preset": ro["preset"], "success_target": ro["success_target"],
             "required_emission_interval": b.required_emission_interval,
             "emitted_photons": b.emitted_photons, "max_trap_probability": b.max_trap_probability,
             "required_cycles": b.required_cycles}]


def cmd_readout_init(cfg) -> list[dict]:
    ro = cfg["readout"]
    _build("readout", ScanSettings, ro["resolution"], ro["pi_pulse_fidelity"])
    _readout_model(ro)
    tasks = [(ro, t, derive_seed(cfg["master_seed"], "readout-init", t)) for t in range(cfg["trials"])]
    return sorted(_run_tasks(_task_readout_init, tasks, cfg["parallel"]), key=lambda r: r["trial"])


def cmd_stark(cfg) -> list[dict]:
    s = cfg["stark"]
    rows = []
    for f in s["field"]:
        shift = _build("stark", lambda: stark_shift(StarkParams(s["coefficient"], f)))
        rows.append({"kind": "stark", "x": f, "value": shift})
    for n in s["collision_n"]:
        p = _build("stark", collision_probability, int(n), int(s["usable_channels"]))
        rows.append({"kind": "collision", "x": int(n), "value": p})
    return rows


COMMANDS: dict[str, Callable[[dict], list[dict]]] = {
    "gen-crystal": cmd_gen_crystal,
    "census": cmd_census,
    "stats": cmd_stats,
    "distill": cmd_distill,
    "ent-rate": cmd_ent_rate,
    "f-max": cmd_f_max,
    "gate-bound": cmd_gate_bound,
    "readout-budget": cmd_readout_budget,
    "readout-init": cmd_readout_init,
    "stark": cmd_stark,
}


# -- output --------------------------------------------------------------------

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render(command: str, rows: list[dict], fmt: str) -> str:
    schema = f"reqc/{command}/v{SCHEMA_VERSION}"
    if fmt == "json":
        clean = [{k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in r.items()}
                 for r in rows]
        return json.dumps({"schema": schema, "version": __version__, "rows": clean}, indent=1) + "\n"
    buf = io.StringIO()
    buf.write(f"# {schema} reqc {__version__}\n")
    if rows:
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([_cell(v) for v in r.values()])
    return buf.getvalue()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reqc", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON config file (see README for the schema)")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--trials", type=int)
    p.add_argument("--parallel", type=int)
    p.add_argument("--out", help="output path (default stdout)")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--version", action="version", version=f"reqc {__version__}")
    return p


def _error(kind: str, message: str, field: str | None = None) -> None:
    doc = {"error": kind, "message": message}
    if field:
        doc["field"] = field
    print(json.dumps(doc), file=sys.stderr)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        for key, flag in (("master_seed", args.seed), ("trials", args.trials),
                          ("parallel", args.parallel), ("out", args.out), ("format", args.format)):
            if flag is not None:
                cfg[key] = flag
        if not 0 <= cfg["master_seed"] < 2**64:
            raise ConfigError("$.master_seed", "must be an unsigned 64-bit integer")
        if cfg["trials"] < 1 or cfg["parallel"] < 1:
            raise ConfigError("$.trials", "trials and parallel must be at least 1")
        if cfg["format"] not in ("csv", "json"):
            raise ConfigError("$.format", "must be csv or json")
        rows = COMMANDS[args.command](cfg)
        text = render(args.command, rows, cfg["format"])
        if cfg["out"]:
            Path(cfg["out"]).write_text(text)
        else:
            sys.stdout.write(text)
    except ConfigError as exc:
        _error("config", exc.message, exc.field)
        return EXIT_CONFIG
    except (ValueError, RuntimeError, OSError) as exc:
        _error("runtime", f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
