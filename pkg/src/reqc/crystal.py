"""Random doped crystals, frequency channels and the thresholded dipole-coupling graph.

All quantities are SI: metres, Hz, C*m.  Positions live in a periodic cube of
side ``box_side`` and distances use the minimum-image convention.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.spatial import cKDTree

FORMAT_VERSION = 1

DEBYE = 3.33564e-30  # C*m


class ParameterError(ValueError):
    """Invalid model parameters."""


class GeometryError(ValueError):
    """Degenerate geometry, e.g. two ions at the same site."""


class PlanError(ValueError):
    """Inconsistent channel plan."""


class CrystalFormatError(ValueError):
    """Malformed crystal file.  ``where`` names the offending field or line."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


class Level(IntEnum):
    """Four-level ion model; the integer value is the basis index used by ``qsim``."""

    ZERO = 0
    ONE = 1
    AUX = 2
    E = 3


class Species(IntEnum):
    QUBIT_DOPANT = 0
    READOUT = 1


_LEVEL_NAMES = {Level.ZERO: "zero", Level.ONE: "one", Level.AUX: "aux", Level.E: "e"}
_SPECIES_NAMES = {Species.QUBIT_DOPANT: "qubit_dopant", Species.READOUT: "readout"}


@dataclass(frozen=True)
class Ion:
    id: int
    position: tuple[float, float, float]
    shift: float
    dmu: float
    species: Species = Species.QUBIT_DOPANT
    level: Level = Level.ZERO


@dataclass(frozen=True)
class CrystalParams:
    box_side: float
    density: float
    bandwidth: float
    dmu_default: float = 0.8e-31
    seed: int = 0

    def __post_init__(self):
        if not self.box_side > 0:
            raise ParameterError(f"box_side must be positive, got {self.box_side}")
        if not self.density >= 0:
            raise ParameterError(f"density must be non-negative, got {self.density}")
        if not self.bandwidth > 0:
            raise ParameterError(f"bandwidth must be positive, got {self.bandwidth}")
        if not self.dmu_default > 0:
            raise ParameterError(f"dmu_default must be positive, got {self.dmu_default}")

    @property
    def volume(self) -> float:
        return self.box_side**3


@dataclass(frozen=True, eq=False)
class Crystal:
    """Immutable ion collection stored column-wise.

    ``ions`` materialises :class:`Ion` records on demand; the arrays are what
    the statistics code works with.  Ion ids need not be contiguous.
    """

    params: CrystalParams
    ids: np.ndarray
    positions: np.ndarray
    shifts: np.ndarray
    dmus: np.ndarray
    species: np.ndarray
    levels: np.ndarray
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.ids)
        cols = dict(
            ids=np.asarray(self.ids, dtype=np.int64).reshape(n),
            positions=np.asarray(self.positions, dtype=float).reshape(n, 3),
            shifts=np.asarray(self.shifts, dtype=float).reshape(n),
            dmus=np.asarray(self.dmus, dtype=float).reshape(n),
            species=np.asarray(self.species, dtype=np.int8).reshape(n),
            levels=np.asarray(self.levels, dtype=np.int8).reshape(n),
        )
        for name, arr in cols.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        index = {int(i): k for k, i in enumerate(cols["ids"])}
        if len(index) != n:
            raise ParameterError("duplicate ion ids")
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_ions(cls, params: CrystalParams, ions: Iterable[Ion]) -> Crystal:
        ions = list(ions)
        for ion in ions:
            _check_ion(ion, params)
        return cls(
            params=params,
            ids=[i.id for i in ions],
            positions=np.array([i.position for i in ions], dtype=float).reshape(len(ions), 3),
            shifts=[i.shift for i in ions],
            dmus=[i.dmu for i in ions],
            species=[int(i.species) for i in ions],
            levels=[int(i.level) for i in ions],
        )

    def __len__(self) -> int:
        return len(self.ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Crystal):
            return NotImplemented
        return self.params == other.params and all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in ("ids", "positions", "shifts", "dmus", "species", "levels")
        )

    __hash__ = None

    def index_of(self, ion_id: int) -> int:
        try:
            return self._index[int(ion_id)]
        except KeyError:
            raise KeyError(f"no ion with id {ion_id}") from None

    def ion(self, ion_id: int) -> Ion:
        k = self.index_of(ion_id)
        return Ion(
            id=int(self.ids[k]),
            position=tuple(float(x) for x in self.positions[k]),
            shift=float(self.shifts[k]),
            dmu=float(self.dmus[k]),
            species=Species(int(self.species[k])),
            level=Level(int(self.levels[k])),
        )

    @property
    def ions(self) -> list[Ion]:
        return [self.ion(i) for i in self.ids]

    def with_levels(self, levels: np.ndarray) -> Crystal:
        return Crystal(self.params, self.ids, self.positions, self.shifts, self.dmus,
                       self.species, levels)


def _check_ion(ion: Ion, params: CrystalParams) -> None:
    L = params.box_side
    if not all(0.0 <= x < L for x in ion.position):
        raise ParameterError(f"ion {ion.id}: position {ion.position} outside box [0, {L})")
    if not 0.0 <= ion.shift < params.bandwidth:
        raise ParameterError(f"ion {ion.id}: shift {ion.shift} outside [0, {params.bandwidth})")
    if not ion.dmu > 0:
        raise ParameterError(f"ion {ion.id}: dmu must be positive")


def _wrap_half_open(x: np.ndarray, upper: float) -> np.ndarray:
    # uniform(0, L) may round up to L itself
    return np.where(x >= upper, np.nextafter(upper, 0.0), x)


def generate_crystal(params: CrystalParams) -> Crystal:
    """Homogeneous Poisson process in the box with i.i.d. uniform shifts in [0, B)."""
    rng = np.random.default_rng(params.seed)
    n = int(rng.poisson(params.density * params.volume))
    positions = _wrap_half_open(rng.uniform(0.0, params.box_side, size=(n, 3)), params.box_side)
    shifts = _wrap_half_open(rng.uniform(0.0, params.bandwidth, size=n), params.bandwidth)
    return Crystal(
        params=params,
        ids=np.arange(n),
        positions=positions,
        shifts=shifts,
        dmus=np.full(n, params.dmu_default),
        species=np.full(n, Species.QUBIT_DOPANT),
        levels=np.full(n, Level.ZERO),
    )


# -- coupling -----------------------------------------------------------------

@dataclass(frozen=True)
class CouplingParams:
    """Isotropic inverse-cube coupling calibrated to ``g_ref`` at ``r_ref`` for two ``dmu_ref`` dipoles."""

    g_ref: float = 8.0e7
    r_ref: float = 1.0e-9
    dmu_ref: float = 0.8e-31
    g_min: float = 1.0e6

    def __post_init__(self):
        for name in ("g_ref", "r_ref", "dmu_ref", "g_min"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be strictly positive")

    def radius(self, dmu_a: float | None = None, dmu_b: float | None = None) -> float:
        """Distance at which the coupling drops to ``g_min``."""
        dmu_a = self.dmu_ref if dmu_a is None else dmu_a
        dmu_b = self.dmu_ref if dmu_b is None else dmu_b
        return self.r_ref * (self.g_ref * dmu_a * dmu_b / (self.dmu_ref**2 * self.g_min)) ** (1 / 3)

    def g_min_for_radius(self, radius: float, dmu: float | None = None) -> float:
        dmu = self.dmu_ref if dmu is None else dmu
        return self.g_ref * (dmu / self.dmu_ref) ** 2 * (self.r_ref / radius) ** 3


def minimum_image(delta: np.ndarray, box_side: float) -> np.ndarray:
    return delta - box_side * np.round(delta / box_side)


def _strength(dmu_a, dmu_b, r, cp: CouplingParams):
    return cp.g_ref * (dmu_a * dmu_b / cp.dmu_ref**2) * (cp.r_ref / r) ** 3


def coupling_strength(a: Ion, b: Ion, cp: CouplingParams, box_side: float) -> float:
    """Static dipole-dipole shift (Hz) between two ions, minimum-image distance."""
    if a.id == b.id:
        raise GeometryError("an ion does not couple to itself")
    delta = minimum_image(np.subtract(a.position, b.position), box_side)
    r = float(np.sqrt(delta @ delta))
    if r == 0.0:
        raise GeometryError(f"ions {a.id} and {b.id} occupy the same position")
    return float(_strength(a.dmu, b.dmu, r, cp))


@dataclass(frozen=True, eq=False)
class CouplingGraph:
    """Undirected graph of ion pairs coupled at or above ``g_min``.

    ``pairs`` holds ion ids with ``pairs[:, 0] < pairs[:, 1]``, sorted
    lexicographically; ``g`` the matching strengths in Hz.
    """

    nodes: np.ndarray
    pairs: np.ndarray
    g: np.ndarray
    g_min: float
    _adj: dict = field(init=False, repr=False)

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        g = np.asarray(self.g, dtype=float).reshape(-1)
        nodes = np.asarray(self.nodes, dtype=np.int64).reshape(-1)
        if np.any(pairs[:, 0] == pairs[:, 1]):
            raise GeometryError("self-edge in coupling graph")
        lo, hi = np.minimum(pairs[:, 0], pairs[:, 1]), np.maximum(pairs[:, 0], pairs[:, 1])
        order = np.lexsort((hi, lo))
        pairs = np.stack([lo, hi], axis=1)[order]
        g = g[order]
        for name, arr in (("nodes", nodes), ("pairs", pairs), ("g", g)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        adj: dict[int, dict[int, float]] = {int(n): {} for n in nodes}
        for (i, j), w in zip(pairs.tolist(), g.tolist()):
            adj[i][j] = w
            adj[j][i] = w
        object.__setattr__(self, "_adj", adj)

    @property
    def edge_count(self) -> int:
        return len(self.pairs)

    def neighbors(self, ion_id: int) -> dict[int, float]:
        return self._adj[int(ion_id)]

    def has_edge(self, a: int, b: int) -> bool:
        return int(b) in self._adj.get(int(a), {})

    def strength(self, a: int, b: int) -> float:
        return self._adj[int(a)].get(int(b), 0.0)

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.pairs}


def coupling_graph(crystal: Crystal, cp: CouplingParams) -> CouplingGraph:
    """All pairs with coupling >= ``cp.g_min``.

    Candidate pairs come from a periodic k-d tree at the largest possible
    threshold radius; the exact coupling law then filters them.
    """
    n = len(crystal)
    if n < 2:
        return CouplingGraph(crystal.ids, np.empty((0, 2), np.int64), np.empty(0), cp.g_min)
    L = crystal.params.box_side
    dmax = float(crystal.dmus.max())
    r_cut = cp.radius(dmax, dmax)
    if r_cut >= L / 2:
        # candidate search would wrap around the torus more than once
        ii, jj = np.triu_indices(n, k=1)
    else:
        tree = cKDTree(crystal.positions, boxsize=L)
        cand = tree.query_pairs(r_cut * (1 + 1e-12), output_type="ndarray")
        ii, jj = cand[:, 0], cand[:, 1]
    delta = minimum_image(crystal.positions[ii] - crystal.positions[jj], L)
    r = np.sqrt(np.einsum("ij,ij->i", delta, delta))
    if np.any(r == 0.0):
        raise GeometryError("coincident ion positions")
    g = _strength(crystal.dmus[ii], crystal.dmus[jj], r, cp)
    keep = g >= cp.g_min
    pairs = np.stack([crystal.ids[ii[keep]], crystal.ids[jj[keep]]], axis=1)
    return CouplingGraph(crystal.ids, pairs, g[keep], cp.g_min)


# -- channels -----------------------------------------------------------------

@dataclass(frozen=True)
class ChannelPlan:
    centers: tuple[float, ...]
    channel_width: float
    vacated_width: float

    def __post_init__(self):
        object.__setattr__(self, "centers", tuple(float(c) for c in self.centers))
        if not 0 < self.channel_width < self.vacated_width:
            raise PlanError("need 0 < channel_width < vacated_width")
        c = sorted(self.centers)
        for a, b in zip(c, c[1:]):
            if not b - a > self.vacated_width:
                raise PlanError(f"channels at {a} and {b} Hz overlap their vacated intervals")

    def __len__(self) -> int:
        return len(self.centers)

    @classmethod
    def evenly_spaced(cls, n_channels: int, bandwidth: float, channel_width: float,
                      vacated_width: float) -> ChannelPlan:
        """``n_channels`` centred in equal slices of [0, bandwidth)."""
        slot = bandwidth / max(n_channels, 1)
        return cls(tuple(slot * (k + 0.5) for k in range(n_channels)), channel_width, vacated_width)


def channel_labels(crystal: Crystal, plan: ChannelPlan) -> np.ndarray:
    """Channel index per ion (closed interval), -1 outside every channel."""
    labels = np.full(len(crystal), -1, dtype=np.int64)
    half = plan.channel_width / 2
    for k, c in enumerate(plan.centers):
        labels[np.abs(crystal.shifts - c) <= half] = k
    return labels


def assign_channels(crystal: Crystal, plan: ChannelPlan) -> dict[int, list[int]]:
    labels = channel_labels(crystal, plan)
    return {k: crystal.ids[labels == k].tolist() for k in range(len(plan))}


# -- persistence --------------------------------------------------------------

def crystal_to_dict(crystal: Crystal) -> dict:
    p = crystal.params
    return {
        "format_version": FORMAT_VERSION,
        "params": {
            "box_side": p.box_side,
            "density": p.density,
            "bandwidth": p.bandwidth,
            "dmu_default": p.dmu_default,
            "seed": p.seed,
        },
        "ions": [
            {
                "id": int(i),
                "pos": [float(x) for x in pos],
                "shift": float(s),
                "dmu": float(d),
                "species": _SPECIES_NAMES[Species(int(sp))],
                "level": _LEVEL_NAMES[Level(int(lv))],
            }
            for i, pos, s, d, sp, lv in zip(crystal.ids, crystal.positions, crystal.shifts,
                                             crystal.dmus, crystal.species, crystal.levels)
        ],
    }


def save_crystal(crystal: Crystal, path: str | Path) -> None:
    # repr-based float formatting in json round-trips doubles exactly
    with open(path, "w") as fh:
        json.dump(crystal_to_dict(crystal), fh, indent=1, allow_nan=False)
        fh.write("\n")


def _field(obj: dict, key: str, where: str, kind):
    if not isinstance(obj, dict) or key not in obj:
        raise CrystalFormatError(where, f"missing field '{key}'")
    value = obj[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise CrystalFormatError(f"{where}.{key}", f"expected a finite number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise CrystalFormatError(f"{where}.{key}", f"expected an integer, got {value!r}")
        return value
    return value


def crystal_from_dict(doc: dict) -> Crystal:
    if not isinstance(doc, dict):
        raise CrystalFormatError("$", "top level must be an object")
    version = _field(doc, "format_version", "$", int)
    if version != FORMAT_VERSION:
        raise CrystalFormatError("$.format_version", f"unsupported version {version}")
    praw = _field(doc, "params", "$", dict)
    try:
        params = CrystalParams(
            box_side=_field(praw, "box_side", "$.params", float),
            density=_field(praw, "density", "$.params", float),
            bandwidth=_field(praw, "bandwidth", "$.params", float),
            dmu_default=_field(praw, "dmu_default", "$.params", float),
            seed=_field(praw, "seed", "$.params", int),
        )
    except ParameterError as exc:
        raise CrystalFormatError("$.params", str(exc)) from None
    raw_ions = _field(doc, "ions", "$", list)
    if not isinstance(raw_ions, list):
        raise CrystalFormatError("$.ions", "expected a list")
    species_by_name = {v: k for k, v in _SPECIES_NAMES.items()}
    level_by_name = {v: k for k, v in _LEVEL_NAMES.items()}
    ions = []
    for k, raw in enumerate(raw_ions):
        where = f"$.ions[{k}]"
        pos = _field(raw, "pos", where, list)
        if not isinstance(pos, list) or len(pos) != 3:
            raise CrystalFormatError(f"{where}.pos", "expected three coordinates")
        coords = tuple(_field({"x": x}, "x", f"{where}.pos[{m}]", float) for m, x in enumerate(pos))
        if not all(0.0 <= x < params.box_side for x in coords):
            raise CrystalFormatError(f"{where}.pos", "position outside the periodic box")
        shift = _field(raw, "shift", where, float)
        if not 0.0 <= shift < params.bandwidth:
            raise CrystalFormatError(f"{where}.shift", f"{shift} outside [0, bandwidth)")
        dmu = _field(raw, "dmu", where, float)
        if not dmu > 0:
            raise CrystalFormatError(f"{where}.dmu", f"must be positive, got {dmu}")
        species = _field(raw, "species", where, str)
        if species not in species_by_name:
            raise CrystalFormatError(f"{where}.species", f"unknown species {species!r}")
        level = _field(raw, "level", where, str)
        if level not in level_by_name:
            raise CrystalFormatError(f"{where}.level", f"unknown level {level!r}")
        ions.append(Ion(_field(raw, "id", where, int), coords, shift, dmu,
                        species_by_name[species], level_by_name[level]))
    try:
        return Crystal.from_ions(params, ions)
    except ParameterError as exc:
        raise CrystalFormatError("$.ions", str(exc)) from None


def load_crystal(path: str | Path) -> Crystal:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CrystalFormatError(f"line {exc.lineno} column {exc.colno}", exc.msg) from None
    return crystal_from_dict(doc)


def ball_occupancy(density: float, radius: float, channel_width: float, bandwidth: float) -> float:
    """Mean number of ions of one channel inside a ball of ``radius``."""
    return density * (4.0 / 3.0) * math.pi * radius**3 * (channel_width / bandwidth)


def density_for_occupancy(nbar: float, radius: float, channel_width: float, bandwidth: float) -> float:
    return nbar / ((4.0 / 3.0) * math.pi * radius**3 * (channel_width / bandwidth))


__all__ = [
    "DEBYE", "FORMAT_VERSION", "ChannelPlan", "CouplingGraph", "CouplingParams", "Crystal",
    "CrystalFormatError", "CrystalParams", "GeometryError", "Ion", "Level", "ParameterError",
    "PlanError", "Species", "assign_channels", "ball_occupancy", "channel_labels",
    "coupling_graph", "coupling_strength", "crystal_from_dict", "crystal_to_dict",
    "density_for_occupancy", "generate_crystal", "load_crystal", "minimum_image",
    "save_crystal",
]
