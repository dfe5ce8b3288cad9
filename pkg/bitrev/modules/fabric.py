"""Synthetic FPGA fabric and its hidden bitstream encoding.

A fabric is a grid of tiles. Every tile holds one switch matrix (SM) and a
fixed set of slice sites. The public part of a fabric (grid, SM types, PIP
names, wire topology) is what a vendor report would reveal; the EncodingMap
(which configuration bits each PIP, LUT entry and FF owns) is hidden and only
the mock toolchain and the test harness may read it.

Wire topology of a tile with n_out logic outputs and n_in logic inputs:

    W<p>, p < n_out         source wire bound to output pin p
    W<n_out + 4t + d>       source wire arriving from the neighbour on track t
    S<p>, p < n_in          sink wire feeding input pin p
    S<n_in + 4t + d>        outbound sink wire leaving on track t in direction d,
                            driving W<n_out + 4t + d> of the neighbour

Directions d are E, N, W, S (0..3).
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import re
from functools import cached_property
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, PrivateAttr, ValidationError, model_validator

from bitrev.exceptions import FabricError
from bitrev.modules.utils import parse_tile_name, tile_name

logger = logging.getLogger("bitrev.fabric")

Coord = tuple[int, int]
Pip = tuple[str, str]

DIRECTIONS = ((1, 0), (0, 1), (-1, 0), (0, -1))

FABRIC_MAGIC = "BITREV-FABRIC"
GROUND_TRUTH_MAGIC = "BITREV-GROUND-TRUTH"
FORMAT_VERSION = 1

SM_TILE_PREFIX = "INT"
CLB_TILE_PREFIX = "CLB"

# subsets of a sink pool are enumerated below this count, sampled above it
MAX_ENUMERATED_COMBINATIONS = 4096

_SITE_RE = re.compile(r"^SLICE_X(\d+)Y(\d+)$")
_WIRE_RE = re.compile(r"^([WS])(\d+)$")


def pip_key(pip: Pip) -> str:
    return f"{pip[0]}->{pip[1]}"


def wire_index(wire: str, kind: str) -> int | None:
    m = _WIRE_RE.match(wire)
    if not m or m.group(1) != kind:
        return None
    return int(m.group(2))


# --- Public description ---

class PipDef(BaseModel):
    model_config = ConfigDict(frozen=True)

    source_wire: str
    sink_wire: str
    is_default: bool = False

    @property
    def key(self) -> Pip:
        return (self.source_wire, self.sink_wire)


class SwitchMatrixType(BaseModel):
    type_id: int
    pips: tuple[PipDef, ...]
    sinks: dict[str, tuple[str, ...]]

    @model_validator(mode="after")
    def _unique_pips(self):
        keys = [p.key for p in self.pips]
        if len(set(keys)) != len(keys):
            raise ValueError(f"SM type {self.type_id} lists a PIP twice")
        return self

    def pip_names(self) -> list[Pip]:
        return [p.key for p in self.pips]

    def default_pips(self) -> set[Pip]:
        return {p.key for p in self.pips if p.is_default}


class SliceSite(BaseModel):
    model_config = ConfigDict(frozen=True)

    lut_count: int = 2
    lut_arity: int = 4
    ff_count: int = 2

    def output_pins(self) -> list[str]:
        return [f"F{j}_Q" for j in range(self.ff_count)] + [f"L{i}_O" for i in range(self.lut_count)]

    def input_pins(self) -> list[str]:
        lut_inputs = [f"L{i}_I{k}" for i in range(self.lut_count) for k in range(self.lut_arity)]
        return lut_inputs + [f"F{j}_D" for j in range(self.ff_count)]


class EncodingMap(BaseModel):
    """Ground-truth bit ownership. Positions are absolute frame bit offsets.

    Each tile owns a contiguous region: `sm_budgets[type]` switch-matrix bits
    followed by the logic bits. Offsets inside a region are the same for every
    tile of a type, which is what makes distance extrapolation possible.
    """

    width: int
    frame_bits: int
    tile_types: list[int]  # row-major, y * width + x
    tile_bases: list[int]
    sm_budgets: dict[int, int]
    pip_offsets: dict[int, dict[str, list[int]]]  # type -> "SRC->SINK" -> offsets
    logic_offsets: dict[str, list[int]]  # "S<s>.USED" / "S<s>.L<l>" / "S<s>.F<f>"

    def _tile(self, coord: Coord) -> tuple[int, int]:
        idx = coord[1] * self.width + coord[0]
        return self.tile_types[idx], self.tile_bases[idx]

    def pip_bits(self, coord: Coord, pip: Pip) -> tuple[int, ...]:
        type_id, base = self._tile(coord)
        offsets = self.pip_offsets[type_id].get(pip_key(pip))
        if offsets is None:
            raise FabricError(f"no PIP {pip_key(pip)} in SM type {type_id}")
        return tuple(base + o for o in offsets)

    def _logic(self, coord: Coord, key: str) -> list[int]:
        type_id, base = self._tile(coord)
        offsets = self.logic_offsets.get(key)
        if offsets is None:
            raise FabricError(f"no logic object {key}")
        start = base + self.sm_budgets[type_id]
        return [start + o for o in offsets]

    def lut_bits(self, coord: Coord, slice_index: int, lut: int) -> tuple[int, ...]:
        return tuple(self._logic(coord, f"S{slice_index}.L{lut}"))

    def ff_bit(self, coord: Coord, slice_index: int, ff: int) -> int:
        return self._logic(coord, f"S{slice_index}.F{ff}")[0]

    def slice_bit(self, coord: Coord, slice_index: int) -> int:
        return self._logic(coord, f"S{slice_index}.USED")[0]


class Fabric(BaseModel):
    device_id: str
    seed: int
    grid_width: int
    grid_height: int
    sm_types: list[SwitchMatrixType]
    sm_placement: list[list[int]]  # [y][x] -> type id
    slice_sites: list[SliceSite]

    _encoding: EncodingMap | None = PrivateAttr(default=None)

    @model_validator(mode="after")
    def _check_placement(self):
        if len(self.sm_placement) != self.grid_height or any(
            len(row) != self.grid_width for row in self.sm_placement
        ):
            raise ValueError("sm_placement does not match the grid size")
        known = {t.type_id for t in self.sm_types}
        for row in self.sm_placement:
            for type_id in row:
                if type_id not in known:
                    raise ValueError(f"placement names unknown SM type {type_id}")
        return self

    # --- Geometry ---

    def in_grid(self, coord: Coord) -> bool:
        x, y = coord
        return 0 <= x < self.grid_width and 0 <= y < self.grid_height

    def coordinates(self) -> list[Coord]:
        return [(x, y) for x in range(self.grid_width) for y in range(self.grid_height)]

    def sm_type_at(self, coord: Coord) -> SwitchMatrixType:
        if not self.in_grid(coord):
            raise FabricError(f"coordinate {coord} outside the {self.grid_width}x{self.grid_height} grid")
        type_id = self.sm_placement[coord[1]][coord[0]]
        return self.type_index[type_id]

    @cached_property
    def type_index(self) -> dict[int, SwitchMatrixType]:
        return {t.type_id: t for t in self.sm_types}

    @cached_property
    def pip_sets(self) -> dict[int, frozenset[Pip]]:
        return {t.type_id: frozenset(t.pip_names()) for t in self.sm_types}

    def has_pip(self, coord: Coord, pip: Pip) -> bool:
        return pip in self.pip_sets[self.sm_type_at(coord).type_id]

    # --- Names ---

    def tile_name(self, coord: Coord) -> str:
        return tile_name(SM_TILE_PREFIX, *coord)

    def clb_tile_name(self, coord: Coord) -> str:
        return tile_name(CLB_TILE_PREFIX, *coord)

    def site_name(self, coord: Coord, slice_index: int) -> str:
        x, y = coord
        return f"SLICE_X{x * len(self.slice_sites) + slice_index}Y{y}"

    def parse_sm_tile(self, name: str) -> Coord:
        coord = parse_tile_name(name)
        if coord is None or not name.startswith(SM_TILE_PREFIX + "_") or not self.in_grid(coord):
            raise FabricError(f"unknown switch-matrix tile {name!r}")
        return coord

    def parse_site(self, tile: str, site: str) -> tuple[Coord, int]:
        """Resolve a placement (CLB tile, slice site) to (coordinate, slice index)."""
        coord = parse_tile_name(tile)
        m = _SITE_RE.match(site)
        if coord is None or not tile.startswith(CLB_TILE_PREFIX + "_") or m is None or not self.in_grid(coord):
            raise FabricError(f"unknown slice site {tile} {site}")
        sx, sy = int(m.group(1)), int(m.group(2))
        per_tile = len(self.slice_sites)
        if sy != coord[1] or sx // per_tile != coord[0]:
            raise FabricError(f"site {site} is not inside tile {tile}")
        return coord, sx % per_tile

    def slice_placements(self) -> list[tuple[str, str]]:
        """Every (tile, site) slice placement, in coordinate order."""
        return [
            (self.clb_tile_name(c), self.site_name(c, s))
            for c in self.coordinates()
            for s in range(len(self.slice_sites))
        ]

    # --- Wire topology ---

    @cached_property
    def output_pins(self) -> list[tuple[int, str]]:
        return [(s, pin) for s, site in enumerate(self.slice_sites) for pin in site.output_pins()]

    @cached_property
    def input_pins(self) -> list[tuple[int, str]]:
        return [(s, pin) for s, site in enumerate(self.slice_sites) for pin in site.input_pins()]

    @cached_property
    def output_index(self) -> dict[tuple[int, str], int]:
        return {p: i for i, p in enumerate(self.output_pins)}

    @cached_property
    def input_index(self) -> dict[tuple[int, str], int]:
        return {p: i for i, p in enumerate(self.input_pins)}

    def source_wire_of_pin(self, slice_index: int, pin: str) -> str | None:
        p = self.output_index.get((slice_index, pin))
        return None if p is None else f"W{p}"

    def sink_wire_of_pin(self, slice_index: int, pin: str) -> str | None:
        p = self.input_index.get((slice_index, pin))
        return None if p is None else f"S{p}"

    def pin_of_wire(self, wire: str) -> tuple[int, str] | None:
        """The (slice, pin) bound to a source or sink wire, None for routing wires."""
        w = wire_index(wire, "W")
        if w is not None:
            return self.output_pins[w] if w < len(self.output_pins) else None
        s = wire_index(wire, "S")
        if s is not None and s < len(self.input_pins):
            return self.input_pins[s]
        return None

    def wire_target(self, coord: Coord, sink_wire: str) -> tuple[Coord, str] | None:
        """The neighbour source wire driven by an outbound sink wire.

        Pin sinks and wires leaving the grid drive nothing and return None.
        """
        s = wire_index(sink_wire, "S")
        n_in = len(self.input_pins)
        if s is None or s < n_in:
            return None
        track, d = divmod(s - n_in, 4)
        dx, dy = DIRECTIONS[d]
        neighbour = (coord[0] + dx, coord[1] + dy)
        if not self.in_grid(neighbour):
            return None
        return neighbour, f"W{len(self.output_pins) + 4 * track + d}"

    # --- Hidden encoding ---

    @property
    def has_ground_truth(self) -> bool:
        return self._encoding is not None

    def ground_truth(self) -> EncodingMap:
        if self._encoding is None:
            raise FabricError("this fabric carries no ground-truth encoding")
        return self._encoding

    def public(self) -> Fabric:
        """Copy without default markers and without the hidden encoding."""
        types = [
            SwitchMatrixType(
                type_id=t.type_id,
                pips=tuple(PipDef(source_wire=p.source_wire, sink_wire=p.sink_wire) for p in t.pips),
                sinks=dict(t.sinks),
            )
            for t in self.sm_types
        ]
        return Fabric(
            device_id=self.device_id,
            seed=self.seed,
            grid_width=self.grid_width,
            grid_height=self.grid_height,
            sm_types=types,
            sm_placement=[list(row) for row in self.sm_placement],
            slice_sites=list(self.slice_sites),
        )


# --- Generation ---

def _backbone(sink: int, n_in: int, n_out: int, n_outbound: int, tracks: int) -> list[int]:
    """Structured source candidates for one sink, as source-wire indices."""

    def inbound(d, t):
        o = 4 * t + d
        return n_out + o if o < n_outbound else None

    if sink < n_in:
        candidates = [sink % n_out]
        if tracks:
            candidates += [inbound(d, sink % tracks) for d in range(4)]
    else:
        t, d = divmod(sink - n_in, 4)
        candidates = [
            inbound(d, t),                 # straight
            (sink - n_in) % n_out,         # local injection
            inbound((d + 1) % 4, t),       # turn
            inbound((d + 3) % 4, t),       # turn
            inbound(d, (t + 1) % tracks),  # track change
        ]
    seen: list[int] = []
    for c in candidates:
        if c is not None and c not in seen:
            seen.append(c)
    return seen


def _min_pool(width: int, count: int) -> int:
    pool = width + 1
    while math.comb(pool, width) + math.comb(pool, width + 1) < count:
        pool += 1
    return pool


def _draw_subsets(rng, pool: list[int], size: int, count: int) -> list[tuple[int, ...]]:
    if count == 0:
        return []
    total = math.comb(len(pool), size)
    if total <= MAX_ENUMERATED_COMBINATIONS:
        combos = list(itertools.combinations(pool, size))
        return [combos[i] for i in rng.choice(total, size=count, replace=False)]
    seen: set[tuple[int, ...]] = set()
    picked = []
    while len(picked) < count:
        subset = tuple(sorted(int(v) for v in rng.choice(pool, size=size, replace=False)))
        if subset not in seen:
            seen.add(subset)
            picked.append(subset)
    return picked


def _generate_type(rng, type_id, spec, n_in, n_out, default_fraction, overprovision_rate):
    pip_count, sink_count, budget = spec
    if not pip_count >= sink_count >= 1:
        raise FabricError(f"type {type_id}: need pip_count >= sink_count >= 1, got {spec}")
    n_outbound = max(0, sink_count - n_in)
    n_sources = n_out + n_outbound
    tracks = math.ceil(n_outbound / 4)
    if pip_count > sink_count * n_sources:
        raise FabricError(
            f"type {type_id}: {pip_count} PIPs exceed the {sink_count}x{n_sources} source vocabulary"
        )

    # --- PIP names ---
    quotas = [pip_count // sink_count + (1 if j < pip_count % sink_count else 0) for j in range(sink_count)]
    sources_of: list[list[int]] = []
    for j in range(sink_count):
        backbone = _backbone(j, n_in, n_out, n_outbound, tracks)
        rest = [w for w in range(n_sources) if w not in backbone]
        rest = [rest[i] for i in rng.permutation(len(rest))]
        sources_of.append(sorted((backbone + rest)[: quotas[j]]))

    # --- Default PIPs, at most one per sink, never a sink's only PIP ---
    n_defaults = math.floor(pip_count * default_fraction + 1e-9)
    eligible = [j for j in range(sink_count) if quotas[j] >= 2]
    if n_defaults > len(eligible):
        logger.warning(f"type {type_id}: only {len(eligible)} sinks can host a default PIP, wanted {n_defaults}")
        n_defaults = len(eligible)
    default_of: dict[int, int] = {}
    if n_defaults:
        for j in sorted(int(v) for v in rng.choice(eligible, size=n_defaults, replace=False)):
            default_of[j] = sources_of[j][int(rng.integers(len(sources_of[j])))]

    # --- Bit pools ---
    widths = [max(1, math.ceil(math.log2(q))) for q in quotas]
    counts = [quotas[j] - (1 if j in default_of else 0) for j in range(sink_count)]
    pools = [_min_pool(widths[j], counts[j]) for j in range(sink_count)]
    if budget < sum(pools):
        raise FabricError(
            f"type {type_id}: bit_budget {budget} too small, the encoding needs at least {sum(pools)} bits"
        )
    extra = budget - sum(pools)
    bonus = set(int(v) for v in rng.permutation(sink_count)[: extra % sink_count])
    pools = [p + extra // sink_count + (1 if j in bonus else 0) for j, p in enumerate(pools)]
    perm = [int(v) for v in rng.permutation(budget)]
    pool_bits, start = [], 0
    for size in pools:
        pool_bits.append(sorted(perm[start:start + size]))
        start += size

    # --- Over-provisioning: how many PIPs per sink get one bit more ---
    lo = [max(0, counts[j] - math.comb(pools[j], widths[j])) for j in range(sink_count)]
    hi = [min(counts[j], math.comb(pools[j], widths[j] + 1)) for j in range(sink_count)]
    target = math.ceil(overprovision_rate * sum(counts))
    if sum(hi) < target:
        raise FabricError(f"type {type_id}: bit_budget {budget} leaves no room for over-provisioned PIPs")
    wide = list(lo)
    need = target - sum(lo)
    if need > 0:
        slots = [j for j in range(sink_count) for _ in range(hi[j] - lo[j])]
        for i in rng.choice(len(slots), size=need, replace=False):
            wide[slots[i]] += 1

    # --- Bit sets ---
    pips: list[PipDef] = []
    offsets: dict[str, list[int]] = {}
    for j in range(sink_count):
        sink = f"S{j}"
        regular = [w for w in sources_of[j] if default_of.get(j) != w]
        subsets = _draw_subsets(rng, pool_bits[j], widths[j] + 1, wide[j])
        subsets += _draw_subsets(rng, pool_bits[j], widths[j], counts[j] - wide[j])
        for pos, i in enumerate(rng.permutation(len(regular))):
            offsets[pip_key((f"W{regular[i]}", sink))] = list(subsets[pos])
        for w in sources_of[j]:
            is_default = default_of.get(j) == w
            pips.append(PipDef(source_wire=f"W{w}", sink_wire=sink, is_default=is_default))
            if is_default:
                offsets[pip_key((f"W{w}", sink))] = []

    sm_type = SwitchMatrixType(
        type_id=type_id,
        pips=tuple(pips),
        sinks={f"S{j}": tuple(f"W{w}" for w in sources_of[j]) for j in range(sink_count)},
    )
    return sm_type, offsets


def _logic_layout(rng, slice_sites: list[SliceSite]) -> tuple[dict[str, list[int]], int]:
    keys: list[tuple[str, int]] = []
    for s, site in enumerate(slice_sites):
        keys.append((f"S{s}.USED", 1))
        keys += [(f"S{s}.L{lut}", 2 ** site.lut_arity) for lut in range(site.lut_count)]
        keys += [(f"S{s}.F{ff}", 1) for ff in range(site.ff_count)]
    total = sum(n for _, n in keys)
    perm = [int(v) for v in rng.permutation(total)]
    layout, start = {}, 0
    for key, n in keys:
        layout[key] = perm[start:start + n]
        start += n
    return layout, total


def generate_fabric(
    seed: int,
    grid: tuple[int, int],
    sm_type_specs: list[tuple[int, int, int]],
    *,
    default_fraction: float = 0.01,
    overprovision_rate: float = 0.25,
    slice_sites: list[SliceSite] | None = None,
    device_id: str = "xbr6-desk",
) -> Fabric:
    """Generate a fabric together with its hidden EncodingMap.

    Args:
        seed: Non-negative generation seed; equal arguments give an identical fabric.
        grid: (width, height) in tiles.
        sm_type_specs: (pip_count, sink_count, bit_budget) per switch-matrix type.
            Types are assigned to grid columns round-robin.

    Returns:
        A Fabric whose ground_truth() is populated.
    """
    width, height = grid
    if width * height < 1 or width < 1 or height < 1:
        raise FabricError(f"grid {grid} has no tiles")
    if seed < 0:
        raise FabricError("seed must be non-negative")
    if not sm_type_specs:
        raise FabricError("at least one switch-matrix type is required")
    if overprovision_rate < 0.25:
        raise FabricError("over-provisioning rate must be at least 0.25")
    sites = list(slice_sites) if slice_sites else [SliceSite(), SliceSite()]
    n_out = sum(s.ff_count + s.lut_count for s in sites)
    n_in = sum(s.lut_count * s.lut_arity + s.ff_count for s in sites)

    rng = np.random.default_rng(seed)
    sm_types, pip_offsets = [], {}
    for type_id, spec in enumerate(sm_type_specs):
        sm_type, offsets = _generate_type(
            rng, type_id, tuple(spec), n_in, n_out, default_fraction, overprovision_rate
        )
        sm_types.append(sm_type)
        pip_offsets[type_id] = offsets
    logic_offsets, logic_bits = _logic_layout(rng, sites)

    placement = [[x % len(sm_type_specs) for x in range(width)] for _ in range(height)]
    budgets = {t: int(spec[2]) for t, spec in enumerate(sm_type_specs)}
    tile_types, tile_bases, cursor = [], [], 0
    for y in range(height):
        for x in range(width):
            type_id = placement[y][x]
            tile_types.append(type_id)
            tile_bases.append(cursor)
            cursor += budgets[type_id] + logic_bits
    frame_bits = 8 * math.ceil(cursor / 8)

    fabric = Fabric(
        device_id=device_id,
        seed=seed,
        grid_width=width,
        grid_height=height,
        sm_types=sm_types,
        sm_placement=placement,
        slice_sites=sites,
    )
    fabric._encoding = EncodingMap(
        width=width,
        frame_bits=frame_bits,
        tile_types=tile_types,
        tile_bases=tile_bases,
        sm_budgets=budgets,
        pip_offsets=pip_offsets,
        logic_offsets=logic_offsets,
    )
    n_defaults = sum(len(t.default_pips()) for t in sm_types)
    logger.info(
        f"generated {width}x{height} fabric, {len(sm_types)} SM types, "
        f"{n_defaults} default PIPs, {frame_bits} frame bits"
    )
    return fabric


def fabric_report(fabric: Fabric, sm_coordinate: Coord) -> list[Pip]:
    """Every PIP of the switch matrix at a coordinate, defaults included, in type order."""
    return fabric.sm_type_at(tuple(sm_coordinate)).pip_names()


# --- Files ---

def _dump(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def _read(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise FabricError(f"cannot read fabric file {path}: {e}") from e


def _check_header(payload: dict, magic: str, path) -> None:
    if payload.get("magic") != magic:
        raise FabricError(f"{path}: expected magic {magic}, found {payload.get('magic')!r}")
    if payload.get("version") != FORMAT_VERSION:
        raise FabricError(f"{path}: unsupported version {payload.get('version')!r}")


def save_fabric(fabric: Fabric, path: str | Path) -> None:
    payload = {"magic": FABRIC_MAGIC, "version": FORMAT_VERSION,
               "fabric": fabric.public().model_dump(mode="json")}
    Path(path).write_text(_dump(payload), encoding="utf-8")


def load_fabric(path: str | Path) -> Fabric:
    """Load a public fabric description. Ground-truth files are refused."""
    payload = _read(path)
    if payload.get("magic") == GROUND_TRUTH_MAGIC:
        raise FabricError(f"{path} is a ground-truth file; refusing to load it as a fabric description")
    _check_header(payload, FABRIC_MAGIC, path)
    try:
        return Fabric.model_validate(payload["fabric"])
    except (KeyError, ValidationError) as e:
        raise FabricError(f"{path}: invalid fabric description: {e}") from e


def save_ground_truth(fabric: Fabric, path: str | Path) -> None:
    payload = {
        "magic": GROUND_TRUTH_MAGIC,
        "version": FORMAT_VERSION,
        "fabric": fabric.model_dump(mode="json"),
        "encoding": fabric.ground_truth().model_dump(mode="json"),
    }
    Path(path).write_text(_dump(payload), encoding="utf-8")


def load_ground_truth(path: str | Path) -> Fabric:
    payload = _read(path)
    _check_header(payload, GROUND_TRUTH_MAGIC, path)
    try:
        fabric = Fabric.model_validate(payload["fabric"])
        fabric._encoding = EncodingMap.model_validate(payload["encoding"])
    except (KeyError, ValidationError) as e:
        raise FabricError(f"{path}: invalid ground-truth file: {e}") from e
    return fabric
