"""Recover the encoding database by black-box diffing of template designs.

Only the public fabric description and the toolchain's bitgen entry point are
used here. For every switch-matrix type one representative is fully
enumerated (one template per PIP); every other switch matrix of the type
costs a single bitstream holding its reference PIP, and the remaining PIP
positions are extrapolated from the type's distance table.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

from bitrev.exceptions import BitstreamFormatError, ReverseError
from bitrev.models import ReverseSummary
from bitrev.modules.bitstream import Bitstream
from bitrev.modules.database import (
    Coord,
    EncodingDatabase,
    Pip,
    TypeEntry,
    distance_vector,
    reconstruct_positions,
)
from bitrev.modules.fabric import SM_TILE_PREFIX, Fabric, fabric_report
from bitrev.modules.netlist import (
    FFConfig,
    Instance,
    Net,
    Netlist,
    Placement,
    SiteKind,
    TruthTable,
    empty_netlist,
)
from bitrev.modules.utils import tile_name

logger = logging.getLogger("bitrev.reverse")

SOURCE_INSTANCE = "tmpl_src"
SINK_INSTANCE = "tmpl_dst"


@dataclass(frozen=True)
class TemplateLayout:
    """The two fixed placed instances every PIP template carries."""

    device_id: str
    source_site: Placement
    sink_site: Placement
    out_pin: str
    in_pin: str

    @classmethod
    def from_fabric(cls, fabric: Fabric) -> TemplateLayout:
        placements = fabric.slice_placements()
        src = placements[0]
        dst = placements[1] if len(placements) > 1 else placements[0]
        site = fabric.slice_sites[0]
        return cls(
            device_id=fabric.device_id,
            source_site=Placement(tile=src[0], site=src[1]),
            sink_site=Placement(tile=dst[0], site=dst[1]),
            out_pin=site.output_pins()[0],
            in_pin=site.input_pins()[0],
        )

    def instances(self) -> list[Instance]:
        src = Instance(name=SOURCE_INSTANCE, site_kind=SiteKind.SLICE, placement=self.source_site)
        if self.sink_site == self.source_site:
            return [src]
        return [src, Instance(name=SINK_INSTANCE, site_kind=SiteKind.SLICE, placement=self.sink_site)]

    @property
    def sink_instance(self) -> str:
        return SOURCE_INSTANCE if self.sink_site == self.source_site else SINK_INSTANCE


@dataclass
class SwitchMatrixResult:
    sm: Coord
    positions: dict[Pip, tuple[int, ...]]
    defaults: set[Pip] = field(default_factory=set)
    reference: Bitstream | None = None
    invocations: int = 0


def reference_template(layout: TemplateLayout) -> Netlist:
    """Instances-only design: the baseline every PIP template is diffed against."""
    return Netlist(design_name="reference", device_id=layout.device_id, instances=layout.instances())


def make_pip_template(
    fabric_report_entry: Pip,
    sm_coordinate: Coord,
    report: list[Pip],
    layout: TemplateLayout,
) -> Netlist:
    """Template design configuring exactly one PIP between the two fixed instances."""
    src, sink = fabric_report_entry
    if (src, sink) not in report:
        raise ReverseError(f"PIP {src} -> {sink} is not in the report for SM {sm_coordinate}")
    x, y = sm_coordinate
    net = Net(
        name="tmpl_net",
        outpin=(SOURCE_INSTANCE, layout.out_pin),
        inpins=[(layout.sink_instance, layout.in_pin)],
        pips=[(tile_name(SM_TILE_PREFIX, x, y), src, sink)],
    )
    return Netlist(
        design_name=f"pip_{x}_{y}",
        device_id=layout.device_id,
        instances=layout.instances(),
        nets=[net],
    )


def diff_bitstreams(a: Bitstream, b: Bitstream) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in a.diff_positions(b))
    except BitstreamFormatError as e:
        raise ReverseError(str(e)) from e


def reverse_switch_matrix(
    toolchain,
    report: list[Pip],
    sm: Coord,
    layout: TemplateLayout,
    reference: Bitstream | None = None,
    map_fn: Callable = map,
) -> SwitchMatrixResult:
    """One template, bitgen and diff per PIP; empty diffs mark default PIPs."""
    before = toolchain.invocations
    if reference is None:
        reference = toolchain.bitgen(reference_template(layout), force=True)

    def probe(pip: Pip) -> tuple[int, ...]:
        return diff_bitstreams(toolchain.bitgen(make_pip_template(pip, sm, report, layout), force=True), reference)

    result = SwitchMatrixResult(sm=sm, positions={}, reference=reference)
    for pip, diff in zip(report, map_fn(probe, report)):
        if diff:
            result.positions[pip] = diff
        else:
            result.defaults.add(pip)
    result.invocations = toolchain.invocations - before
    logger.debug(f"SM {sm}: {len(result.positions)} PIPs, {len(result.defaults)} defaults")
    return result


def build_distance_table(result: SwitchMatrixResult) -> tuple[Pip, dict[Pip, tuple[int, ...]]]:
    if not result.positions:
        raise ReverseError(f"SM {result.sm} has no non-default PIP to serve as reference")
    reference_pip = min(result.positions)
    reference = result.positions[reference_pip]
    table = {pip: distance_vector(pos, reference) for pip, pos in result.positions.items()}
    return reference_pip, table


def analytic_invocation_count(pip_counts: dict[int, int], sm_types: dict[Coord, int]) -> int:
    """Routing bitgen calls: each type's PIPs, one reference design per type, one bitstream per other SM."""
    placed = {t for t in sm_types.values()}
    return sum(pip_counts[t] for t in placed) + (len(sm_types) - len(placed)) + len(placed)


def naive_invocation_count(pip_counts: dict[int, int], sm_types: dict[Coord, int]) -> int:
    return sum(pip_counts[t] for t in sm_types.values())


def reverse_fabric_routing(
    toolchain,
    fabric: Fabric,
    parallelism: int = 1,
) -> EncodingDatabase:
    """Recover PIP encodings of every switch matrix of a (public) fabric."""
    layout = TemplateLayout.from_fabric(fabric)
    sm_types = {c: fabric.sm_type_at(c).type_id for c in fabric.coordinates()}
    by_type: dict[int, list[Coord]] = {}
    for coord in sorted(sm_types):
        by_type.setdefault(sm_types[coord], []).append(coord)

    db = EncodingDatabase(device_id=fabric.device_id, sm_types=sm_types)
    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        representatives: dict[int, SwitchMatrixResult] = {}
        for type_id, coords in sorted(by_type.items()):
            rep = coords[0]
            logger.info(f"type {type_id}: enumerating representative SM {rep} ({len(coords)} SMs)")
            representatives[type_id] = reverse_switch_matrix(
                toolchain, fabric_report(fabric, rep), rep, layout, map_fn=pool.map
            )

        for type_id, result in representatives.items():
            reference_pip, table = build_distance_table(result)
            db.types[type_id] = TypeEntry(reference_pip=reference_pip, distances=table, defaults=set(result.defaults))
            db.references[result.sm] = result.positions[reference_pip]
            db.frame_bits = result.reference.frame_bits

        tasks = [
            (coord, db.types[type_id].reference_pip)
            for type_id, coords in sorted(by_type.items())
            for coord in coords[1:]
        ]

        def one_shot(task):
            coord, pip = task
            baseline = representatives[sm_types[coord]].reference
            template = make_pip_template(pip, coord, fabric_report(fabric, coord), layout)
            return diff_bitstreams(toolchain.bitgen(template, force=True), baseline)

        diffs = list(pool.map(one_shot, tasks))

    # --- single-threaded reduce ---
    for (coord, pip), diff in zip(tasks, diffs):
        entry = db.types[sm_types[coord]]
        if not diff:
            raise ReverseError(f"SM {coord}: reference PIP {pip[0]} -> {pip[1]} produced an empty diff")
        if len(diff) != len(entry.distances[pip]):
            raise ReverseError(f"SM {coord}: reference PIP toggled {len(diff)} bits, expected {len(entry.distances[pip])}")
        db.references[coord] = diff
        for other, dist in entry.distances.items():
            positions = reconstruct_positions(diff, dist)
            if min(positions) < 0 or max(positions) >= db.frame_bits:
                raise ReverseError(f"SM {coord}: extrapolated position of {other[0]} -> {other[1]} leaves the frame area")
    logger.info(f"routing database covers {len(db.references)} switch matrices")
    return db


def _slice_probe(toolchain, layout_device: str, placement: Placement, site, empty: Bitstream):
    """All logic bits of one slice site: usage bit, ordered LUT bits, FF usage bits."""

    def design(**config) -> Netlist:
        inst = Instance(name="probe", site_kind=SiteKind.SLICE, placement=placement, **config)
        return Netlist(design_name="logic_probe", device_id=layout_device, instances=[inst])

    base = toolchain.bitgen(design(), force=True)
    usage = diff_bitstreams(base, empty)
    if len(usage) != 1:
        raise ReverseError(f"site {placement.site}: instance-only design toggled {len(usage)} bits, expected 1")
    luts: dict[int, tuple[int, ...]] = {}
    for lut in range(site.lut_count):
        bits = []
        for i in range(2 ** site.lut_arity):
            table = TruthTable.from_int(site.lut_arity, 1 << i)
            diff = diff_bitstreams(toolchain.bitgen(design(lut_configs={lut: table}), force=True), base)
            if len(diff) != 1:
                raise ReverseError(f"site {placement.site}: LUT{lut} entry {i} toggled {len(diff)} bits, expected 1")
            bits.append(diff[0])
        luts[lut] = tuple(bits)
    ffs: dict[int, int] = {}
    for ff in range(site.ff_count):
        used = toolchain.bitgen(design(ff_configs={ff: FFConfig(used=True)}), force=True)
        diff = diff_bitstreams(used, base)
        if len(diff) != 1:
            raise ReverseError(f"site {placement.site}: FF{ff} toggled {len(diff)} bits, expected 1")
        ffs[ff] = diff[0]
    return usage[0], luts, ffs


def reverse_luts_ffs(toolchain, fabric: Fabric, parallelism: int = 1):
    """Recover slice usage bits, LUT bit orders and FF usage bits for every slice site.

    Returns:
        (lut_map, ff_map, slice_map) keyed by ((x, y), slice[, index]).
    """
    empty = toolchain.bitgen(empty_netlist(fabric.device_id), force=True)
    sites = [(c, s) for c in fabric.coordinates() for s in range(len(fabric.slice_sites))]

    def task(item):
        coord, s = item
        placement = Placement(tile=fabric.clb_tile_name(coord), site=fabric.site_name(coord, s))
        return _slice_probe(toolchain, fabric.device_id, placement, fabric.slice_sites[s], empty)

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        results = list(pool.map(task, sites))
    lut_map, ff_map, slice_map = {}, {}, {}
    for (coord, s), (usage, luts, ffs) in zip(sites, results):
        slice_map[(coord, s)] = usage
        for lut, bits in luts.items():
            lut_map[(coord, s, lut)] = bits
        for ff, bit in ffs.items():
            ff_map[(coord, s, ff)] = bit
    logger.info(f"logic database covers {len(slice_map)} slice sites")
    return lut_map, ff_map, slice_map


def reverse_device(toolchain, fabric: Fabric, parallelism: int = 1) -> tuple[EncodingDatabase, ReverseSummary]:
    """Routing plus logic bits, with the invocation accounting."""
    start = toolchain.invocations
    db = reverse_fabric_routing(toolchain, fabric, parallelism)
    routing_calls = toolchain.invocations - start
    db.lut_map, db.ff_map, db.slice_map = reverse_luts_ffs(toolchain, fabric, parallelism)
    pip_counts = {t.type_id: len(t.pips) for t in fabric.sm_types}
    summary = ReverseSummary(
        switch_matrices=len(db.sm_types),
        sm_types=len(set(db.sm_types.values())),
        routing_invocations=routing_calls,
        analytic_invocations=analytic_invocation_count(pip_counts, db.sm_types),
        naive_invocations=naive_invocation_count(pip_counts, db.sm_types),
        logic_invocations=toolchain.invocations - start - routing_calls,
    )
    logger.info(
        f"bitgen invocations: {summary.routing_invocations} routing "
        f"(analytic {summary.analytic_invocations}, naive {summary.naive_invocations}), "
        f"{summary.logic_invocations} logic"
    )
    return db, summary
