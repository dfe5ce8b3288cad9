"""Turn a bitstream back into a netlist with the recovered database."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import networkx as nx

from bitrev.exceptions import BitstreamFormatError, ConversionError
from bitrev.models import Diagnostic, DiagnosticTag
from bitrev.modules.bitstream import Bitstream
from bitrev.modules.database import Coord, EncodingDatabase, LutKey, PipKey, SliceKey
from bitrev.modules.fabric import Fabric
from bitrev.modules.netlist import FFConfig, Instance, Net, Netlist, Placement, SiteKind, TruthTable

logger = logging.getLogger("bitrev.convert")


@dataclass
class HardwareConfiguration:
    configured_pips: list[PipKey] = field(default_factory=list)
    lut_contents: dict[LutKey, TruthTable] = field(default_factory=dict)
    used_ffs: set[LutKey] = field(default_factory=set)
    used_slices: set[SliceKey] = field(default_factory=set)
    reconstructed_nets: list[Net] = field(default_factory=list)


@dataclass
class ConversionResult:
    netlist: Netlist
    config: HardwareConfiguration
    diagnostics: list[Diagnostic] = field(default_factory=list)
    maybe_default_sinks: list[tuple[Coord, str]] = field(default_factory=list)


def strip_defaults(target: Bitstream, reference: Bitstream) -> tuple[int, ...]:
    """Configuration-relevant toggles of a target against the empty-design reference."""
    try:
        return tuple(int(p) for p in target.diff_positions(reference))
    except BitstreamFormatError as e:
        raise ConversionError(str(e)) from e


def extract_pips(bits, db: EncodingDatabase) -> tuple[list[PipKey], list[Diagnostic]]:
    """Identify configured PIPs from a normalized bit set.

    Bits are scanned in ascending order. For the first unmarked set bit, the
    candidates are the PIPs owning it whose bits are all set; the one with the
    most configuration bits wins and its bits are marked. Equal-size winners
    are rejected together with an ambiguity diagnostic.
    """
    bitset = set(bits)
    positions = db.positions
    marked: set[int] = set()
    found: list[PipKey] = []
    diagnostics: list[Diagnostic] = []
    rejected: set[PipKey] = set()
    for bit in sorted(bitset):
        if bit in marked:
            continue
        candidates = db.bit_index.get(bit)
        if not candidates:
            if bit not in db.logic_index:
                diagnostics.append(Diagnostic(
                    tag=DiagnosticTag.UNKNOWN_BIT, message=f"bit {bit} belongs to no known object", position=bit
                ))
            continue
        survivors = [c for c in candidates if c not in rejected and all(b in bitset for b in positions[c])]
        if not survivors:
            diagnostics.append(Diagnostic(
                tag=DiagnosticTag.UNKNOWN_BIT,
                message=f"bit {bit} is set but no PIP owning it is fully configured",
                position=bit,
            ))
            continue
        best = max(len(positions[c]) for c in survivors)
        winners = [c for c in survivors if len(positions[c]) == best]
        if len(winners) > 1:
            rejected.update(winners)
            names = ", ".join(f"{sm} {src}->{sink}" for sm, src, sink in winners)
            diagnostics.append(Diagnostic(
                tag=DiagnosticTag.AMBIGUOUS_PIP, message=f"bit {bit}: equally strong candidates {names}", position=bit
            ))
            continue
        winner = winners[0]
        found.append(winner)
        marked.update(positions[winner])
    found.sort()
    return found, diagnostics


def extract_luts_ffs(bits, db: EncodingDatabase):
    """LUT truth tables (non-zero ones only), used FFs and used slices.

    Returns:
        (lut_contents, used_ffs, used_slices)
    """
    bitset = set(bits)
    lut_contents: dict[LutKey, TruthTable] = {}
    for key, positions in db.lut_map.items():
        table = tuple(1 if p in bitset else 0 for p in positions)
        if any(table):
            arity = len(positions).bit_length() - 1
            lut_contents[key] = TruthTable(arity=arity, bits=table)
    used_ffs = {key for key, p in db.ff_map.items() if p in bitset}
    used_slices = {key for key, p in db.slice_map.items() if p in bitset}
    return lut_contents, used_ffs, used_slices


def instance_name(fabric: Fabric, key: SliceKey) -> str:
    coord, s = key
    return fabric.site_name(coord, s)


def reconstruct_nets(
    configured_pips: list[PipKey],
    fabric: Fabric,
    endpoints: set[SliceKey],
) -> tuple[list[Net], list[Diagnostic]]:
    """Group configured PIPs into nets over the public wire graph.

    Nodes are (coordinate, wire) pairs; PIP edges come from the bitstream and
    static edges from the fabric topology. Each weakly connected component is
    one net, rooted at the output pin of a used slice when it has one.
    """
    graph = nx.DiGraph()
    driver_of: dict[tuple, PipKey] = {}
    for sm, src, sink in configured_pips:
        node = (sm, sink)
        if node in driver_of:
            raise ConversionError(f"sink {sink} of SM {sm} is driven by two configured PIPs")
        driver_of[node] = (sm, src, sink)
        graph.add_edge((sm, src), node, pip=(fabric.tile_name(sm), src, sink))
    for node in list(graph.nodes):
        coord, wire = node
        target = fabric.wire_target(coord, wire)
        if target is not None:
            graph.add_edge(node, target)

    def endpoint(node, output: bool):
        coord, wire = node
        pin = fabric.pin_of_wire(wire)
        if pin is None or (wire[0] == "W") != output:
            return None
        s, pin_name = pin
        if (coord, s) not in endpoints:
            return None
        return instance_name(fabric, (coord, s)), pin_name

    nets: list[Net] = []
    diagnostics: list[Diagnostic] = []
    components = sorted((sorted(c) for c in nx.weakly_connected_components(graph)), key=lambda c: c[0])
    dangling = 0
    for nodes in components:
        roots = [n for n in nodes if graph.in_degree(n) == 0 and endpoint(n, output=True)]
        sub = graph.subgraph(nodes)
        pips = sorted(d["pip"] for _, _, d in sub.edges(data=True) if "pip" in d)
        inpins = sorted(p for n in nodes if graph.out_degree(n) == 0 and (p := endpoint(n, output=False)))
        if len(roots) == 1:
            outpin = endpoint(roots[0], output=True)
            nets.append(Net(name=f"net_{outpin[0]}_{outpin[1]}", outpin=outpin, inpins=inpins, pips=pips))
            continue
        dangling += 1
        name = f"dangling_{dangling}"
        reason = "has no driving output pin" if not roots else "has several driving output pins"
        diagnostics.append(Diagnostic(
            tag=DiagnosticTag.DANGLING_NET, message=f"{name}: routing component of {len(pips)} PIPs {reason}"
        ))
        nets.append(Net(name=name, inpins=inpins if not roots else [], pips=pips))
    return nets, diagnostics


def _instances(fabric: Fabric, cfg: HardwareConfiguration) -> list[Instance]:
    slices = set(cfg.used_slices)
    slices.update((c, s) for c, s, _ in cfg.lut_contents)
    slices.update((c, s) for c, s, _ in cfg.used_ffs)
    instances = []
    for coord, s in sorted(slices):
        instances.append(Instance(
            name=instance_name(fabric, (coord, s)),
            site_kind=SiteKind.SLICE,
            placement=Placement(tile=fabric.clb_tile_name(coord), site=fabric.site_name(coord, s)),
            lut_configs={lut: t for (c, sl, lut), t in cfg.lut_contents.items() if (c, sl) == (coord, s)},
            ff_configs={ff: FFConfig(used=True) for (c, sl, ff) in cfg.used_ffs if (c, sl) == (coord, s)},
        ))
    return instances


def convert(target: Bitstream, reference: Bitstream, db: EncodingDatabase, fabric: Fabric) -> ConversionResult:
    """Strip defaults, extract PIPs and logic, rebuild nets, and assemble a netlist."""
    if target.device_id != db.device_id:
        raise ConversionError(f"bitstream is for {target.device_id}, database for {db.device_id}")
    if fabric.device_id != db.device_id:
        raise ConversionError(f"fabric description is for {fabric.device_id}, database for {db.device_id}")
    bits = strip_defaults(target, reference)
    pips, diagnostics = extract_pips(bits, db)
    lut_contents, used_ffs, used_slices = extract_luts_ffs(bits, db)
    cfg = HardwareConfiguration(
        configured_pips=pips, lut_contents=lut_contents, used_ffs=used_ffs, used_slices=used_slices
    )
    occupied = used_slices | {(c, s) for c, s, _ in lut_contents} | {(c, s) for c, s, _ in used_ffs}
    nets, net_diagnostics = reconstruct_nets(pips, fabric, occupied)
    cfg.reconstructed_nets = nets
    diagnostics += net_diagnostics

    netlist = Netlist(
        design_name="recovered",
        device_id=db.device_id,
        instances=_instances(fabric, cfg),
        nets=nets,
    )
    touched = {sm for sm, _, _ in pips}
    configured_sinks = {(sm, sink) for sm, _, sink in pips}
    maybe_default = sorted(
        (sm, pip[1])
        for sm in touched
        for pip in db.types[db.sm_types[sm]].defaults
        if (sm, pip[1]) not in configured_sinks
    )
    for d in diagnostics:
        logger.debug(str(d))
    logger.info(
        f"recovered {len(pips)} PIPs, {len(lut_contents)} LUTs, {len(used_ffs)} FFs, "
        f"{len(nets)} nets, {len(diagnostics)} diagnostics"
    )
    return ConversionResult(netlist=netlist, config=cfg, diagnostics=diagnostics, maybe_default_sinks=maybe_default)
