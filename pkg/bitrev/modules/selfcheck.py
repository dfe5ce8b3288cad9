"""Ground-truth comparisons and the built-in round-trip suite.

This is the only module besides the mock toolchain that reads a fabric's
hidden encoding.
"""

from __future__ import annotations

import logging

import numpy as np

from bitrev.config import Config
from bitrev.exceptions import BitrevError
from bitrev.models import CheckResult, DiagnosticTag, SelfcheckReport
from bitrev.modules.aes import aes128_encrypt
from bitrev.modules.converter import ConversionResult, convert
from bitrev.modules.database import EncodingDatabase, decode_database, encode_database
from bitrev.modules.fabric import Fabric, SliceSite, generate_fabric
from bitrev.modules.manipulator import configured_on_sink, set_pip, unset_pip
from bitrev.modules.netlist import (
    FFConfig,
    Instance,
    Net,
    Netlist,
    Placement,
    SiteKind,
    TruthTable,
    canonicalize,
    empty_netlist,
    parse_netlist,
    pip_set,
    write_netlist,
)
from bitrev.modules.re_pipeline import reverse_device
from bitrev.modules.toolchain import MockToolchain

logger = logging.getLogger("bitrev.selfcheck")

TINY_GRID = (4, 4)
TINY_TYPES = [(48, 14, 64), (48, 14, 72)]
TINY_SITES = [SliceSite(lut_count=2, lut_arity=2, ff_count=2)]
TINY_DEFAULT_FRACTION = 0.05
ROUND_TRIPS = 10


def tiny_fabric(seed: int = 0) -> Fabric:
    return generate_fabric(
        seed,
        TINY_GRID,
        TINY_TYPES,
        default_fraction=TINY_DEFAULT_FRACTION,
        slice_sites=TINY_SITES,
        device_id="xbr6-tiny",
    )


def verify_database(db: EncodingDatabase, fabric: Fabric) -> list[str]:
    """Every difference between a recovered database and the fabric's ground truth."""
    enc = fabric.ground_truth()
    mismatches: list[str] = []
    for coord in fabric.coordinates():
        sm_type = fabric.sm_type_at(coord)
        if db.sm_types.get(coord) != sm_type.type_id:
            mismatches.append(f"SM {coord}: type {db.sm_types.get(coord)}, expected {sm_type.type_id}")
            continue
        if coord not in db.references:
            mismatches.append(f"SM {coord}: no reference positions")
            continue
        entry = db.types[sm_type.type_id]
        if entry.defaults != sm_type.default_pips():
            mismatches.append(f"SM {coord}: default PIPs {sorted(entry.defaults)}")
        for pip in sm_type.pip_names():
            if pip in sm_type.default_pips():
                continue
            if pip not in entry.distances:
                mismatches.append(f"SM {coord}: PIP {pip[0]} -> {pip[1]} missing")
                continue
            if sorted(db.pip_positions(coord, pip)) != sorted(enc.pip_bits(coord, pip)):
                mismatches.append(f"SM {coord}: PIP {pip[0]} -> {pip[1]} at wrong positions")
        for s, site in enumerate(fabric.slice_sites):
            if db.slice_map.get((coord, s)) != enc.slice_bit(coord, s):
                mismatches.append(f"slice {coord}/{s}: usage bit")
            for lut in range(site.lut_count):
                if db.lut_map.get((coord, s, lut)) != enc.lut_bits(coord, s, lut):
                    mismatches.append(f"slice {coord}/{s}: LUT{lut} bit order")
            for ff in range(site.ff_count):
                if db.ff_map.get((coord, s, ff)) != enc.ff_bit(coord, s, ff):
                    mismatches.append(f"slice {coord}/{s}: FF{ff} bit")
    return mismatches


def random_netlist(
    fabric: Fabric,
    rng: np.random.Generator,
    n_slices: int = 4,
    n_pips: int = 12,
    design_name: str = "random",
) -> Netlist:
    """A placed design with random LUT/FF contents and random non-default PIPs.

    PIPs are spread over nets whose pins all sit on placed slices, so the
    toolchain encodes every one of them in force mode; at most one PIP per
    switch-matrix sink.
    """
    sites = [(c, s) for c in fabric.coordinates() for s in range(len(fabric.slice_sites))]
    picked = [sites[i] for i in sorted(rng.choice(len(sites), size=min(n_slices, len(sites)), replace=False))]
    instances, outputs, inputs = [], [], []
    for coord, s in picked:
        site = fabric.slice_sites[s]
        name = fabric.site_name(coord, s)
        luts = {
            lut: TruthTable.from_int(site.lut_arity, int(rng.integers(1, 2 ** (2 ** site.lut_arity))))
            for lut in range(site.lut_count)
            if rng.random() < 0.7
        }
        ffs = {ff: FFConfig(used=True) for ff in range(site.ff_count) if rng.random() < 0.5}
        instances.append(Instance(
            name=name,
            site_kind=SiteKind.SLICE,
            placement=Placement(tile=fabric.clb_tile_name(coord), site=name),
            lut_configs=luts,
            ff_configs=ffs,
        ))
        outputs += [(name, pin) for pin in site.output_pins()]
        inputs += [(name, pin) for pin in site.input_pins()]

    candidates = [
        (coord, pip.key)
        for coord in fabric.coordinates()
        for pip in fabric.sm_type_at(coord).pips
        if not pip.is_default
    ]
    used_sinks: set = set()
    pips = []
    for i in rng.permutation(len(candidates)):
        coord, (src, sink) = candidates[i]
        if (coord, sink) in used_sinks:
            continue
        used_sinks.add((coord, sink))
        pips.append((fabric.tile_name(coord), src, sink))
        if len(pips) == n_pips:
            break

    n_nets = max(1, min(len(outputs), len(inputs), len(pips)))
    out_order = rng.permutation(len(outputs))[:n_nets]
    in_order = rng.permutation(len(inputs))[:n_nets]
    nets = [
        Net(name=f"n{k}", outpin=outputs[o], inpins=[inputs[i]], pips=sorted(pips[k::n_nets]))
        for k, (o, i) in enumerate(zip(out_order, in_order))
    ]
    return Netlist(design_name=design_name, device_id=fabric.device_id, instances=instances, nets=nets)


def roundtrip_mismatches(netlist: Netlist, result: ConversionResult) -> list[str]:
    """Differences in PIPs, LUT contents and FF usage between a design and its conversion."""
    mismatches = []
    expected, found = pip_set(netlist), pip_set(result.netlist)
    if expected != found:
        mismatches.append(f"PIPs: {len(expected - found)} lost, {len(found - expected)} spurious")

    def logic(n: Netlist):
        luts = {
            (i.name, lut): t.to_hex()
            for i in n.instances
            for lut, t in i.lut_configs.items()
            if t.constant_value() != 0
        }
        ffs = {(i.name, ff) for i in n.instances for ff, c in i.ff_configs.items() if c.used}
        return luts, ffs

    exp_luts, exp_ffs = logic(netlist)
    got_luts, got_ffs = logic(result.netlist)
    if exp_luts != got_luts:
        mismatches.append("LUT contents differ")
    if exp_ffs != got_ffs:
        mismatches.append("FF usage differs")
    bad = [d for d in result.diagnostics if d.tag in (DiagnosticTag.UNKNOWN_BIT, DiagnosticTag.AMBIGUOUS_PIP)]
    if bad:
        mismatches.append(f"{len(bad)} diagnostics, first: {bad[0]}")
    return mismatches


def _check(report: SelfcheckReport, name: str, fn) -> None:
    try:
        detail = fn()
        report.checks.append(CheckResult(name=name, passed=not detail, detail=detail or ""))
    except BitrevError as e:
        report.checks.append(CheckResult(name=name, passed=False, detail=str(e)))


def run_selfcheck(config: Config) -> SelfcheckReport:
    """Reverse a tiny fabric and push designs through every stage of the toolkit."""
    fabric = tiny_fabric(config.seed)
    public = fabric.public()
    toolchain = MockToolchain(fabric)
    db, summary = reverse_device(toolchain, public, parallelism=config.jobs)
    encoded = encode_database(db)
    rng = np.random.default_rng(config.seed)
    report = SelfcheckReport()

    def database():
        mismatches = verify_database(db, fabric)
        return f"{len(mismatches)} mismatches, first: {mismatches[0]}" if mismatches else ""

    def invocations():
        if summary.routing_invocations != summary.analytic_invocations:
            return f"{summary.routing_invocations} calls, formula says {summary.analytic_invocations}"
        return ""

    def database_file():
        return "" if encode_database(decode_database(encoded)) == encoded else "re-encoding changed the file"

    def parallel():
        other, _ = reverse_device(MockToolchain(fabric), public, parallelism=1 if config.jobs > 1 else 4)
        return "" if encode_database(other) == encoded else "database depends on the worker count"

    reference = toolchain.bitgen(empty_netlist(fabric.device_id), force=True)

    def conversion():
        for k in range(ROUND_TRIPS):
            design = random_netlist(fabric, rng, design_name=f"random{k}")
            result = convert(toolchain.bitgen(design, force=True), reference, db, public)
            mismatches = roundtrip_mismatches(design, result)
            if mismatches:
                return f"design {k}: {mismatches[0]}"
        return ""

    def text_format():
        design = random_netlist(fabric, rng)
        return "" if canonicalize(parse_netlist(write_netlist(design))) == canonicalize(design) else "text differs"

    def manipulation():
        sm = (1, 1)
        for pip in public.sm_type_at(sm).pip_names():
            if db.is_default(sm, pip) or configured_on_sink(reference, db, sm, pip[1]) is not None:
                continue
            patched = set_pip(reference, db, sm, pip)
            if configured_on_sink(patched, db, sm, pip[1]) != pip:
                return f"{pip[0]} -> {pip[1]} not readable after set_pip"
            if unset_pip(patched, db, sm, pip) != reference:
                return f"{pip[0]} -> {pip[1]}: unset_pip did not restore the bitstream"
        return ""

    def aes():
        ct = aes128_encrypt(bytes(range(16)), bytes.fromhex("00112233445566778899aabbccddeeff"))
        return "" if ct.hex() == "69c4e0d86a7b0430d8cdb78070b4c55a" else f"got {ct.hex()}"

    _check(report, "database matches ground truth", database)
    _check(report, "invocation count matches formula", invocations)
    _check(report, "database file round trip", database_file)
    _check(report, "parallel determinism", parallel)
    _check(report, "bitstream conversion round trip", conversion)
    _check(report, "netlist text round trip", text_format)
    _check(report, "set/unset PIP inverse", manipulation)
    _check(report, "AES known answer", aes)
    logger.info(f"{sum(c.passed for c in report.checks)}/{len(report.checks)} checks passed")
    return report
