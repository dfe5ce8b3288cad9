# main.py
"""Command-line entry point: one subcommand per workflow stage.

Exit codes: 0 success, 1 domain error (BitrevError), 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from bitrev.config import Config, load_config
from bitrev.exceptions import BitrevError, ManipulationError
from bitrev.modules.bitstream import bitstream_read, bitstream_write
from bitrev.modules.converter import convert
from bitrev.modules.database import load_database, save_database
from bitrev.modules.fabric import (
    SM_TILE_PREFIX,
    Fabric,
    SliceSite,
    fabric_report,
    generate_fabric,
    load_fabric,
    load_ground_truth,
    pip_key,
    save_fabric,
    save_ground_truth,
)
from bitrev.modules.manipulator import rewrite_lut, set_pip, unset_pip
from bitrev.modules.netlist import TruthTable, parse_netlist, write_netlist
from bitrev.modules.re_pipeline import reverse_device
from bitrev.modules.selfcheck import run_selfcheck
from bitrev.modules.toolchain import MockToolchain
from bitrev.modules.trojan import (
    AesTarget,
    SelfTestSpec,
    build_aes_target,
    correlate_key_bits,
    detect_shift_registers,
    insert_payload,
    load_keymap,
    save_keymap,
    stealth_report,
)
from bitrev.modules.utils import parse_hex_bytes, parse_tile_name, setup_logging

logger = logging.getLogger("bitrev.cli")


# --- Helpers ---

def _read_netlist(path: str):
    try:
        return parse_netlist(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise BitrevError(f"cannot read netlist {path}: {e}") from e


def _write_text(path: str, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as e:
        raise BitrevError(f"cannot write {path}: {e}") from e


def _parse_pip_object(fabric: Fabric | None, text: str):
    """`INT_X1Y2:W3->S4` -> ((1, 2), ("W3", "S4"))."""
    try:
        tile, pip = text.split(":", 1)
        src, sink = pip.split("->", 1)
    except ValueError:
        raise ManipulationError(f"expected TILE:SRC->SINK, got {text!r}") from None
    if fabric is not None:
        return fabric.parse_sm_tile(tile), (src.strip(), sink.strip())
    coord = parse_tile_name(tile)
    if coord is None or not tile.startswith(SM_TILE_PREFIX + "_"):
        raise ManipulationError(f"bad switch-matrix tile {tile!r}")
    return coord, (src.strip(), sink.strip())


def _target_for(cfg: Config, netlist) -> AesTarget:
    return AesTarget(
        netlist=netlist,
        grid_width=cfg.grid_width,
        grid_height=cfg.grid_height,
        slices_per_tile=cfg.slices_per_tile,
        lut_arity=cfg.lut_arity,
    )


def _read_spec(path: str) -> SelfTestSpec:
    try:
        return SelfTestSpec.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise BitrevError(f"cannot read self-test spec {path}: {e}") from e


# --- Commands ---

def cmd_fabric_gen(args, cfg: Config) -> int:
    sites = [
        SliceSite(lut_count=cfg.luts_per_slice, lut_arity=cfg.lut_arity, ff_count=cfg.ffs_per_slice)
        for _ in range(cfg.slices_per_tile)
    ]
    fabric = generate_fabric(
        cfg.seed,
        cfg.grid,
        cfg.sm_type_specs,
        default_fraction=cfg.default_fraction,
        overprovision_rate=cfg.overprovision_rate,
        slice_sites=sites,
        device_id=cfg.device_id,
    )
    save_fabric(fabric, args.out)
    save_ground_truth(fabric, args.ground_truth)
    print(f"fabric {fabric.device_id}: {fabric.grid_width}x{fabric.grid_height}, {len(fabric.sm_types)} SM types")
    return 0


def cmd_fabric_report(args, cfg: Config) -> int:
    fabric = load_fabric(args.fabric)
    coord = fabric.parse_sm_tile(args.sm)
    for pip in fabric_report(fabric, coord):
        print(pip_key(pip))
    return 0


def cmd_bitgen(args, cfg: Config) -> int:
    toolchain = MockToolchain(load_ground_truth(args.ground_truth))
    bitstream_write(toolchain.bitgen(_read_netlist(args.input), force=args.force), args.output)
    return 0


def cmd_reverse(args, cfg: Config) -> int:
    hidden = load_ground_truth(args.ground_truth)
    public = load_fabric(args.fabric) if args.fabric else hidden.public()
    toolchain = MockToolchain(hidden)
    db, summary = reverse_device(toolchain, public, parallelism=cfg.jobs)
    save_database(db, args.out)
    print(f"switch matrices: {summary.switch_matrices} ({summary.sm_types} types)")
    print(f"routing bitgen invocations: {summary.routing_invocations}")
    print(f"analytic count: {summary.analytic_invocations}")
    print(f"naive per-PIP count: {summary.naive_invocations} ({summary.savings_factor:.1f}x more)")
    print(f"logic bitgen invocations: {summary.logic_invocations}")
    print(f"total bitgen invocations: {toolchain.invocations}")
    return 0


def cmd_convert(args, cfg: Config) -> int:
    db = load_database(args.db)
    fabric = load_fabric(args.fabric)
    result = convert(bitstream_read(args.input), bitstream_read(args.reference), db, fabric)
    _write_text(args.output, write_netlist(result.netlist))
    for d in result.diagnostics:
        print(str(d), file=sys.stderr)
    if result.maybe_default_sinks:
        print(f"{len(result.maybe_default_sinks)} sinks may carry an invisible default PIP", file=sys.stderr)
    return 0


def cmd_manip(args, cfg: Config) -> int:
    db = load_database(args.db)
    fabric = load_fabric(args.fabric) if args.fabric else None
    bs = bitstream_read(args.input)
    if args.action == "rewrite-lut":
        try:
            tile, site, lut, table = args.object.split(":")
            if not lut.startswith("LUT"):
                raise ValueError(lut)
            lut_index = int(lut[3:])
            truth = TruthTable.from_hex(table)
        except ValueError:
            raise ManipulationError(f"expected TILE:SITE:LUTn:HEX, got {args.object!r}") from None
        if fabric is None:
            raise ManipulationError("rewrite-lut needs --fabric to resolve the slice site")
        out = rewrite_lut(bs, db, fabric.parse_site(tile, site), lut_index, truth)
    else:
        sm, pip = _parse_pip_object(fabric, args.object)
        out = set_pip(bs, db, sm, pip) if args.action == "set-pip" else unset_pip(bs, db, sm, pip)
    bitstream_write(out, args.output)
    return 0


def cmd_trojan(args, cfg: Config) -> int:
    action = args.action
    if action == "build-target":
        target, spec = build_aes_target(
            parse_hex_bytes(args.key),
            parse_hex_bytes(args.pref),
            cfg.seed,
            grid=cfg.grid,
            slices_per_tile=cfg.slices_per_tile,
            lut_arity=cfg.lut_arity,
            device_id=cfg.device_id,
        )
        _write_text(args.output, write_netlist(target.netlist))
        _write_text(args.spec, spec.model_dump_json(indent=1))
        print(f"c_ref: {spec.c_ref.hex()}")
        return 0

    netlist = _read_netlist(args.input)
    target = _target_for(cfg, netlist)
    if action == "detect":
        chains = detect_shift_registers(netlist, cfg.shift_register_threshold)
        for i, chain in enumerate(chains):
            print(f"chain {i}: {len(chain)} FFs from {chain.ffs[0]}, first LUT {chain.first_lut}, {len(chain.taps)} taps")
        print(f"{len(chains)} shift registers")
    elif action == "correlate":
        chains = detect_shift_registers(netlist, cfg.shift_register_threshold)
        keymap = correlate_key_bits(target, chains)
        save_keymap(keymap, args.out)
        print(f"correlated {len(keymap.entries)} key FFs")
    elif action == "inject":
        trojaned = insert_payload(target, load_keymap(args.map), parse_hex_bytes(args.kst))
        _write_text(args.output, write_netlist(trojaned))
        print(f"added {len(trojaned.instances) - len(netlist.instances)} payload LUTs")
    elif action == "verify":
        spec = _read_spec(args.spec)
        report = stealth_report(target, netlist, spec, trials=args.trials or cfg.trials, seed=cfg.seed)
        print(report.render())
    return 0


def cmd_selfcheck(args, cfg: Config) -> int:
    report = run_selfcheck(cfg)
    print(report.render())
    return 0 if report.passed else 1


# --- Parser ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bitrev", description="FPGA bitstream reverse-engineering toolkit")
    parser.add_argument("--config", help="TOML configuration file")
    parser.add_argument("--jobs", type=int, help="worker threads (default: $BITREV_JOBS or 1)")
    parser.add_argument("--seed", type=int, help="seed for every random choice")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    fabric = sub.add_parser("fabric", help="generate or inspect a synthetic fabric")
    fabric_sub = fabric.add_subparsers(dest="action", required=True)
    gen = fabric_sub.add_parser("gen", help="generate a fabric and its hidden encoding")
    gen.add_argument("--out", required=True, help="public fabric description (JSON)")
    gen.add_argument("--ground-truth", required=True, help="hidden encoding for the mock toolchain")
    gen.set_defaults(func=cmd_fabric_gen)
    rep = fabric_sub.add_parser("report", help="list the PIPs of one switch matrix")
    rep.add_argument("--fabric", required=True)
    rep.add_argument("--sm", required=True, help="switch-matrix tile, e.g. INT_X3Y5")
    rep.set_defaults(func=cmd_fabric_report)

    bg = sub.add_parser("bitgen", help="encode a netlist with the mock toolchain")
    bg.add_argument("--ground-truth", required=True)
    bg.add_argument("--input", required=True)
    bg.add_argument("--output", required=True)
    bg.add_argument("--force", action="store_true", help="skip design-rule and routing checks")
    bg.set_defaults(func=cmd_bitgen)

    rev = sub.add_parser("reverse", help="recover the encoding database")
    rev.add_argument("--ground-truth", required=True, help="what the mock toolchain encodes with")
    rev.add_argument("--fabric", help="public fabric description (default: derived from the ground truth)")
    rev.add_argument("--out", required=True)
    rev.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker threads; same as the global --jobs")
    rev.set_defaults(func=cmd_reverse)

    conv = sub.add_parser("convert", help="turn a bitstream back into a netlist")
    conv.add_argument("--db", required=True)
    conv.add_argument("--fabric", required=True)
    conv.add_argument("--reference", required=True, help="bitstream of the empty design")
    conv.add_argument("--input", required=True)
    conv.add_argument("--output", required=True)
    conv.set_defaults(func=cmd_convert)

    manip = sub.add_parser("manip", help="patch a bitstream in place")
    manip.add_argument("action", choices=["set-pip", "unset-pip", "rewrite-lut"])
    manip.add_argument("object", help="TILE:SRC->SINK or TILE:SITE:LUTn:HEX")
    manip.add_argument("--db", required=True)
    manip.add_argument("--fabric")
    manip.add_argument("--input", required=True)
    manip.add_argument("--output", required=True)
    manip.set_defaults(func=cmd_manip)

    trojan = sub.add_parser("trojan", help="AES self-test Trojan case study")
    trojan_sub = trojan.add_subparsers(dest="action", required=True)
    build = trojan_sub.add_parser("build-target")
    build.add_argument("--key", required=True, help="self-test key k_st (32 hex digits)")
    build.add_argument("--pref", required=True, help="self-test plaintext p_ref (32 hex digits)")
    build.add_argument("--output", required=True)
    build.add_argument("--spec", required=True, help="where to write the self-test spec (JSON)")
    detect = trojan_sub.add_parser("detect")
    detect.add_argument("--input", required=True)
    corr = trojan_sub.add_parser("correlate")
    corr.add_argument("--input", required=True)
    corr.add_argument("--out", required=True, help="key-bit map (JSON)")
    inject = trojan_sub.add_parser("inject")
    inject.add_argument("--input", required=True)
    inject.add_argument("--map", required=True)
    inject.add_argument("--kst", required=True)
    inject.add_argument("--output", required=True)
    verify = trojan_sub.add_parser("verify")
    verify.add_argument("--input", required=True, help="netlist to judge, clean or Trojaned")
    verify.add_argument("--spec", required=True)
    verify.add_argument("--trials", type=int)
    for p in (build, detect, corr, inject, verify):
        p.set_defaults(func=cmd_trojan)

    check = sub.add_parser("selfcheck", help="run the built-in round-trip suite on a tiny fabric")
    check.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    setup_logging(args.verbose)
    try:
        cfg = load_config(args.config, jobs=args.jobs, seed=args.seed)
        return args.func(args, cfg)
    except BitrevError as e:
        logger.error(str(e))
        return 1
