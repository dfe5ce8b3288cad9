"""Direct bitstream patching: set or unset PIPs and rewrite LUT contents in place."""

from __future__ import annotations

import logging

from bitrev.exceptions import BitstreamFormatError, ManipulationError
from bitrev.modules.bitstream import Bitstream
from bitrev.modules.database import Coord, EncodingDatabase, Pip
from bitrev.modules.netlist import TruthTable

logger = logging.getLogger("bitrev.manip")


def _check_pip(db: EncodingDatabase, sm: Coord, pip: Pip) -> None:
    if not db.knows_pip(sm, pip):
        raise ManipulationError(f"unknown PIP {pip[0]} -> {pip[1]} at SM {sm}")


def _fully_set(bs: Bitstream, positions) -> bool:
    return bool(positions) and all(bs.is_set(p) for p in positions)


def configured_on_sink(bs: Bitstream, db: EncodingDatabase, sm: Coord, sink: str) -> Pip | None:
    """The PIP the converter would read on one sink: fully set, largest bit set."""
    candidates = [
        pip for pip in db.pips_on_sink(sm, sink)
        if not db.is_default(sm, pip) and _fully_set(bs, db.pip_positions(sm, pip))
    ]
    if not candidates:
        return None
    best = max(len(db.pip_positions(sm, p)) for p in candidates)
    winners = [p for p in candidates if len(db.pip_positions(sm, p)) == best]
    return winners[0] if len(winners) == 1 else None


def _protected_bits(bs: Bitstream, db: EncodingDatabase, sm: Coord, exclude_sink: str) -> set[int]:
    """Bits of configured PIPs on the other sinks of the same switch matrix."""
    protected: set[int] = set()
    entry = db.types[db.sm_types[sm]]
    sinks = {pip[1] for pip in entry.distances} - {exclude_sink}
    for sink in sinks:
        winner = configured_on_sink(bs, db, sm, sink)
        if winner is not None:
            protected.update(db.pip_positions(sm, winner))
    return protected


def set_pip(bs: Bitstream, db: EncodingDatabase, sm: Coord, pip: Pip) -> Bitstream:
    """Configure a PIP, first clearing whichever PIP currently drives the same sink."""
    _check_pip(db, sm, pip)
    if db.is_default(sm, pip):
        raise ManipulationError(f"{pip[0]} -> {pip[1]} is a default PIP; it has no bits to set")
    target = db.pip_positions(sm, pip)
    current = configured_on_sink(bs, db, sm, pip[1])
    clear: set[int] = set()
    if current is not None and current != pip:
        clear = set(db.pip_positions(sm, current)) - set(target) - _protected_bits(bs, db, sm, pip[1])
        logger.info(f"SM {sm}: replacing {current[0]} -> {current[1]} on sink {pip[1]}")
    try:
        return bs.with_bits(set_bits=target, clear_bits=clear)
    except BitstreamFormatError as e:
        raise ManipulationError(str(e)) from e


def unset_pip(bs: Bitstream, db: EncodingDatabase, sm: Coord, pip: Pip) -> Bitstream:
    """Clear a configured PIP, keeping bits shared with PIPs configured on other sinks."""
    _check_pip(db, sm, pip)
    if db.is_default(sm, pip) or configured_on_sink(bs, db, sm, pip[1]) != pip:
        raise ManipulationError(f"{pip[0]} -> {pip[1]} is not configured at SM {sm}")
    clear = set(db.pip_positions(sm, pip)) - _protected_bits(bs, db, sm, pip[1])
    return bs.with_bits(clear_bits=clear)


def rewrite_lut(bs: Bitstream, db: EncodingDatabase, slice_key: tuple[Coord, int], lut: int, table: TruthTable) -> Bitstream:
    coord, s = slice_key
    positions = db.lut_map.get((coord, s, lut))
    if positions is None:
        raise ManipulationError(f"no LUT{lut} known at slice {s} of tile {coord}")
    if len(positions) != len(table.bits):
        raise ManipulationError(
            f"LUT{lut} holds {len(positions)} entries, a {table.arity}-input table has {len(table.bits)}"
        )
    set_bits = [p for p, v in zip(positions, table.bits) if v]
    clear_bits = [p for p, v in zip(positions, table.bits) if not v]
    return bs.with_bits(set_bits=set_bits, clear_bits=clear_bits)
