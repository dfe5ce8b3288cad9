"""AES self-test Trojan case study.

The target is the key-loading frontend of an AES engine: the 128-bit key
arrives byte by byte on eight pads and is shifted into eight 16-stage FF
chains, one chain per bit lane, each stage fronted by a pass-through LUT.
The FF outputs feed a behavioural AES-128 core.

An attacker who only sees the netlist finds the chains, works out which FF
holds which key bit by clearing pass-through LUTs and comparing ciphertexts
with software AES, and finally replaces the D input of every key FF with a
constant LUT holding the self-test key. The device then always encrypts
under the self-test key and passes the self-test.

Load protocol, cycles 0..17: key byte t on the key pads in cycle t, GO plus
the plaintext in cycle 16, ciphertext on the output pads in cycle 17.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import networkx as nx
import numpy as np
from pydantic import BaseModel, field_serializer, field_validator, model_validator

from bitrev.exceptions import BitrevError, ConversionError, CorrelationError, PayloadError
from bitrev.models import Counterexample, StealthReport
from bitrev.modules.aes import aes128_decrypt, aes128_encrypt, bits_to_bytes, bytes_to_bits
from bitrev.modules.converter import convert
from bitrev.modules.fabric import CLB_TILE_PREFIX, Fabric
from bitrev.modules.netlist import (
    CellRef,
    FFConfig,
    Instance,
    Net,
    Netlist,
    Placement,
    SiteKind,
    TruthTable,
    empty_netlist,
    parse_slice_pin,
)
from bitrev.modules.router import route_design
from bitrev.modules.simulator import simulate
from bitrev.modules.utils import parse_tile_name, tile_name

logger = logging.getLogger("bitrev.trojan")

KEY_BYTES = 16
BIT_LANES = 8
STAGES = KEY_BYTES
GO_CYCLE = KEY_BYTES
READ_CYCLE = GO_CYCLE + 1
CORE = "aes_core"
GO_PAD = "go"
ALL_ONES = b"\xff" * KEY_BYTES
PROBE_PLAINTEXT = bytes.fromhex("00112233445566778899aabbccddeeff")

_FF_ID_RE = re.compile(r"^(.+)/FF(\d+)$")
_SITE_X_RE = re.compile(r"^SLICE_X(\d+)Y\d+$")


def key_pad(bit: int) -> str:
    return f"key_byte{bit}"


def pt_pad(i: int) -> str:
    return f"pt{i}"


def ct_pad(i: int) -> str:
    return f"ct{i}"


def _hex16(value) -> bytes:
    if isinstance(value, str):
        value = bytes.fromhex(value)
    if len(value) != KEY_BYTES:
        raise ValueError(f"expected {KEY_BYTES} bytes, got {len(value)}")
    return bytes(value)


class SelfTestSpec(BaseModel):
    """Known-answer self-test: c_ref must equal AES_{k_st}(p_ref)."""

    p_ref: bytes
    c_ref: bytes
    k_st: bytes
    k_u: bytes

    @field_validator("p_ref", "c_ref", "k_st", "k_u", mode="before")
    @classmethod
    def _check_length(cls, value):
        return _hex16(value)

    @model_validator(mode="after")
    def _check_reference(self):
        if aes128_encrypt(self.k_st, self.p_ref) != self.c_ref:
            raise ValueError("c_ref is not the encryption of p_ref under k_st")
        return self

    @field_serializer("p_ref", "c_ref", "k_st", "k_u")
    def _to_hex(self, value: bytes) -> str:
        return value.hex()


class AesTarget(BaseModel):
    """The target netlist plus the slice geometry it was placed on."""

    netlist: Netlist
    grid_width: int = 16
    grid_height: int = 16
    slices_per_tile: int = 2
    lut_arity: int = 4

    @property
    def device_id(self) -> str:
        return self.netlist.device_id

    def placement(self, coord: tuple[int, int], slice_index: int) -> Placement:
        x, y = coord
        return Placement(
            tile=tile_name(CLB_TILE_PREFIX, x, y),
            site=f"SLICE_X{x * self.slices_per_tile + slice_index}Y{y}",
        )

    def slot_of(self, placement: Placement) -> tuple[tuple[int, int], int]:
        coord = parse_tile_name(placement.tile)
        m = _SITE_X_RE.match(placement.site)
        if coord is None or m is None:
            raise BitrevError(f"cannot read placement {placement.tile} {placement.site}")
        return coord, int(m.group(1)) % self.slices_per_tile

    def encrypt(
        self,
        keys: Sequence[bytes],
        plaintexts: Sequence[bytes],
        netlist: Netlist | None = None,
        lut_overrides=None,
    ) -> list[bytes]:
        """Load each key byte-serially and encrypt; one simulation lane per (key, plaintext)."""
        if len(keys) != len(plaintexts):
            raise BitrevError("need one plaintext per key")
        lanes = len(keys)
        trace = simulate(
            netlist if netlist is not None else self.netlist,
            load_stimuli(keys, plaintexts),
            cycles=READ_CYCLE + 1,
            lanes=lanes,
            lut_overrides=lut_overrides,
        )
        out = trace[READ_CYCLE]
        ct_bits = np.stack([out.get(ct_pad(i), np.zeros(lanes, dtype=np.uint8)) for i in range(128)])
        return [bits_to_bytes(ct_bits[:, lane]) for lane in range(lanes)]


def load_stimuli(keys: Sequence[bytes], plaintexts: Sequence[bytes]) -> list[dict[str, np.ndarray | int]]:
    key_arr = np.frombuffer(b"".join(_hex16(k) for k in keys), dtype=np.uint8).reshape(len(keys), KEY_BYTES)
    pt_bits = np.stack([bytes_to_bits(_hex16(p)) for p in plaintexts], axis=1)
    stimuli: list[dict[str, np.ndarray | int]] = [
        {key_pad(b): (key_arr[:, t] >> b) & 1 for b in range(BIT_LANES)} for t in range(KEY_BYTES)
    ]
    stimuli.append({GO_PAD: 1, **{pt_pad(i): pt_bits[i] for i in range(128)}})
    stimuli.append({})
    return stimuli


def _stage_slot(stage: int, slices_per_tile: int) -> tuple[int, int, int]:
    """(tile x offset, slice index, LUT/FF index) of a chain stage."""
    per_tile = 2 * slices_per_tile
    return stage // per_tile, (stage % per_tile) // 2, stage % 2


def build_aes_target(
    k_st: bytes,
    p_ref: bytes,
    seed: int = 0,
    *,
    grid: tuple[int, int] = (16, 16),
    slices_per_tile: int = 2,
    lut_arity: int = 4,
    device_id: str = "xbr6-desk",
) -> tuple[AesTarget, SelfTestSpec]:
    """Build the self-test-protected key frontend.

    Chain c sits in row 2c, stages left to right, two stages per slice. The
    seed decides which bit lane each chain carries and draws the user key.
    """
    k_st, p_ref = _hex16(k_st), _hex16(p_ref)
    width, height = grid
    if height < 2 * (BIT_LANES - 1) + 1 or width <= _stage_slot(STAGES - 1, slices_per_tile)[0]:
        raise BitrevError(f"grid {width}x{height} cannot hold eight 16-stage chains")
    rng = np.random.default_rng(seed)
    lane_of_chain = [int(v) for v in rng.permutation(BIT_LANES)]
    k_u = rng.bytes(KEY_BYTES)
    while k_u == k_st:
        k_u = rng.bytes(KEY_BYTES)

    target = AesTarget(
        netlist=empty_netlist(device_id),
        grid_width=width,
        grid_height=height,
        slices_per_tile=slices_per_tile,
        lut_arity=lut_arity,
    )
    pass_through = TruthTable.identity(lut_arity, 0)
    pads = [key_pad(b) for b in range(BIT_LANES)] + [GO_PAD]
    pads += [pt_pad(i) for i in range(128)] + [ct_pad(i) for i in range(128)]
    instances = [Instance(name=p, site_kind=SiteKind.IOB) for p in pads]
    instances.append(Instance(name=CORE, site_kind=SiteKind.BLACKBOX, model="aes128"))

    slices: dict[str, Instance] = {}
    nets: list[Net] = []
    for c, lane in enumerate(lane_of_chain):
        y = 2 * c
        prev_q = None
        for s in range(STAGES):
            dx, slice_index, i = _stage_slot(s, slices_per_tile)
            placement = target.placement((dx, y), slice_index)
            inst = slices.setdefault(
                placement.site, Instance(name=placement.site, site_kind=SiteKind.SLICE, placement=placement)
            )
            inst.lut_configs[i] = pass_through
            inst.ff_configs[i] = FFConfig(used=True)
            lut_in = (inst.name, f"L{i}_I0")
            if prev_q is None:
                nets.append(Net(name=key_pad(lane), outpin=(key_pad(lane), "O"), inpins=[lut_in]))
            else:
                prev_q.inpins.insert(0, lut_in)
            nets.append(Net(name=f"c{c}_d{s}", outpin=(inst.name, f"L{i}_O"), inpins=[(inst.name, f"F{i}_D")]))
            key_bit = 8 * (KEY_BYTES - 1 - s) + lane
            prev_q = Net(name=f"c{c}_q{s}", outpin=(inst.name, f"F{i}_Q"), inpins=[(CORE, f"K{key_bit}")])
            nets.append(prev_q)
    nets.append(Net(name=GO_PAD, outpin=(GO_PAD, "O"), inpins=[(CORE, "GO")]))
    nets += [Net(name=pt_pad(i), outpin=(pt_pad(i), "O"), inpins=[(CORE, f"P{i}")]) for i in range(128)]
    nets += [Net(name=ct_pad(i), outpin=(CORE, f"C{i}"), inpins=[(ct_pad(i), "I")]) for i in range(128)]

    target.netlist = Netlist(
        design_name="aes_selftest",
        device_id=device_id,
        instances=instances + [slices[k] for k in sorted(slices)],
        nets=nets,
    )
    spec = SelfTestSpec(p_ref=p_ref, c_ref=aes128_encrypt(k_st, p_ref), k_st=k_st, k_u=k_u)
    logger.info(f"built AES target: {len(slices)} slices, {BIT_LANES} chains of {STAGES} stages")
    return target, spec


def run_self_test(target: AesTarget, spec: SelfTestSpec, netlist: Netlist | None = None) -> bool:
    observed = target.encrypt([spec.k_st], [spec.p_ref], netlist=netlist)[0]
    return observed == spec.c_ref


# --- Shift-register detection ---

@dataclass
class ShiftRegisterChain:
    ffs: list[CellRef]
    luts: list[CellRef | None]  # pass-through LUT fronting each stage
    taps: dict[int, list[tuple[str, str]]] = field(default_factory=dict)

    @property
    def first_lut(self) -> CellRef | None:
        return self.luts[0] if self.luts else None

    def __len__(self) -> int:
        return len(self.ffs)


def _pin_maps(netlist: Netlist):
    driven_by = {net.outpin: net for net in netlist.nets if net.outpin}
    loaded_by = {pin: net for net in netlist.nets for pin in net.inpins}
    return driven_by, loaded_by


def detect_shift_registers(netlist: Netlist, threshold: int = 4) -> list[ShiftRegisterChain]:
    """Find FF delay lines: FF -> (single-input pass-through LUT)? -> FF.

    Stages may fan out (taps) but every link must be the only FF successor of
    its source and the only FF predecessor of its target.
    """
    driven_by, loaded_by = _pin_maps(netlist)
    instances = netlist.instance_map()

    def ff_of_q(pin) -> CellRef | None:
        parsed = parse_slice_pin(pin[1])
        inst = instances.get(pin[0])
        if parsed is None or inst is None or inst.site_kind is not SiteKind.SLICE:
            return None
        return CellRef(pin[0], "FF", parsed.index) if parsed.cell == "FF" and parsed.port == "Q" else None

    def pass_through(pin) -> tuple[CellRef, tuple[str, str]] | None:
        """The LUT behind an output pin, with its only input pin, if it passes that input through."""
        parsed = parse_slice_pin(pin[1])
        inst = instances.get(pin[0])
        if parsed is None or inst is None or parsed.cell != "LUT" or parsed.port != "O":
            return None
        table = inst.lut_configs.get(parsed.index)
        if table is None:
            return None
        connected = [k for k in range(table.arity) if (pin[0], f"L{parsed.index}_I{k}") in loaded_by]
        if len(connected) != 1 or table.identity_input() != connected[0]:
            return None
        return CellRef(pin[0], "LUT", parsed.index), (pin[0], f"L{parsed.index}_I{connected[0]}")

    graph = nx.DiGraph()
    front: dict[CellRef, CellRef | None] = {}
    via: dict[CellRef, tuple[str, str]] = {}  # pin through which an FF's predecessor reaches it
    for inst in netlist.instances:
        if inst.site_kind is not SiteKind.SLICE:
            continue
        for j, cfg in inst.ff_configs.items():
            if not cfg.used:
                continue
            ff = CellRef(inst.name, "FF", j)
            graph.add_node(ff)
            front[ff] = None
            d_net = loaded_by.get((inst.name, f"F{j}_D"))
            if d_net is None or d_net.outpin is None:
                continue
            driver, entry = d_net.outpin, (inst.name, f"F{j}_D")
            lut = pass_through(driver)
            if lut is not None:
                front[ff], entry = lut
                feed = loaded_by.get(entry)
                driver = feed.outpin if feed is not None else None
            pred = ff_of_q(driver) if driver else None
            if pred is not None:
                graph.add_edge(pred, ff)
                via[ff] = entry

    links = [(a, b) for a, b in graph.edges if graph.out_degree(a) == 1 and graph.in_degree(b) == 1]
    chain_graph = nx.DiGraph(links)
    chains: list[ShiftRegisterChain] = []
    for start in sorted(n for n in chain_graph.nodes if chain_graph.in_degree(n) == 0):
        ffs = [start]
        while chain_graph.out_degree(ffs[-1]):
            ffs.append(next(iter(chain_graph.successors(ffs[-1]))))
        if len(ffs) < threshold:
            continue
        taps: dict[int, list[tuple[str, str]]] = {}
        for s, ff in enumerate(ffs):
            q_net = driven_by.get((ff.instance, f"F{ff.index}_Q"))
            if q_net is None:
                continue
            follow = via.get(ffs[s + 1]) if s + 1 < len(ffs) else None
            extra = sorted(p for p in q_net.inpins if p != follow)
            if extra:
                taps[s] = extra
        chains.append(ShiftRegisterChain(ffs=ffs, luts=[front.get(f) for f in ffs], taps=taps))
    logger.info(f"found {len(chains)} shift registers of length >= {threshold}")
    return chains


# --- Key-bit correlation ---

class KeyBitMap(BaseModel):
    """FF id ("inst/FFj") -> (key byte, bit)."""

    entries: dict[str, tuple[int, int]]

    @model_validator(mode="after")
    def _check_entries(self):
        seen = set()
        for ff, (byte, bit) in self.entries.items():
            if not _FF_ID_RE.match(ff):
                raise ValueError(f"{ff!r} is not an FF id")
            if not (0 <= byte < KEY_BYTES and 0 <= bit < BIT_LANES):
                raise ValueError(f"{ff}: key bit ({byte}, {bit}) out of range")
            if (byte, bit) in seen:
                raise ValueError(f"key bit ({byte}, {bit}) mapped twice")
            seen.add((byte, bit))
        return self

    @property
    def complete(self) -> bool:
        return len(self.entries) == KEY_BYTES * BIT_LANES


def save_keymap(keymap: KeyBitMap, path: str | Path) -> None:
    payload = {ff: list(v) for ff, v in sorted(keymap.entries.items())}
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True), encoding="utf-8")


def load_keymap(path: str | Path) -> KeyBitMap:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return KeyBitMap(entries={ff: tuple(v) for ff, v in payload.items()})
    except (OSError, ValueError) as e:
        raise CorrelationError(f"cannot read key-bit map {path}: {e}") from e


def cleared_key(bit: int, key_bytes) -> bytes:
    """The all-ones key with one bit lane cleared in the given bytes."""
    key = bytearray(ALL_ONES)
    for j in key_bytes:
        key[j] &= ~(1 << bit) & 0xFF
    return bytes(key)


def _clearing_overrides(netlist: Netlist, cleared: Sequence[CellRef]) -> dict[CellRef, np.ndarray]:
    """Per-lane LUT tables: lane i sees cleared[i] forced to constant 0."""
    instances = netlist.instance_map()
    lanes = len(cleared)
    tables: dict[CellRef, np.ndarray] = {}
    for lane, cell in enumerate(cleared):
        if cell not in tables:
            inst = instances.get(cell.instance)
            config = inst.lut_configs.get(cell.index) if inst is not None else None
            if config is None:
                raise CorrelationError(f"{cell} is not a configured LUT")
            tables[cell] = np.tile(np.asarray(config.bits, dtype=np.uint8), (lanes, 1))
        tables[cell][lane] = 0
    return tables


def correlate_key_bits(
    target: AesTarget,
    chains: Sequence[ShiftRegisterChain],
    oracle: Callable[[bytes, bytes], bytes] = aes128_encrypt,
    plaintext: bytes = PROBE_PLAINTEXT,
) -> KeyBitMap:
    """Assign every chain FF its key bit by clearing LUTs and matching ciphertexts.

    1. Clearing a chain's first LUT zeroes its whole lane; the ciphertext of
       the all-ones key names the lane.
    2. Clearing its last LUT zeroes one byte; key byte 0 means the chain was
       loaded first-byte-deepest, byte 15 the opposite.
    3. Every stage is then probed: clearing stage s zeroes stages s..15, and
       the ciphertext must match the key predicted by the assignment.
    """
    netlist = target.netlist
    for ch in chains:
        if len(ch) != STAGES or any(l is None for l in ch.luts):
            raise CorrelationError(f"chain at {ch.ffs[0]} is not a {STAGES}-stage pass-through chain")
    if not chains:
        return KeyBitMap(entries={})
    n = len(chains)

    def run(cleared: Sequence[CellRef]) -> list[bytes]:
        overrides = _clearing_overrides(netlist, cleared)
        return target.encrypt([ALL_ONES] * len(cleared), [plaintext] * len(cleared), lut_overrides=overrides)

    lane_tables = {oracle(cleared_key(b, range(KEY_BYTES)), plaintext): b for b in range(BIT_LANES)}
    lanes = []
    for ch, ct in zip(chains, run([ch.first_lut for ch in chains])):
        lane = lane_tables.get(ct)
        if lane is None:
            raise CorrelationError(f"chain at {ch.ffs[0]}: ciphertext matches no key-bit table")
        if lane in lanes:
            raise CorrelationError(f"chain at {ch.ffs[0]}: bit lane {lane} already taken")
        lanes.append(lane)

    byte_of_stage: list[list[int]] = []
    for ch, lane, ct in zip(chains, lanes, run([ch.luts[-1] for ch in chains])):
        if ct == oracle(cleared_key(lane, [0]), plaintext):
            byte_of_stage.append([KEY_BYTES - 1 - s for s in range(STAGES)])
        elif ct == oracle(cleared_key(lane, [KEY_BYTES - 1]), plaintext):
            byte_of_stage.append(list(range(STAGES)))
        else:
            raise CorrelationError(f"chain at {ch.ffs[0]}: last stage holds neither the first nor the last key byte")

    probes = [(c, s) for c in range(n) for s in range(STAGES)]
    observed = run([chains[c].luts[s] for c, s in probes])
    for (c, s), ct in zip(probes, observed):
        expected = oracle(cleared_key(lanes[c], byte_of_stage[c][s:]), plaintext)
        if ct != expected:
            raise CorrelationError(f"{chains[c].ffs[s]}: clearing stage {s} does not give the predicted key")

    entries = {
        str(ff): (byte_of_stage[c][s], lanes[c])
        for c, ch in enumerate(chains)
        for s, ff in enumerate(ch.ffs)
    }
    logger.info(f"correlated {n} chains, {len(entries)} key FFs, {len(probes)} verification probes")
    return KeyBitMap(entries=entries)


# --- Payload ---

def insert_payload(target: AesTarget, keymap: KeyBitMap, k_st: bytes) -> Netlist:
    """Drive every key FF from a constant LUT holding its bit of k_st.

    The FF's old D net keeps its driver and now loads the payload LUT input,
    so the original key frontend stays in place without effect.
    """
    k_st = _hex16(k_st)
    if not keymap.complete:
        raise PayloadError(f"key-bit map covers {len(keymap.entries)} of {KEY_BYTES * BIT_LANES} key bits")
    netlist = target.netlist
    instances = netlist.instance_map()
    _, loaded_by = _pin_maps(netlist)
    occupied = {
        i.placement
        for i in netlist.instances
        if i.site_kind is SiteKind.SLICE and i.placement is not None
    }
    free = [
        ((x, y), s)
        for x in range(target.grid_width)
        for y in range(target.grid_height)
        for s in range(target.slices_per_tile)
        if target.placement((x, y), s) not in occupied
    ]
    nets = {n.name: n for n in netlist.nets}
    payloads: list[Instance] = []
    new_nets: list[Net] = []
    for ff_id, (byte, bit) in sorted(keymap.entries.items()):
        m = _FF_ID_RE.match(ff_id)
        inst = instances.get(m.group(1))
        j = int(m.group(2))
        if inst is None or inst.site_kind is not SiteKind.SLICE or inst.placement is None:
            raise PayloadError(f"{ff_id}: no placed slice instance {m.group(1)}")
        if not inst.ff_configs.get(j, FFConfig(used=False)).used:
            raise PayloadError(f"{ff_id}: FF not found")
        if not free:
            raise PayloadError("no free slice left for a payload LUT")
        (fx, fy), _ = target.slot_of(inst.placement)
        slot = min(free, key=lambda cs: (abs(cs[0][0] - fx) + abs(cs[0][1] - fy), cs))
        free.remove(slot)
        placement = target.placement(*slot)
        if placement.site in instances:
            raise PayloadError(f"instance name {placement.site} already taken")
        value = (k_st[byte] >> bit) & 1
        payload = Instance(
            name=placement.site,
            site_kind=SiteKind.SLICE,
            placement=placement,
            lut_configs={0: TruthTable.constant(target.lut_arity, value)},
        )
        payloads.append(payload)
        d_pin = (inst.name, f"F{j}_D")
        old = loaded_by.get(d_pin)
        if old is not None:
            net = nets[old.name]
            nets[old.name] = net.model_copy(update={
                "inpins": [p for p in net.inpins if p != d_pin] + [(payload.name, "L0_I0")],
                "pips": [],
            })
        new_nets.append(Net(name=f"payload_{inst.name}_F{j}", outpin=(payload.name, "L0_O"), inpins=[d_pin]))
    logger.info(f"inserted {len(payloads)} payload LUTs")
    return Netlist(
        design_name=netlist.design_name,
        device_id=netlist.device_id,
        instances=list(netlist.instances) + payloads,
        nets=[nets[n.name] for n in netlist.nets] + new_nets,
    )


def stealth_report(
    target: AesTarget,
    netlist: Netlist,
    spec: SelfTestSpec,
    trials: int = 20,
    seed: int = 0,
) -> StealthReport:
    """Self-test verdict, decryptability under k_st, and one detecting pair."""
    rng = np.random.default_rng(seed)
    keys = [spec.k_u] + [rng.bytes(KEY_BYTES) for _ in range(trials - 1)]
    plaintexts = [rng.bytes(KEY_BYTES) for _ in range(trials)]
    observed = target.encrypt(keys, plaintexts, netlist=netlist)
    decryptable = sum(aes128_decrypt(spec.k_st, ct) == p for ct, p in zip(observed, plaintexts))
    counterexample = None
    for key, p, ct in zip(keys, plaintexts, observed):
        expected = aes128_encrypt(key, p)
        if ct != expected:
            counterexample = Counterexample(user_key=key.hex(), plaintext=p.hex(), expected=expected.hex(), observed=ct.hex())
            break
    report = StealthReport(
        self_test_pass=run_self_test(target, spec, netlist),
        trials=trials,
        decryptable=decryptable,
        degenerate_key=any(k == spec.k_st for k in keys),
        counterexample=counterexample,
    )
    logger.info(f"self-test {'PASS' if report.self_test_pass else 'FAIL'}, {decryptable}/{trials} decryptable under k_st")
    return report


# --- Bitstream-level bridge ---

def fabric_view(netlist: Netlist) -> Netlist:
    """The part of a design that lives in the configuration frames: slices and slice-to-slice nets."""
    instances = netlist.instance_map()

    def is_slice(pin) -> bool:
        return instances[pin[0]].site_kind is SiteKind.SLICE

    nets = []
    for net in netlist.nets:
        inpins = [p for p in net.inpins if is_slice(p)]
        if net.outpin and is_slice(net.outpin) and inpins:
            nets.append(Net(name=net.name, outpin=net.outpin, inpins=inpins))
    slices = [i for i in netlist.instances if i.site_kind is SiteKind.SLICE]
    return Netlist(design_name=netlist.design_name, device_id=netlist.device_id, instances=slices, nets=nets)


def graft_shell(recovered: Netlist, original: Netlist, fabric: Fabric) -> Netlist:
    """Reattach the IO shell (pads and blackboxes) of the original design to a recovered netlist.

    The shell is not in the frames but is known to the attacker; its
    connections are matched to recovered slice pins by placement.
    """
    instances = original.instance_map()
    site_of: dict[str, str] = {}
    for inst in original.instances:
        if inst.site_kind is SiteKind.SLICE and inst.placement is not None:
            site_of[inst.name] = fabric.site_name(*fabric.parse_site(inst.placement.tile, inst.placement.site))

    def mapped(pin):
        if instances[pin[0]].site_kind is SiteKind.SLICE:
            return site_of[pin[0]], pin[1]
        return pin

    nets = {n.name: n.model_copy(update={"inpins": list(n.inpins)}) for n in recovered.nets}
    driven = {n.outpin: n.name for n in recovered.nets if n.outpin}
    loaded = {p: n.name for n in recovered.nets for p in n.inpins}
    order = [n.name for n in recovered.nets]
    for net in original.nets:
        pins = ([net.outpin] if net.outpin else []) + list(net.inpins)
        if all(instances[i].site_kind is SiteKind.SLICE for i, _ in pins):
            continue
        outpin = mapped(net.outpin) if net.outpin else None
        inpins = [mapped(p) for p in net.inpins]
        host = driven.get(outpin)
        if host is None:
            host = next((loaded[p] for p in inpins if p in loaded), None)
        if host is None:
            name = net.name if net.name not in nets else f"shell_{net.name}"
            nets[name] = Net(name=name, outpin=outpin, inpins=inpins)
            order.append(name)
            continue
        joined = nets[host]
        if outpin is not None and joined.outpin not in (None, outpin):
            raise ConversionError(f"net {net.name}: shell driver conflicts with recovered net {host}")
        joined.outpin = outpin or joined.outpin
        joined.inpins = joined.inpins + [p for p in inpins if p not in joined.inpins]
    shell = [i for i in original.instances if i.site_kind is not SiteKind.SLICE]
    return Netlist(
        design_name=recovered.design_name,
        device_id=recovered.device_id,
        instances=list(recovered.instances) + shell,
        nets=[nets[name] for name in order],
    )


def bitstream_bridge(fabric: Fabric, toolchain, db, netlist: Netlist) -> Netlist:
    """Route, encode and re-convert a design, then graft its IO shell back on.

    The result is what an attacker would simulate after loading the bitstream
    into the toolkit.
    """
    routed = route_design(fabric, fabric_view(netlist))
    bitstream = toolchain.bitgen(routed)
    reference = toolchain.bitgen(empty_netlist(fabric.device_id), force=True)
    result = convert(bitstream, reference, db, fabric.public())
    for d in result.diagnostics:
        logger.warning(str(d))
    return graft_shell(result.netlist, netlist, fabric)
