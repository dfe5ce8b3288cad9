"""Placed-and-routed design model and its XDL-like text format.

    design "<name>" <device> [<version>] ;
    inst "<name>" "<kind>" , placed <tile> <site> [, cfg "<entries>"]* ;
    inst "<name>" "<kind>" , unplaced [, cfg "<entries>"]* ;
    net "<name>" [, outpin "<inst>" <pin>] [, inpin "<inst>" <pin>]* [, pip <tile> <src> -> <sink>]* ;

cfg entries are whitespace separated: `LUT<i>:<hex>` (truth table, most
significant nibble first), `FF<j>:<init>` (used flip-flop with its init value)
and `MODEL:<name>` (behavioural model of a BLACKBOX). `#` starts a comment.
"""

from __future__ import annotations

import re
from enum import Enum
from typing import Callable, NamedTuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from bitrev.exceptions import FabricError, NetlistSyntaxError, NetlistValidationError

PinRef = tuple[str, str]
PipRef = tuple[str, str, str]

_SLICE_PIN_RE = re.compile(r"^(?:L(\d+)_(?:I(\d+)|(O))|F(\d+)_(Q|D))$")


class SiteKind(str, Enum):
    SLICE = "SLICE"
    IOB = "IOB"
    BLACKBOX = "BLACKBOX"


class CellRef(NamedTuple):
    """A LUT or FF inside a slice instance."""

    instance: str
    kind: str  # "LUT" | "FF"
    index: int

    def __str__(self) -> str:
        return f"{self.instance}/{self.kind}{self.index}"


class SlicePin(NamedTuple):
    cell: str  # "LUT" | "FF"
    index: int
    port: str  # "I<k>", "O", "Q", "D"
    is_input: bool


def parse_slice_pin(pin: str) -> SlicePin | None:
    m = _SLICE_PIN_RE.match(pin)
    if m is None:
        return None
    if m.group(1) is not None:
        if m.group(3):
            return SlicePin("LUT", int(m.group(1)), "O", False)
        return SlicePin("LUT", int(m.group(1)), f"I{m.group(2)}", True)
    port = m.group(5)
    return SlicePin("FF", int(m.group(4)), port, port == "D")


class TruthTable(BaseModel):
    """LUT contents; bits[i] is the output for input vector i (input k is bit k of i)."""

    model_config = ConfigDict(frozen=True)

    arity: int = Field(..., ge=0, le=6)
    bits: tuple[int, ...]

    @model_validator(mode="after")
    def _check_bits(self):
        if len(self.bits) != 2 ** self.arity:
            raise ValueError(f"a {self.arity}-input table needs {2 ** self.arity} bits, got {len(self.bits)}")
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("truth-table bits must be 0 or 1")
        return self

    @classmethod
    def from_int(cls, arity: int, value: int) -> TruthTable:
        return cls(arity=arity, bits=tuple((value >> i) & 1 for i in range(2 ** arity)))

    @classmethod
    def from_hex(cls, text: str, arity: int | None = None) -> TruthTable:
        """Parse a hex table; without an explicit arity it follows from the digit count."""
        if arity is None:
            n_bits = 4 * len(text)
            arity = n_bits.bit_length() - 1
            if n_bits != 2 ** arity or arity < 2:
                raise ValueError(f"hex table {text!r} does not have a power-of-two bit count")
        value = int(text, 16)
        if value >> (2 ** arity):
            raise ValueError(f"hex table {text!r} too wide for {arity} inputs")
        return cls.from_int(arity, value)

    @classmethod
    def constant(cls, arity: int, value: int) -> TruthTable:
        return cls(arity=arity, bits=(value & 1,) * (2 ** arity))

    @classmethod
    def identity(cls, arity: int, input_index: int = 0) -> TruthTable:
        return cls(arity=arity, bits=tuple((i >> input_index) & 1 for i in range(2 ** arity)))

    @classmethod
    def from_function(cls, arity: int, fn: Callable[..., int]) -> TruthTable:
        return cls(
            arity=arity,
            bits=tuple(fn(*((i >> k) & 1 for k in range(arity))) & 1 for i in range(2 ** arity)),
        )

    @property
    def value(self) -> int:
        return sum(b << i for i, b in enumerate(self.bits))

    def to_hex(self) -> str:
        return f"{self.value:0{max(1, 2 ** self.arity // 4)}x}"

    def identity_input(self) -> int | None:
        """Input index this table passes through unchanged, if any."""
        for k in range(self.arity):
            if all(b == (i >> k) & 1 for i, b in enumerate(self.bits)):
                return k
        return None

    def constant_value(self) -> int | None:
        return self.bits[0] if len(set(self.bits)) == 1 else None


class FFConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    used: bool = True
    init_value: int = Field(0, ge=0, le=1)


class Placement(BaseModel):
    model_config = ConfigDict(frozen=True)

    tile: str
    site: str


class Instance(BaseModel):
    name: str
    site_kind: SiteKind
    placement: Placement | None = None
    lut_configs: dict[int, TruthTable] = {}
    ff_configs: dict[int, FFConfig] = {}
    model: str | None = None


class Net(BaseModel):
    name: str
    outpin: PinRef | None = None
    inpins: list[PinRef] = []
    pips: list[PipRef] = []


class Netlist(BaseModel):
    design_name: str
    device_id: str
    instances: list[Instance] = []
    nets: list[Net] = []

    @model_validator(mode="after")
    def _check_structure(self):
        names = [i.name for i in self.instances]
        if len(set(names)) != len(names):
            raise ValueError("instance names must be unique")
        net_names = [n.name for n in self.nets]
        if len(set(net_names)) != len(net_names):
            raise ValueError("net names must be unique")
        known = set(names)
        driven: set[PinRef] = set()
        loaded: set[PinRef] = set()
        sinks: set[tuple[str, str]] = set()
        for net in self.nets:
            pins = ([net.outpin] if net.outpin else []) + list(net.inpins)
            for inst, pin in pins:
                if inst not in known:
                    raise ValueError(f"net {net.name} references unknown instance {inst}")
            if net.outpin:
                if net.outpin in driven:
                    raise ValueError(f"pin {net.outpin} drives more than one net")
                driven.add(net.outpin)
            for pin in net.inpins:
                if pin in loaded:
                    raise ValueError(f"input pin {pin} is connected to more than one net")
                loaded.add(pin)
            for tile, _, sink in net.pips:
                if (tile, sink) in sinks:
                    raise ValueError(f"sink {sink} of {tile} is driven by two PIPs")
                sinks.add((tile, sink))
        return self

    def instance_map(self) -> dict[str, Instance]:
        return {i.name: i for i in self.instances}

    def net_map(self) -> dict[str, Net]:
        return {n.name: n for n in self.nets}


def empty_netlist(device_id: str, design_name: str = "empty") -> Netlist:
    return Netlist(design_name=design_name, device_id=device_id)


def pip_set(netlist: Netlist) -> set[PipRef]:
    return {tuple(p) for net in netlist.nets for p in net.pips}


def canonicalize(netlist: Netlist) -> Netlist:
    """Sorted copy with unused FF configurations dropped; equal designs compare equal."""
    instances = [
        inst.model_copy(update={
            "lut_configs": dict(sorted(inst.lut_configs.items())),
            "ff_configs": {j: c for j, c in sorted(inst.ff_configs.items()) if c.used},
        })
        for inst in sorted(netlist.instances, key=lambda i: i.name)
    ]
    nets = [
        net.model_copy(update={"inpins": sorted(net.inpins), "pips": sorted(net.pips)})
        for net in sorted(netlist.nets, key=lambda n: n.name)
    ]
    return netlist.model_copy(update={"instances": instances, "nets": nets})


# --- Parser ---

_TOKEN_RE = re.compile(
    r"""
    (?P<nl>\n)
    |(?P<ws>[ \t\r]+)
    |(?P<comment>\#[^\n]*)
    |(?P<string>"[^"\n]*")
    |(?P<arrow>->)
    |(?P<comma>,)
    |(?P<semi>;)
    |(?P<word>(?:[^\s,;"\-]|-(?!>))+)
    |(?P<bad>.)
    """,
    re.VERBOSE,
)

_LUT_CFG_RE = re.compile(r"^LUT(\d+):([0-9a-fA-F]+)$")
_FF_CFG_RE = re.compile(r"^FF(\d+):([01])$")
_MODEL_CFG_RE = re.compile(r"^MODEL:(\w+)$")


class _Token(NamedTuple):
    kind: str
    text: str
    line: int
    column: int


def _tokenize(text: str) -> list[_Token]:
    tokens, line, line_start = [], 1, 0
    for m in _TOKEN_RE.finditer(text):
        kind = m.lastgroup
        column = m.start() - line_start + 1
        if kind == "nl":
            line += 1
            line_start = m.end()
            continue
        if kind in ("ws", "comment"):
            continue
        if kind == "bad":
            what = "unterminated string" if m.group() == '"' else f"unexpected character {m.group()!r}"
            raise NetlistSyntaxError(what, line, column)
        value = m.group()[1:-1] if kind == "string" else m.group()
        tokens.append(_Token(kind, value, line, column))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.pin_refs: list[tuple[str, _Token]] = []

    def _error(self, message: str, token: _Token | None = None):
        token = token or self._peek()
        if token is None:
            last = self.tokens[-1] if self.tokens else _Token("eof", "", 1, 1)
            raise NetlistSyntaxError(f"{message} (at end of input)", last.line, last.column + len(last.text))
        raise NetlistSyntaxError(f"{message}, found {token.text!r}", token.line, token.column)

    def _peek(self) -> _Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _next(self, kind: str, text: str | None = None) -> _Token:
        token = self._peek()
        if token is None or token.kind != kind or (text is not None and token.text != text):
            self._error(f"expected {text or kind}")
        self.pos += 1
        return token

    def _at(self, kind: str, text: str | None = None) -> bool:
        token = self._peek()
        return token is not None and token.kind == kind and (text is None or token.text == text)

    def parse(self) -> Netlist:
        self._next("word", "design")
        name = self._next("string").text
        device = self._next("word").text
        if self._at("word"):
            self.pos += 1  # tool version, ignored
        self._next("semi")
        instances, nets = [], []
        while self._peek() is not None:
            if self._at("word", "inst"):
                instances.append(self._instance())
            elif self._at("word", "net"):
                nets.append(self._net())
            else:
                self._error("expected 'inst' or 'net'")
        declared = {i.name for i in instances}
        for inst, token in self.pin_refs:
            if inst not in declared:
                raise NetlistSyntaxError(f"reference to undeclared instance {inst!r}", token.line, token.column)
        try:
            return Netlist(design_name=name, device_id=device, instances=instances, nets=nets)
        except ValidationError as e:
            raise NetlistValidationError(str(e)) from e

    def _instance(self) -> Instance:
        self._next("word", "inst")
        name = self._next("string").text
        kind_token = self._next("string")
        try:
            kind = SiteKind(kind_token.text)
        except ValueError:
            self._error("expected site kind SLICE, IOB or BLACKBOX", kind_token)
        self._next("comma")
        placement = None
        if self._at("word", "placed"):
            self.pos += 1
            placement = Placement(tile=self._next("word").text, site=self._next("word").text)
        else:
            self._next("word", "unplaced")
        luts, ffs, model = {}, {}, None
        while self._at("comma"):
            self.pos += 1
            self._next("word", "cfg")
            cfg = self._next("string")
            for entry in cfg.text.split():
                if m := _LUT_CFG_RE.match(entry):
                    try:
                        luts[int(m.group(1))] = TruthTable.from_hex(m.group(2))
                    except ValueError as e:
                        raise NetlistSyntaxError(str(e), cfg.line, cfg.column) from e
                elif m := _FF_CFG_RE.match(entry):
                    ffs[int(m.group(1))] = FFConfig(used=True, init_value=int(m.group(2)))
                elif m := _MODEL_CFG_RE.match(entry):
                    model = m.group(1)
                else:
                    raise NetlistSyntaxError(f"unknown cfg entry {entry!r}", cfg.line, cfg.column)
        self._next("semi")
        return Instance(name=name, site_kind=kind, placement=placement,
                        lut_configs=luts, ff_configs=ffs, model=model)

    def _pin(self) -> PinRef:
        token = self._next("string")
        self.pin_refs.append((token.text, token))
        return token.text, self._next("word").text

    def _net(self) -> Net:
        self._next("word", "net")
        name = self._next("string").text
        outpin, inpins, pips = None, [], []
        while self._at("comma"):
            self.pos += 1
            token = self._next("word")
            if token.text == "outpin":
                if outpin is not None:
                    self._error("second outpin in net", token)
                outpin = self._pin()
            elif token.text == "inpin":
                inpins.append(self._pin())
            elif token.text == "pip":
                tile = self._next("word").text
                src = self._next("word").text
                self._next("arrow")
                pips.append((tile, src, self._next("word").text))
            else:
                self._error("expected outpin, inpin or pip", token)
        self._next("semi")
        return Net(name=name, outpin=outpin, inpins=inpins, pips=pips)


def parse_netlist(text: str) -> Netlist:
    return _Parser(text).parse()


# --- Writer ---

def _cfg_entries(inst: Instance) -> list[str]:
    entries = [f"LUT{i}:{t.to_hex()}" for i, t in sorted(inst.lut_configs.items())]
    entries += [f"FF{j}:{c.init_value}" for j, c in sorted(inst.ff_configs.items()) if c.used]
    if inst.model:
        entries.append(f"MODEL:{inst.model}")
    return entries


def write_netlist(netlist: Netlist) -> str:
    """Render a netlist in canonical order: instances, then nets, each sorted by name."""
    netlist = canonicalize(netlist)
    lines = [f'design "{netlist.design_name}" {netlist.device_id} ;', ""]
    for inst in netlist.instances:
        where = f"placed {inst.placement.tile} {inst.placement.site}" if inst.placement else "unplaced"
        line = f'inst "{inst.name}" "{inst.site_kind.value}" , {where}'
        entries = _cfg_entries(inst)
        if entries:
            line += f' , cfg "{" ".join(entries)}"'
        lines.append(line + " ;")
    for net in netlist.nets:
        parts = [f'net "{net.name}"']
        if net.outpin:
            parts.append(f'  outpin "{net.outpin[0]}" {net.outpin[1]}')
        parts += [f'  inpin "{inst}" {pin}' for inst, pin in net.inpins]
        parts += [f"  pip {tile} {src} -> {sink}" for tile, src, sink in net.pips]
        lines.append(" ,\n".join(parts) + " ;")
    return "\n".join(lines) + "\n"


# --- Fabric checks ---

def validate_netlist(netlist: Netlist, fabric) -> None:
    """Check placements, pins and PIP names of a netlist against a fabric."""
    if netlist.device_id != fabric.device_id:
        raise NetlistValidationError(f"netlist targets {netlist.device_id}, fabric is {fabric.device_id}")
    occupied: dict[tuple, str] = {}
    instances = netlist.instance_map()
    for inst in netlist.instances:
        if inst.site_kind is not SiteKind.SLICE or inst.placement is None:
            continue
        try:
            coord, s = fabric.parse_site(inst.placement.tile, inst.placement.site)
        except FabricError as e:
            raise NetlistValidationError(f"instance {inst.name}: {e}") from e
        if (coord, s) in occupied:
            raise NetlistValidationError(
                f"instances {occupied[(coord, s)]} and {inst.name} share site {inst.placement.site}"
            )
        occupied[(coord, s)] = inst.name
        site = fabric.slice_sites[s]
        for lut, table in inst.lut_configs.items():
            if not 0 <= lut < site.lut_count or table.arity != site.lut_arity:
                raise NetlistValidationError(f"instance {inst.name}: LUT{lut} does not fit the site")
        for ff in inst.ff_configs:
            if not 0 <= ff < site.ff_count:
                raise NetlistValidationError(f"instance {inst.name}: no FF{ff} on the site")
    for net in netlist.nets:
        pins = ([net.outpin] if net.outpin else []) + list(net.inpins)
        for inst_name, pin in pins:
            inst = instances[inst_name]
            if inst.site_kind is not SiteKind.SLICE:
                continue
            site = fabric.slice_sites[0]
            if inst.placement is not None:
                site = fabric.slice_sites[fabric.parse_site(inst.placement.tile, inst.placement.site)[1]]
            if pin not in site.output_pins() and pin not in site.input_pins():
                raise NetlistValidationError(f"net {net.name}: {inst_name} has no pin {pin}")
        for tile, src, sink in net.pips:
            try:
                coord = fabric.parse_sm_tile(tile)
            except FabricError as e:
                raise NetlistValidationError(f"net {net.name}: {e}") from e
            if not fabric.has_pip(coord, (src, sink)):
                raise NetlistValidationError(f"net {net.name}: no PIP {src} -> {sink} in {tile}")
