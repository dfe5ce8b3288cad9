"""Mock vendor toolchain: encodes netlists with the hidden EncodingMap.

It reproduces the behaviour that black-box reversing relies on: a net's PIPs
are encoded only when the net names an outpin and at least one inpin on
placed instances, whether or not the PIPs actually connect them (force mode
skips the routing check), and default PIPs toggle no bit at all.
"""

from __future__ import annotations

import logging
import threading
from collections import deque

import numpy as np

from bitrev.exceptions import FabricError, NetlistValidationError, ToolchainError
from bitrev.modules.bitstream import Bitstream
from bitrev.modules.fabric import Fabric
from bitrev.modules.netlist import Net, Netlist, SiteKind, validate_netlist

logger = logging.getLogger("bitrev.bitgen")


class MockToolchain:
    """Thread-safe bitgen front end that counts its invocations."""

    def __init__(self, fabric: Fabric):
        self.fabric = fabric
        self.encoding = fabric.ground_truth()
        self._lock = threading.Lock()
        self._invocations = 0

    @property
    def invocations(self) -> int:
        return self._invocations

    @property
    def device_id(self) -> str:
        return self.fabric.device_id

    def reset_counter(self) -> None:
        with self._lock:
            self._invocations = 0

    def bitgen(self, netlist: Netlist, force: bool = False) -> Bitstream:
        with self._lock:
            self._invocations += 1
        if netlist.device_id != self.fabric.device_id:
            raise ToolchainError(f"netlist targets {netlist.device_id}, toolchain serves {self.fabric.device_id}")
        if not force:
            try:
                validate_netlist(netlist, self.fabric)
            except NetlistValidationError as e:
                raise ToolchainError(f"design rejected: {e}") from e
            check_routing(self.fabric, netlist)
        positions = self._collect(netlist)
        frames = np.zeros(self.encoding.frame_bits // 8, dtype=np.uint8)
        if positions:
            pos = np.asarray(positions, dtype=np.int64)
            np.bitwise_or.at(frames, pos >> 3, np.left_shift(1, pos & 7).astype(np.uint8))
        return Bitstream(device_id=self.fabric.device_id, frames=frames.tobytes())

    def _collect(self, netlist: Netlist) -> list[int]:
        fabric, enc = self.fabric, self.encoding
        positions: list[int] = []
        instances = netlist.instance_map()
        for inst in netlist.instances:
            if inst.site_kind is not SiteKind.SLICE or inst.placement is None:
                continue
            try:
                coord, s = fabric.parse_site(inst.placement.tile, inst.placement.site)
                positions.append(enc.slice_bit(coord, s))
                for lut, table in inst.lut_configs.items():
                    bits = enc.lut_bits(coord, s, lut)
                    if len(bits) != len(table.bits):
                        raise ToolchainError(f"instance {inst.name}: LUT{lut} arity does not match the site")
                    positions.extend(b for b, v in zip(bits, table.bits) if v)
                for ff, cfg in inst.ff_configs.items():
                    if cfg.used:
                        positions.append(enc.ff_bit(coord, s, ff))
            except FabricError as e:
                raise ToolchainError(f"instance {inst.name}: {e}") from e
        for net in netlist.nets:
            eligible = _is_eligible(net, instances)
            for tile, src, sink in net.pips:
                try:
                    coord = fabric.parse_sm_tile(tile)
                    bits = enc.pip_bits(coord, (src, sink))
                except FabricError as e:
                    raise ToolchainError(f"net {net.name}: {e}") from e
                if eligible:
                    positions.extend(bits)
        return positions


def _is_eligible(net: Net, instances) -> bool:
    if net.outpin is None or not net.inpins:
        return False
    pins = [net.outpin] + list(net.inpins)
    return all(instances[inst].placement is not None for inst, _ in pins)


def check_routing(fabric: Fabric, netlist: Netlist) -> None:
    """Require every net between slice pins to be routed from its source to all its sinks."""
    instances = netlist.instance_map()
    for net in netlist.nets:
        if net.outpin is None or not net.inpins:
            continue
        pins = [net.outpin] + list(net.inpins)
        if any(instances[i].site_kind is not SiteKind.SLICE for i, _ in pins):
            continue  # boundary net, its shell side is outside the frames
        source = _pin_wire(fabric, instances[net.outpin[0]], net.outpin[1], output=True)
        edges: dict[tuple, list[tuple]] = {}
        for tile, src, sink in net.pips:
            coord = fabric.parse_sm_tile(tile)
            edges.setdefault((coord, src), []).append((coord, sink))
        reached = {source}
        queue = deque([source])
        while queue:
            coord, wire = queue.popleft()
            nxt = list(edges.get((coord, wire), []))
            if wire.startswith("S"):
                target = fabric.wire_target(coord, wire)
                if target is not None:
                    nxt.append(target)
            for node in nxt:
                if node not in reached:
                    reached.add(node)
                    queue.append(node)
        for inst, pin in net.inpins:
            if _pin_wire(fabric, instances[inst], pin, output=False) not in reached:
                raise ToolchainError(f"design rejected: net {net.name} does not reach {inst}.{pin}")


def _pin_wire(fabric: Fabric, inst, pin: str, output: bool) -> tuple:
    if inst.placement is None:
        raise ToolchainError(f"design rejected: instance {inst.name} is unplaced")
    coord, s = fabric.parse_site(inst.placement.tile, inst.placement.site)
    wire = fabric.source_wire_of_pin(s, pin) if output else fabric.sink_wire_of_pin(s, pin)
    if wire is None:
        raise ToolchainError(f"design rejected: {inst.name} has no {'output' if output else 'input'} pin {pin}")
    return coord, wire


def bitgen(fabric: Fabric, netlist: Netlist, force: bool = False) -> Bitstream:
    return MockToolchain(fabric).bitgen(netlist, force=force)
