"""Cycle-accurate, lane-parallel simulation of placed netlists.

Every signal is a uint8 array with one entry per lane; lanes are independent
trials sharing one netlist. One cycle:

1. input pads take their stimulus (unassigned pads read 0),
2. FF outputs and registered blackbox outputs drive their nets,
3. LUTs evaluate in topological order,
4. output pads are sampled,
5. blackboxes see their inputs and update their output registers,
6. all FFs clock in their D value.

IOB instances are pads: an IOB pin used as a net's outpin is an input pad, an
IOB pin used as an inpin is an output pad; both are addressed by instance name.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import networkx as nx
import numpy as np

from bitrev.exceptions import CombinationalLoopError, SimulationError
from bitrev.modules.aes import Aes128Core
from bitrev.modules.netlist import CellRef, Netlist, SiteKind, TruthTable, parse_slice_pin

logger = logging.getLogger("bitrev.sim")

DEFAULT_BLACKBOXES = {"aes128": Aes128Core}

LutOverride = TruthTable | np.ndarray


@dataclass
class _Lut:
    cell: CellRef
    table: np.ndarray  # (2**k,) or per lane (lanes, 2**k)
    inputs: list[tuple[int, str]] = field(default_factory=list)
    output: str | None = None


@dataclass
class _FlipFlop:
    cell: CellRef
    init: int
    d: str | None = None
    q: str | None = None


@dataclass
class _Blackbox:
    name: str
    model: object
    inputs: list[str | None]
    outputs: list[tuple[int, str]]


def _as_table(value: LutOverride) -> np.ndarray:
    if isinstance(value, TruthTable):
        return np.asarray(value.bits, dtype=np.uint8)
    return np.asarray(value, dtype=np.uint8)


def _check_inputs(lut: _Lut) -> None:
    arity = lut.table.shape[-1].bit_length() - 1
    wide = [k for k, _ in lut.inputs if k >= arity]
    if wide:
        raise SimulationError(f"{lut.cell} is connected on I{wide[0]} but its table has {arity} inputs")


class Simulator:
    """Compiles a netlist once; `run` can then be called with any stimuli.

    Args:
        netlist: The design. Placement and PIPs are ignored.
        blackboxes: Extra behavioural models by `MODEL:` name.
        lut_overrides: Replacement tables by LUT cell, either a TruthTable or
            a (lanes, 2**k) array giving every lane its own table.
    """

    def __init__(
        self,
        netlist: Netlist,
        blackboxes: Mapping[str, type] | None = None,
        lut_overrides: Mapping[CellRef, LutOverride] | None = None,
    ):
        self.netlist = netlist
        registry = {**DEFAULT_BLACKBOXES, **(blackboxes or {})}
        overrides = dict(lut_overrides or {})

        driven_by = {net.outpin: net.name for net in netlist.nets if net.outpin}
        loaded_by = {pin: net.name for net in netlist.nets for pin in net.inpins}
        for net in netlist.nets:
            if net.inpins and net.outpin is None:
                logger.warning(f"net {net.name} has loads but no driver; they read 0")

        self.input_pads: dict[str, str] = {}
        self.output_pads: dict[str, str] = {}
        luts: dict[CellRef, _Lut] = {}
        self._ffs: list[_FlipFlop] = []
        self._boxes: list[_Blackbox] = []

        pins_of: dict[str, list[tuple[str, bool]]] = {}
        for net in netlist.nets:
            if net.outpin:
                pins_of.setdefault(net.outpin[0], []).append((net.outpin[1], False))
            for inst, pin in net.inpins:
                pins_of.setdefault(inst, []).append((pin, True))

        for inst in netlist.instances:
            pins = pins_of.get(inst.name, [])
            if inst.site_kind is SiteKind.IOB:
                for pin, is_load in pins:
                    if is_load:
                        self.output_pads[inst.name] = loaded_by[(inst.name, pin)]
                    else:
                        self.input_pads[inst.name] = driven_by[(inst.name, pin)]
            elif inst.site_kind is SiteKind.BLACKBOX:
                self._boxes.append(self._compile_blackbox(inst, registry, driven_by, loaded_by))
            else:
                self._compile_slice(inst, pins, driven_by, loaded_by, luts)

        for cell, value in overrides.items():
            if cell not in luts:
                raise SimulationError(f"override for {cell}, which is not a LUT of this netlist")
            luts[cell].table = _as_table(value)
        for lut in luts.values():
            _check_inputs(lut)
        self._luts = self._order(list(luts.values()))
        logger.debug(
            f"compiled {len(self._luts)} LUTs, {len(self._ffs)} FFs, {len(self._boxes)} blackboxes, "
            f"{len(self.input_pads)} input and {len(self.output_pads)} output pads"
        )

    def _compile_blackbox(self, inst, registry, driven_by, loaded_by) -> _Blackbox:
        factory = registry.get(inst.model or "")
        if factory is None:
            raise SimulationError(f"blackbox {inst.name} has no known model (MODEL:{inst.model})")
        model = factory()
        inputs = [loaded_by.get((inst.name, port)) for port in model.input_ports]
        outputs = [
            (i, driven_by[(inst.name, port)])
            for i, port in enumerate(model.output_ports)
            if (inst.name, port) in driven_by
        ]
        return _Blackbox(inst.name, model, inputs, outputs)

    def _compile_slice(self, inst, pins, driven_by, loaded_by, luts) -> None:
        lut_inputs: dict[int, list[tuple[int, str]]] = {i: [] for i in inst.lut_configs}
        lut_outputs: dict[int, str] = {}
        ffs = {j: _FlipFlop(CellRef(inst.name, "FF", j), c.init_value) for j, c in inst.ff_configs.items() if c.used}
        for pin, is_load in pins:
            parsed = parse_slice_pin(pin)
            if parsed is None:
                raise SimulationError(f"{inst.name} has no pin {pin}")
            net = loaded_by[(inst.name, pin)] if is_load else driven_by[(inst.name, pin)]
            if parsed.cell == "LUT":
                lut_inputs.setdefault(parsed.index, [])
                if parsed.port == "O":
                    lut_outputs[parsed.index] = net
                else:
                    lut_inputs[parsed.index].append((int(parsed.port[1:]), net))
            else:
                ff = ffs.setdefault(parsed.index, _FlipFlop(CellRef(inst.name, "FF", parsed.index), 0))
                if parsed.port == "D":
                    ff.d = net
                else:
                    ff.q = net
        for i, inputs in lut_inputs.items():
            config = inst.lut_configs.get(i)
            if config is not None:
                table = np.asarray(config.bits, dtype=np.uint8)
            else:
                # unconfigured LUT: all-zero contents
                table = np.zeros(2 ** (max((k for k, _ in inputs), default=-1) + 1), dtype=np.uint8)
            cell = CellRef(inst.name, "LUT", i)
            luts[cell] = _Lut(cell, table, sorted(inputs), lut_outputs.get(i))
        self._ffs.extend(ffs[j] for j in sorted(ffs))

    @staticmethod
    def _order(luts: list[_Lut]) -> list[_Lut]:
        graph = nx.DiGraph()
        by_output = {}
        for i, lut in enumerate(luts):
            graph.add_node(i)
            if lut.output is not None:
                by_output[lut.output] = i
        for i, lut in enumerate(luts):
            for _, net in lut.inputs:
                if net in by_output:
                    graph.add_edge(by_output[net], i)
        try:
            order = list(nx.lexicographical_topological_sort(graph))
        except nx.NetworkXUnfeasible:
            edges = nx.find_cycle(graph)
            cycle = [str(luts[a].cell) for a, _ in edges] + [str(luts[edges[0][0]].cell)]
            raise CombinationalLoopError(cycle) from None
        return [luts[i] for i in order]

    def run(
        self,
        stimuli: Sequence[Mapping[str, int | np.ndarray]],
        cycles: int | None = None,
        lanes: int = 1,
    ) -> list[dict[str, np.ndarray]]:
        """Simulate and return the output pad values of every cycle.

        Args:
            stimuli: Per-cycle pad assignments; a value is an int (all lanes)
                or an array with one entry per lane. Cycles past the end of
                the list see all pads at 0.
            cycles: Number of cycles, default len(stimuli).
            lanes: Number of independent trials.
        """
        cycles = len(stimuli) if cycles is None else cycles
        for lut in self._luts:
            if lut.table.ndim == 2 and lut.table.shape[0] != lanes:
                raise SimulationError(f"per-lane table of {lut.cell} has {lut.table.shape[0]} lanes, not {lanes}")
        zero = np.zeros(lanes, dtype=np.uint8)
        lane_index = np.arange(lanes)
        ff_state = np.zeros((len(self._ffs), lanes), dtype=np.uint8)
        for i, ff in enumerate(self._ffs):
            ff_state[i] = ff.init
        box_state = [np.zeros((len(b.model.output_ports), lanes), dtype=np.uint8) for b in self._boxes]

        trace: list[dict[str, np.ndarray]] = []
        for t in range(cycles):
            assign = stimuli[t] if t < len(stimuli) else {}
            unknown = set(assign) - set(self.input_pads)
            if unknown:
                raise SimulationError(f"cycle {t}: no input pad named {sorted(unknown)[0]}")
            values: dict[str, np.ndarray] = {}
            for pad, net in self.input_pads.items():
                values[net] = np.broadcast_to(np.asarray(assign.get(pad, 0), dtype=np.uint8) & 1, (lanes,))
            for i, ff in enumerate(self._ffs):
                if ff.q is not None:
                    values[ff.q] = ff_state[i]
            for box, state in zip(self._boxes, box_state):
                for port, net in box.outputs:
                    values[net] = state[port]

            for lut in self._luts:
                if lut.output is None:
                    continue
                index = np.zeros(lanes, dtype=np.intp)
                for k, net in lut.inputs:
                    index |= values.get(net, zero).astype(np.intp) << k
                if lut.table.ndim == 1:
                    values[lut.output] = lut.table[index]
                else:
                    values[lut.output] = lut.table[lane_index, index]

            trace.append({pad: values.get(net, zero).copy() for pad, net in self.output_pads.items()})

            for box, state in zip(self._boxes, box_state):
                inputs = np.stack([values.get(net, zero) if net else zero for net in box.inputs])
                box.model.step(inputs, state)
            if self._ffs:
                ff_state = np.stack([values.get(ff.d, zero) if ff.d else zero for ff in self._ffs])
        return trace


def simulate(
    netlist: Netlist,
    stimuli: Sequence[Mapping[str, int | np.ndarray]],
    cycles: int | None = None,
    lanes: int = 1,
    blackboxes: Mapping[str, type] | None = None,
    lut_overrides: Mapping[CellRef, LutOverride] | None = None,
) -> list[dict[str, np.ndarray]]:
    return Simulator(netlist, blackboxes, lut_overrides).run(stimuli, cycles, lanes)
