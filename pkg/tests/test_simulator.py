import logging

import numpy as np
import pytest

from bitrev.exceptions import CombinationalLoopError, SimulationError
from bitrev.modules.netlist import CellRef, FFConfig, Instance, Net, Netlist, SiteKind, TruthTable
from bitrev.modules.simulator import Simulator, simulate


def _pad(name):
    return Instance(name=name, site_kind=SiteKind.IOB)


def _design(instances, nets):
    return Netlist(design_name="sim", device_id="dev", instances=instances, nets=nets)


def test_constant_lut_into_ff():
    s = Instance(name="s", site_kind=SiteKind.SLICE,
                 lut_configs={0: TruthTable.constant(2, 1)}, ff_configs={0: FFConfig(init_value=0)})
    nets = [
        Net(name="d", outpin=("s", "L0_O"), inpins=[("s", "F0_D")]),
        Net(name="q", outpin=("s", "F0_Q"), inpins=[("out", "I")]),
    ]
    trace = simulate(_design([s, _pad("out")], nets), [], cycles=3)
    assert [int(t["out"][0]) for t in trace] == [0, 1, 1]


def test_sixteen_stage_delay_line():
    stages = [Instance(name=f"r{i}", site_kind=SiteKind.SLICE, ff_configs={0: FFConfig()}) for i in range(16)]
    nets = [Net(name="din", outpin=("in", "O"), inpins=[("r0", "F0_D")])]
    for i in range(15):
        nets.append(Net(name=f"q{i}", outpin=(f"r{i}", "F0_Q"), inpins=[(f"r{i + 1}", "F0_D")]))
    nets.append(Net(name="q15", outpin=("r15", "F0_Q"), inpins=[("out", "I")]))
    trace = simulate(_design(stages + [_pad("in"), _pad("out")], nets), [{"in": 1}], cycles=20)
    assert [t for t in range(20) if trace[t]["out"][0]] == [16]


def test_lanes_are_independent():
    lut = Instance(name="x", site_kind=SiteKind.SLICE, lut_configs={0: TruthTable.from_hex("6")})
    nets = [
        Net(name="a", outpin=("a", "O"), inpins=[("x", "L0_I0")]),
        Net(name="b", outpin=("b", "O"), inpins=[("x", "L0_I1")]),
        Net(name="y", outpin=("x", "L0_O"), inpins=[("y", "I")]),
    ]
    design = _design([lut, _pad("a"), _pad("b"), _pad("y")], nets)
    a = np.array([0, 1, 0, 1], dtype=np.uint8)
    b = np.array([0, 0, 1, 1], dtype=np.uint8)
    trace = simulate(design, [{"a": a, "b": b}], lanes=4)
    assert trace[0]["y"].tolist() == [0, 1, 1, 0]


def test_per_lane_overrides():
    lut = Instance(name="x", site_kind=SiteKind.SLICE, lut_configs={0: TruthTable.identity(2)})
    nets = [
        Net(name="a", outpin=("a", "O"), inpins=[("x", "L0_I0")]),
        Net(name="y", outpin=("x", "L0_O"), inpins=[("y", "I")]),
    ]
    design = _design([lut, _pad("a"), _pad("y")], nets)
    tables = np.array([TruthTable.identity(2).bits, TruthTable.constant(2, 0).bits], dtype=np.uint8)
    trace = Simulator(design, lut_overrides={CellRef("x", "LUT", 0): tables}).run([{"a": 1}], lanes=2)
    assert trace[0]["y"].tolist() == [1, 0]
    with pytest.raises(SimulationError):
        Simulator(design, lut_overrides={CellRef("x", "LUT", 0): tables}).run([{"a": 1}], lanes=3)
    with pytest.raises(SimulationError):
        Simulator(design, lut_overrides={CellRef("x", "LUT", 1): tables})


def test_combinational_loop_is_reported():
    ring = Instance(name="ring", site_kind=SiteKind.SLICE,
                    lut_configs={0: TruthTable.identity(2), 1: TruthTable.identity(2)})
    nets = [
        Net(name="p", outpin=("ring", "L0_O"), inpins=[("ring", "L1_I0")]),
        Net(name="q", outpin=("ring", "L1_O"), inpins=[("ring", "L0_I0")]),
    ]
    with pytest.raises(CombinationalLoopError) as err:
        Simulator(_design([ring], nets))
    assert set(err.value.cycle) == {"ring/LUT0", "ring/LUT1"}


def test_unknown_pad_and_model():
    design = _design([_pad("a")], [])
    with pytest.raises(SimulationError):
        simulate(design, [{"nope": 1}])
    box = Instance(name="box", site_kind=SiteKind.BLACKBOX, model="sha256")
    with pytest.raises(SimulationError):
        Simulator(_design([box], []))


def test_undriven_net_reads_zero(caplog):
    lut = Instance(name="x", site_kind=SiteKind.SLICE, lut_configs={0: TruthTable.from_hex("5")})
    nets = [
        Net(name="floating", inpins=[("x", "L0_I0")]),
        Net(name="y", outpin=("x", "L0_O"), inpins=[("y", "I")]),
    ]
    with caplog.at_level(logging.WARNING, logger="bitrev.sim"):
        trace = simulate(_design([lut, _pad("y")], nets), [{}])
    assert trace[0]["y"].tolist() == [1]
    assert "floating" in caplog.text


def test_lut_pin_beyond_table_arity():
    lut = Instance(name="x", site_kind=SiteKind.SLICE, lut_configs={0: TruthTable.from_hex("6")})
    nets = [
        Net(name="a", outpin=("a", "O"), inpins=[("x", "L0_I2")]),
        Net(name="y", outpin=("x", "L0_O"), inpins=[("y", "I")]),
    ]
    with pytest.raises(SimulationError, match="I2"):
        Simulator(_design([lut, _pad("a"), _pad("y")], nets))
    narrow = np.array([0, 1], dtype=np.uint8)
    nets[0] = Net(name="a", outpin=("a", "O"), inpins=[("x", "L0_I1")])
    with pytest.raises(SimulationError, match="I1"):
        Simulator(_design([lut, _pad("a"), _pad("y")], nets), lut_overrides={CellRef("x", "LUT", 0): narrow})
