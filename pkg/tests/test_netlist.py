import numpy as np
import pytest

from bitrev.exceptions import NetlistSyntaxError, NetlistValidationError
from bitrev.modules.netlist import (
    CellRef,
    SiteKind,
    TruthTable,
    canonicalize,
    parse_netlist,
    parse_slice_pin,
    pip_set,
    validate_netlist,
    write_netlist,
)
from bitrev.modules.selfcheck import random_netlist

DESIGN = """\
# two slices and a pad
design "demo" xbr6-tiny v1 ;
inst "a" "SLICE" , placed CLB_X0Y0 SLICE_X0Y0 , cfg "LUT0:6 FF1:1" ;
inst "b" "SLICE" , placed CLB_X1Y0 SLICE_X1Y0 ;
inst "pad" "IOB" , unplaced ;
net "n0" , outpin "a" L0_O , inpin "b" L1_I0 , pip INT_X0Y0 W0 -> S6 ;
net "n1" , outpin "pad" O , inpin "a" L0_I1 ;
"""


def test_parse_design():
    netlist = parse_netlist(DESIGN)
    assert netlist.design_name == "demo"
    assert netlist.device_id == "xbr6-tiny"
    a = netlist.instance_map()["a"]
    assert a.lut_configs[0] == TruthTable.from_function(2, lambda x, y: x ^ y)
    assert a.ff_configs[1].init_value == 1
    assert netlist.instance_map()["pad"].placement is None
    assert netlist.instance_map()["pad"].site_kind is SiteKind.IOB
    assert netlist.net_map()["n0"].pips == [("INT_X0Y0", "W0", "S6")]


def test_written_text_parses_back():
    netlist = parse_netlist(DESIGN)
    text = write_netlist(netlist)
    assert canonicalize(parse_netlist(text)) == canonicalize(netlist)
    assert write_netlist(parse_netlist(text)) == text


@pytest.mark.parametrize("text, line, column", [
    ('design "d" dev ;\ninst "a" "SLICE" , placed X ;\n', 2, 29),
    ('design "d" dev ;\nnet "n" , outpin "ghost" L0_O ;\n', 2, 18),
    ('design "d" dev ;\ninst "a" "LATCH" , unplaced ;\n', 2, 10),
    ('design "d" dev ;\ninst "a" "SLICE" , unplaced , cfg "LUT0:zz" ;\n', 2, 35),
    ('design "d dev ;\n', 1, 8),
])
def test_syntax_errors_carry_position(text, line, column):
    with pytest.raises(NetlistSyntaxError) as err:
        parse_netlist(text)
    assert (err.value.line, err.value.column) == (line, column)


def test_two_drivers_on_one_sink_are_rejected():
    text = DESIGN.replace('inpin "a" L0_I1 ;', 'inpin "a" L0_I1 , pip INT_X0Y0 W4 -> S6 ;')
    with pytest.raises(NetlistValidationError, match="driven by two PIPs"):
        parse_netlist(text)


def test_validate_against_fabric(tiny):
    validate_netlist(parse_netlist(DESIGN), tiny)
    bad_pip = DESIGN.replace("W0 -> S6", "W0 -> S99")
    with pytest.raises(NetlistValidationError, match="no PIP"):
        validate_netlist(parse_netlist(bad_pip), tiny)
    bad_site = DESIGN.replace("CLB_X1Y0 SLICE_X1Y0", "CLB_X1Y0 SLICE_X0Y0")
    with pytest.raises(NetlistValidationError):
        validate_netlist(parse_netlist(bad_site), tiny)
    bad_pin = DESIGN.replace("L1_I0", "L1_I7")
    with pytest.raises(NetlistValidationError, match="no pin"):
        validate_netlist(parse_netlist(bad_pin), tiny)


def test_truth_tables():
    table = TruthTable.from_hex("aaaa")
    assert table.arity == 4
    assert table.identity_input() == 0
    assert TruthTable.identity(4, 2).identity_input() == 2
    assert TruthTable.constant(4, 1).to_hex() == "ffff"
    assert TruthTable.constant(4, 1).constant_value() == 1
    assert table.constant_value() is None
    with pytest.raises(ValueError):
        TruthTable.from_hex("abc")


def test_slice_pins():
    assert parse_slice_pin("L1_I3") == ("LUT", 1, "I3", True)
    assert parse_slice_pin("F0_Q") == ("FF", 0, "Q", False)
    assert parse_slice_pin("O") is None
    assert str(CellRef("SLICE_X0Y0", "LUT", 1)) == "SLICE_X0Y0/LUT1"


def test_random_designs_survive_the_text_format(tiny):
    rng = np.random.default_rng(21)
    for k in range(100):
        design = random_netlist(tiny, rng, n_slices=int(rng.integers(1, 8)), n_pips=int(rng.integers(1, 20)),
                                design_name=f"d{k}")
        text = write_netlist(design)
        parsed = parse_netlist(text)
        assert canonicalize(parsed) == canonicalize(design)
        assert write_netlist(parsed) == text
        assert pip_set(parsed) == pip_set(design)
