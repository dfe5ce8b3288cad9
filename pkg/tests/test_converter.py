import numpy as np
import pytest

from bitrev.exceptions import ConversionError
from bitrev.models import DiagnosticTag
from bitrev.modules.bitstream import Bitstream
from bitrev.modules.converter import convert, extract_pips, reconstruct_nets
from bitrev.modules.database import EncodingDatabase, TypeEntry, distance_vector
from bitrev.modules.netlist import Instance, Net, Netlist, Placement, SiteKind, TruthTable
from bitrev.modules.router import route_design
from bitrev.modules.selfcheck import random_netlist, roundtrip_mismatches

SM = (0, 0)
A, B, C, D = ("W0", "S0"), ("W1", "S0"), ("W2", "S0"), ("W3", "S0")


@pytest.fixture
def handmade_db():
    """One switch matrix, four PIPs on one sink: B is a superset of A, D overlaps A."""
    positions = {A: (0, 1), B: (0, 1, 2), C: (3, 4), D: (0, 5)}
    reference = positions[A]
    entry = TypeEntry(
        reference_pip=A,
        distances={pip: distance_vector(pos, reference) for pip, pos in positions.items()},
    )
    return EncodingDatabase(device_id="hand", frame_bits=16, sm_types={SM: 0}, types={0: entry},
                            references={SM: reference})


def test_superset_pip_wins(handmade_db):
    pips, diagnostics = extract_pips([0, 1, 2], handmade_db)
    assert pips == [(SM, *B)]
    assert diagnostics == []


def test_subset_pip_alone(handmade_db):
    pips, diagnostics = extract_pips([0, 1], handmade_db)
    assert pips == [(SM, *A)]
    assert diagnostics == []


def test_equal_candidates_are_ambiguous(handmade_db):
    pips, diagnostics = extract_pips([0, 1, 5], handmade_db)
    assert pips == []
    assert [d.tag for d in diagnostics][0] is DiagnosticTag.AMBIGUOUS_PIP
    assert diagnostics[0].position == 0


def test_unowned_and_partial_bits(handmade_db):
    pips, diagnostics = extract_pips([3, 4, 9], handmade_db)
    assert pips == [(SM, *C)]
    assert [(d.tag, d.position) for d in diagnostics] == [(DiagnosticTag.UNKNOWN_BIT, 9)]
    _, diagnostics = extract_pips([2], handmade_db)
    assert diagnostics[0].tag is DiagnosticTag.UNKNOWN_BIT


def test_single_pip_bitstreams_decode_to_that_pip(desk, desk_db):
    enc = desk.ground_truth()
    rng = np.random.default_rng(11)
    coords = desk.coordinates()
    checked = 0
    while checked < 1000:
        coord = coords[int(rng.integers(len(coords)))]
        t = desk.sm_type_at(coord)
        pip = t.pips[int(rng.integers(len(t.pips)))]
        if pip.is_default:
            continue
        pips, diagnostics = extract_pips(enc.pip_bits(coord, pip.key), desk_db)
        assert pips == [(coord, *pip.key)]
        assert diagnostics == []
        checked += 1


def test_random_designs_round_trip(tiny, tiny_toolchain, tiny_db, tiny_reference):
    rng = np.random.default_rng(5)
    public = tiny.public()
    for k in range(100):
        design = random_netlist(tiny, rng, n_slices=int(rng.integers(1, 6)), n_pips=int(rng.integers(1, 20)))
        result = convert(tiny_toolchain.bitgen(design, force=True), tiny_reference, tiny_db, public)
        assert roundtrip_mismatches(design, result) == [], f"design {k}"


def test_random_designs_round_trip_on_desk(desk, desk_toolchain, desk_db, desk_reference):
    rng = np.random.default_rng(8)
    for k in range(10):
        design = random_netlist(desk, rng, n_slices=8, n_pips=60)
        result = convert(desk_toolchain.bitgen(design, force=True), desk_reference, desk_db, desk.public())
        assert roundtrip_mismatches(design, result) == [], f"design {k}"


def _routed_pair(fabric):
    """a.F0_Q at (0,0) driving b.L0_I0 at (1,0), routed over non-default PIPs."""
    a = Instance(name="a", site_kind=SiteKind.SLICE,
                 placement=Placement(tile="CLB_X0Y0", site=fabric.site_name((0, 0), 0)),
                 lut_configs={0: TruthTable.from_hex("8")})
    b = Instance(name="b", site_kind=SiteKind.SLICE,
                 placement=Placement(tile="CLB_X1Y0", site=fabric.site_name((1, 0), 0)))
    net = Net(name="ab", outpin=("a", "F0_Q"), inpins=[("b", "L0_I0")])
    design = Netlist(design_name="pair", device_id=fabric.device_id, instances=[a, b], nets=[net])
    return route_design(fabric, design)


def test_routed_net_is_reconstructed(tiny, tiny_toolchain, tiny_db, tiny_reference):
    design = _routed_pair(tiny)
    result = convert(tiny_toolchain.bitgen(design), tiny_reference, tiny_db, tiny.public())
    assert result.diagnostics == []
    [net] = result.netlist.nets
    assert net.outpin == ("SLICE_X0Y0", "F0_Q")
    assert net.inpins == [("SLICE_X1Y0", "L0_I0")]
    assert sorted(net.pips) == sorted(design.nets[0].pips)
    assert result.netlist.instance_map()["SLICE_X0Y0"].lut_configs[0].to_hex() == "8"


def test_net_without_driver_is_dangling(tiny):
    nets, diagnostics = reconstruct_nets([((1, 0), "W4", "S0")], tiny.public(), endpoints={((1, 0), 0)})
    assert [d.tag for d in diagnostics] == [DiagnosticTag.DANGLING_NET]
    assert nets[0].outpin is None
    assert nets[0].inpins == [("SLICE_X1Y0", "L0_I0")]


def test_touched_default_sinks_are_reported(tiny, tiny_toolchain, tiny_db, tiny_reference):
    design = _routed_pair(tiny)
    result = convert(tiny_toolchain.bitgen(design), tiny_reference, tiny_db, tiny.public())
    touched = sorted({tiny.parse_sm_tile(tile) for tile, _, _ in design.nets[0].pips})
    configured = {(tiny.parse_sm_tile(tile), sink) for tile, _, sink in design.nets[0].pips}
    expected = sorted(
        (sm, pip[1])
        for sm in touched
        for pip in tiny.sm_type_at(sm).default_pips()
        if (sm, pip[1]) not in configured
    )
    assert result.maybe_default_sinks == expected


def test_mismatched_inputs(tiny, tiny_db, tiny_reference):
    with pytest.raises(ConversionError):
        convert(Bitstream.blank("other", tiny_reference.frame_bits), tiny_reference, tiny_db, tiny.public())
    with pytest.raises(ConversionError):
        convert(Bitstream.blank(tiny.device_id, 8), tiny_reference, tiny_db, tiny.public())
    with pytest.raises(ConversionError, match="fabric description"):
        convert(tiny_reference, tiny_reference, tiny_db, tiny.public().model_copy(update={"device_id": "other"}))
