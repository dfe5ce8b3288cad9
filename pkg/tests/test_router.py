import pytest

from bitrev.exceptions import RoutingError
from bitrev.modules.netlist import Instance, Net, Netlist, Placement, SiteKind, TruthTable
from bitrev.modules.router import route_design
from bitrev.modules.toolchain import MockToolchain, check_routing


def _slice(fabric, coord, s=0):
    site = fabric.site_name(coord, s)
    return Instance(name=site, site_kind=SiteKind.SLICE,
                    placement=Placement(tile=fabric.clb_tile_name(coord), site=site),
                    lut_configs={0: TruthTable.identity(fabric.slice_sites[s].lut_arity)})


def test_routes_pass_the_toolchain_check(desk):
    a, b, c = _slice(desk, (2, 2)), _slice(desk, (5, 7), 1), _slice(desk, (2, 2), 1)
    nets = [
        Net(name="fanout", outpin=(a.name, "L0_O"), inpins=[(b.name, "L0_I0"), (c.name, "F1_D")]),
        Net(name="back", outpin=(b.name, "F0_Q"), inpins=[(a.name, "L0_I0")]),
        Net(name="local", outpin=(a.name, "F1_Q"), inpins=[(a.name, "F1_D")]),
    ]
    design = Netlist(design_name="r", device_id=desk.device_id, instances=[a, b, c], nets=nets)
    routed = route_design(desk, design)
    check_routing(desk, routed)
    MockToolchain(desk).bitgen(routed)
    assert all(net.pips for net in routed.nets)


def test_no_sink_wire_is_shared(desk):
    # every other row: four nets from one slice to a slice six tiles east
    instances, nets = [], []
    for y in range(0, 16, 2):
        src, dst = _slice(desk, (4, y)), _slice(desk, (10, y))
        instances += [src, dst]
        for k in range(4):
            nets.append(Net(name=f"n{y}_{k}", outpin=(src.name, f"L{k % 2}_O" if k < 2 else f"F{k - 2}_Q"),
                            inpins=[(dst.name, f"L{k // 2}_I{k % 2}")]))
    design = Netlist(design_name="busy", device_id=desk.device_id, instances=instances, nets=nets)
    routed = route_design(desk, design)
    sinks = [(tile, sink) for net in routed.nets for tile, _, sink in net.pips]
    assert len(sinks) == len(set(sinks))
    check_routing(desk, routed)


def test_default_pips_are_never_used(desk):
    a, b = _slice(desk, (0, 0)), _slice(desk, (3, 3))
    net = Net(name="n", outpin=(a.name, "L0_O"), inpins=[(b.name, "L0_I1")])
    routed = route_design(desk, Netlist(design_name="d", device_id=desk.device_id, instances=[a, b], nets=[net]))
    for tile, src, sink in routed.nets[0].pips:
        assert (src, sink) not in desk.sm_type_at(desk.parse_sm_tile(tile)).default_pips()


def test_shell_nets_stay_unrouted(desk):
    a = _slice(desk, (1, 1))
    pad = Instance(name="pad", site_kind=SiteKind.IOB)
    nets = [Net(name="in", outpin=("pad", "O"), inpins=[(a.name, "L0_I0")])]
    design = Netlist(design_name="d", device_id=desk.device_id, instances=[a, pad], nets=nets)
    assert route_design(desk, design).nets[0].pips == []


def test_unknown_pin(desk):
    a, b = _slice(desk, (0, 0)), _slice(desk, (1, 0))
    net = Net(name="n", outpin=(a.name, "X9"), inpins=[(b.name, "L0_I0")])
    with pytest.raises(RoutingError):
        route_design(desk, Netlist(design_name="d", device_id=desk.device_id, instances=[a, b], nets=[net]))
