import numpy as np
import pytest

from bitrev.exceptions import CorrelationError, PayloadError
from bitrev.modules.aes import aes128_decrypt, aes128_encrypt
from bitrev.modules.netlist import (
    CellRef,
    FFConfig,
    Instance,
    Net,
    Netlist,
    SiteKind,
    TruthTable,
    canonicalize,
    empty_netlist,
)
from bitrev.modules.simulator import simulate
from bitrev.modules.trojan import (
    BIT_LANES,
    KEY_BYTES,
    KeyBitMap,
    SelfTestSpec,
    bitstream_bridge,
    correlate_key_bits,
    detect_shift_registers,
    insert_payload,
    load_keymap,
    run_self_test,
    save_keymap,
    stealth_report,
)

K_ST = bytes.fromhex("2b7e151628aed2a6abf7158809cf4f3c")


# --- Target ---

def test_clean_target_passes_self_test(aes_target):
    target, spec = aes_target
    assert spec.c_ref.hex() == "3ad77bb40d7a3660a89ecaf32466ef97"
    assert run_self_test(target, spec)


def test_clean_target_encrypts_under_the_loaded_key(aes_target):
    target, _ = aes_target
    rng = np.random.default_rng(0)
    keys = [rng.bytes(16) for _ in range(20)]
    plaintexts = [rng.bytes(16) for _ in range(20)]
    assert target.encrypt(keys, plaintexts) == [aes128_encrypt(k, p) for k, p in zip(keys, plaintexts)]


def test_self_test_spec_validation():
    spec = SelfTestSpec(p_ref="00" * 16, c_ref=aes128_encrypt(K_ST, bytes(16)), k_st=K_ST, k_u="11" * 16)
    assert spec.model_dump()["k_st"] == K_ST.hex()
    with pytest.raises(ValueError):
        SelfTestSpec(p_ref="00" * 16, c_ref="00" * 16, k_st=K_ST, k_u="11" * 16)
    with pytest.raises(ValueError):
        SelfTestSpec(p_ref="00" * 15, c_ref="00" * 16, k_st=K_ST, k_u="11" * 16)


# --- Detection ---

def test_detects_eight_key_chains(chains):
    assert len(chains) == BIT_LANES
    assert all(len(ch) == KEY_BYTES for ch in chains)
    assert all(ch.first_lut is not None for ch in chains)
    # every stage but the last feeds the AES core besides the next stage
    for ch in chains:
        assert sorted(ch.taps) == list(range(KEY_BYTES))
        assert all(pin[0] == "aes_core" for pins in ch.taps.values() for pin in pins)


def _chain_design(n, tap_at=None):
    """n FFs on separate slices, each fed through an identity LUT from the previous one."""
    instances = [Instance(name="src", site_kind=SiteKind.IOB)]
    nets = []
    prev = ("src", "O")
    for i in range(n):
        name = f"s{i}"
        instances.append(Instance(name=name, site_kind=SiteKind.SLICE,
                                  lut_configs={0: TruthTable.identity(4, 2)}, ff_configs={0: FFConfig()}))
        nets.append(Net(name=f"in{i}", outpin=prev, inpins=[(name, "L0_I2")]))
        nets.append(Net(name=f"d{i}", outpin=(name, "L0_O"), inpins=[(name, "F0_D")]))
        prev = (name, "F0_Q")
    inpins = [("tap", "I")]
    instances.append(Instance(name="tap", site_kind=SiteKind.IOB))
    nets.append(Net(name="end", outpin=prev, inpins=inpins))
    if tap_at is not None:
        net = next(n for n in nets if n.outpin == (f"s{tap_at}", "F0_Q"))
        instances.append(Instance(name="side", site_kind=SiteKind.IOB))
        net.inpins.append(("side", "I"))
    return Netlist(design_name="chain", device_id="dev", instances=instances, nets=nets)


def test_five_stage_chain_with_a_tap():
    [chain] = detect_shift_registers(_chain_design(5, tap_at=2))
    assert [str(ff) for ff in chain.ffs] == [f"s{i}/FF0" for i in range(5)]
    assert chain.luts == [CellRef(f"s{i}", "LUT", 0) for i in range(5)]
    assert chain.taps == {2: [("side", "I")], 4: [("tap", "I")]}


def test_short_chains_and_empty_designs():
    assert detect_shift_registers(_chain_design(3)) == []
    assert len(detect_shift_registers(_chain_design(3), threshold=3)) == 1
    assert detect_shift_registers(empty_netlist("dev")) == []


def test_branching_breaks_the_chain():
    design = _chain_design(6)
    # s2's Q also drives a seventh FF: s2 has two FF successors
    extra = Instance(name="x", site_kind=SiteKind.SLICE, ff_configs={0: FFConfig()})
    q2 = next(n for n in design.nets if n.outpin == ("s2", "F0_Q"))
    q2.inpins.append(("x", "F0_D"))
    design.instances.append(extra)
    chains = detect_shift_registers(design, threshold=3)
    assert [len(c) for c in chains] == [3, 3]
    assert [str(c.ffs[0]) for c in chains] == ["s0/FF0", "s3/FF0"]


def _impulse_arrivals(netlist, chain):
    """Cycles at which each stage's Q is high after a single 1 on the pad feeding the chain."""
    design = netlist.model_copy(deep=True)
    q_nets = {net.outpin: net for net in design.nets if net.outpin}
    for s, ff in enumerate(chain.ffs):
        q_nets[(ff.instance, f"F{ff.index}_Q")].inpins.append((f"watch{s}", "I"))
        design.instances.append(Instance(name=f"watch{s}", site_kind=SiteKind.IOB))
    lut = chain.first_lut
    feed = next(net for net in design.nets
                if any(i == lut.instance and p.startswith(f"L{lut.index}_I") for i, p in net.inpins))
    trace = simulate(design, [{feed.outpin[0]: 1}], cycles=len(chain) + 3)
    return [[t for t, values in enumerate(trace) if values[f"watch{s}"][0]] for s in range(len(chain))]


def test_detected_chains_are_delay_lines(aes_target, chains):
    constructed = _chain_design(6, tap_at=3)
    for ch in detect_shift_registers(constructed):
        assert _impulse_arrivals(constructed, ch) == [[s + 1] for s in range(len(ch))]
    target, _ = aes_target
    for ch in chains:
        assert _impulse_arrivals(target.netlist, ch) == [[s + 1] for s in range(KEY_BYTES)]


# --- Correlation ---

def test_keymap_is_a_bijection(keymap, chains):
    assert keymap.complete
    assert set(keymap.entries.values()) == {(b, bit) for b in range(KEY_BYTES) for bit in range(BIT_LANES)}
    assert set(keymap.entries) == {str(ff) for ch in chains for ff in ch.ffs}


def test_keymap_matches_the_wiring(aes_target, keymap):
    target, _ = aes_target
    core_pin = {}
    for net in target.netlist.nets:
        if net.outpin and net.outpin[1].startswith("F"):
            for inst, pin in net.inpins:
                if inst == "aes_core":
                    core_pin[f"{net.outpin[0]}/FF{net.outpin[1][1]}"] = int(pin[1:])
    for ff, (byte, bit) in keymap.entries.items():
        assert core_pin[ff] == 8 * byte + bit


def test_tampered_chain_order_is_rejected(aes_target, chains):
    target, _ = aes_target
    reversed_chain = type(chains[0])(ffs=chains[0].ffs[::-1], luts=chains[0].luts[::-1])
    with pytest.raises(CorrelationError):
        correlate_key_bits(target, [reversed_chain] + list(chains[1:]))


def test_keymap_file(tmp_path, keymap):
    save_keymap(keymap, tmp_path / "keymap.json")
    assert load_keymap(tmp_path / "keymap.json") == keymap
    (tmp_path / "bad.json").write_text('{"s/FF0": [16, 0]}')
    with pytest.raises(CorrelationError):
        load_keymap(tmp_path / "bad.json")


def test_keymap_rejects_duplicates():
    with pytest.raises(ValueError):
        KeyBitMap(entries={"a/FF0": (0, 0), "b/FF0": (0, 0)})


# --- Payload ---

def test_payload_adds_one_lut_per_key_bit(aes_target, trojaned):
    target, _ = aes_target
    added = [i for i in trojaned.instances if i.name not in target.netlist.instance_map()]
    assert len(added) == KEY_BYTES * BIT_LANES
    assert all(i.site_kind is SiteKind.SLICE and set(i.lut_configs) == {0} for i in added)
    sites = [i.placement for i in trojaned.instances if i.placement is not None]
    assert len(sites) == len(set(sites))


def test_payload_leaves_other_nets_alone(aes_target, trojaned):
    target, _ = aes_target
    before = canonicalize(target.netlist).net_map()
    after = canonicalize(trojaned).net_map()
    changed = {name for name in before if before[name] != after[name]}
    assert all(name.startswith("c") and "_d" in name for name in changed)
    assert len(changed) == KEY_BYTES * BIT_LANES
    assert sum(name.startswith("payload_") for name in after) == KEY_BYTES * BIT_LANES


def test_trojan_passes_self_test_and_leaks(aes_target, trojaned):
    target, spec = aes_target
    report = stealth_report(target, trojaned, spec, trials=20)
    assert report.self_test_pass
    assert report.decryptable == 20
    assert not report.degenerate_key
    cx = report.counterexample
    assert cx is not None and cx.user_key == spec.k_u.hex()
    assert aes128_decrypt(spec.k_st, bytes.fromhex(cx.observed)).hex() == cx.plaintext
    assert "DECRYPTABLE UNDER K_ST: 20/20" in report.render()


def test_clean_design_is_not_decryptable(aes_target):
    target, spec = aes_target
    report = stealth_report(target, target.netlist, spec, trials=20)
    assert report.self_test_pass
    assert report.decryptable == 0
    assert report.counterexample is None


def test_user_key_equal_to_self_test_key_is_flagged(aes_target, trojaned):
    target, spec = aes_target
    same = spec.model_copy(update={"k_u": spec.k_st})
    report = stealth_report(target, trojaned, same, trials=3)
    assert report.degenerate_key
    assert "WARNING" in report.render()


def test_payload_needs_a_complete_map(aes_target, keymap):
    target, spec = aes_target
    partial = KeyBitMap(entries=dict(list(keymap.entries.items())[:10]))
    with pytest.raises(PayloadError):
        insert_payload(target, partial, spec.k_st)
    ghost = dict(keymap.entries)
    ff, bit = ghost.popitem()
    ghost["SLICE_X31Y15/FF0"] = bit
    with pytest.raises(PayloadError):
        insert_payload(target, KeyBitMap(entries=ghost), spec.k_st)


# --- Bitstream bridge ---

def test_trojan_survives_the_bitstream(desk, desk_toolchain, desk_db, aes_target, trojaned):
    target, spec = aes_target
    recovered = bitstream_bridge(desk, desk_toolchain, desk_db, trojaned)
    report = stealth_report(target, recovered, spec, trials=20)
    assert report.self_test_pass
    assert report.decryptable == 20
    assert "DECRYPTABLE UNDER K_ST: 20/20" in report.render()
