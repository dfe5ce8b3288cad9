import pytest

from bitrev.modules.fabric import generate_fabric
from bitrev.modules.netlist import empty_netlist
from bitrev.modules.re_pipeline import reverse_device
from bitrev.modules.selfcheck import tiny_fabric
from bitrev.modules.toolchain import MockToolchain
from bitrev.modules.trojan import build_aes_target, correlate_key_bits, detect_shift_registers, insert_payload

DESK_GRID = (16, 16)
DESK_TYPES = [(200, 40, 256), (200, 40, 320)]

K_ST = bytes.fromhex("2b7e151628aed2a6abf7158809cf4f3c")
P_REF = bytes.fromhex("6bc1bee22e409f96e93d7e117393172a")


# --- Tiny fabric, for fast round trips ---

@pytest.fixture(scope="session")
def tiny():
    return tiny_fabric(0)


@pytest.fixture(scope="session")
def tiny_toolchain(tiny):
    return MockToolchain(tiny)


@pytest.fixture(scope="session")
def tiny_reversed(tiny):
    return reverse_device(MockToolchain(tiny), tiny.public(), parallelism=2)


@pytest.fixture(scope="session")
def tiny_db(tiny_reversed):
    return tiny_reversed[0]


@pytest.fixture(scope="session")
def tiny_reference(tiny_toolchain, tiny):
    return tiny_toolchain.bitgen(empty_netlist(tiny.device_id), force=True)


# --- Desk fabric ---

@pytest.fixture(scope="session")
def desk():
    return generate_fabric(0, DESK_GRID, DESK_TYPES)


@pytest.fixture(scope="session")
def desk_toolchain(desk):
    return MockToolchain(desk)


@pytest.fixture(scope="session")
def desk_reversed(desk):
    return reverse_device(MockToolchain(desk), desk.public(), parallelism=4)


@pytest.fixture(scope="session")
def desk_db(desk_reversed):
    return desk_reversed[0]


@pytest.fixture(scope="session")
def desk_reference(desk_toolchain, desk):
    return desk_toolchain.bitgen(empty_netlist(desk.device_id), force=True)


# --- AES case study ---

@pytest.fixture(scope="session")
def aes_target():
    return build_aes_target(K_ST, P_REF, seed=3)


@pytest.fixture(scope="session")
def chains(aes_target):
    target, _ = aes_target
    return detect_shift_registers(target.netlist)


@pytest.fixture(scope="session")
def keymap(aes_target, chains):
    target, _ = aes_target
    return correlate_key_bits(target, chains)


@pytest.fixture(scope="session")
def trojaned(aes_target, keymap):
    target, spec = aes_target
    return insert_payload(target, keymap, spec.k_st)
