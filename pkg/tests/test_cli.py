import pytest

from bitrev.main import main
from bitrev.modules.database import load_database
from bitrev.modules.fabric import load_fabric
from bitrev.modules.netlist import empty_netlist, parse_netlist, pip_set, write_netlist

TINY_TOML = """
device_id = "xbr6-tiny"
grid_width = 4
grid_height = 4
sm_type_specs = [[48, 14, 64], [48, 14, 72]]
slices_per_tile = 1
luts_per_slice = 2
lut_arity = 2
ffs_per_slice = 2
default_fraction = 0.05
"""


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "tiny.toml").write_text(TINY_TOML)
    return tmp_path


def _run(workdir, *argv):
    return main(["--config", str(workdir / "tiny.toml"), *argv])


@pytest.fixture
def generated(workdir):
    fab, gt = workdir / "fab.json", workdir / "gt.json"
    assert _run(workdir, "fabric", "gen", "--out", str(fab), "--ground-truth", str(gt)) == 0
    return fab, gt


def test_usage_errors():
    assert main([]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["bitgen", "--input", "x"]) == 2


def test_missing_input_is_a_domain_error(tmp_path):
    code = main(["bitgen", "--ground-truth", str(tmp_path / "nope.json"),
                 "--input", str(tmp_path / "nope.netlist"), "--output", str(tmp_path / "out.bit")])
    assert code == 1


def test_bad_config_is_a_domain_error(tmp_path):
    (tmp_path / "bad.toml").write_text("lut_arity = 9\n")
    assert main(["--config", str(tmp_path / "bad.toml"), "selfcheck"]) == 1


def test_fabric_gen_and_report(workdir, capsys, generated):
    fab, _ = generated
    assert "xbr6-tiny: 4x4" in capsys.readouterr().out
    assert _run(workdir, "fabric", "report", "--fabric", str(fab), "--sm", "INT_X1Y2") == 0
    lines = capsys.readouterr().out.split()
    assert len(lines) == 48
    assert _run(workdir, "fabric", "report", "--fabric", str(fab), "--sm", "INT_X9Y9") == 1


def test_reverse_is_independent_of_jobs(workdir, generated, capsys):
    _, gt = generated
    one, eight, four = workdir / "db1.json", workdir / "db8.json", workdir / "db4.json"
    assert _run(workdir, "reverse", "--jobs", "8", "--ground-truth", str(gt), "--out", str(eight)) == 0
    assert _run(workdir, "reverse", "--jobs", "1", "--ground-truth", str(gt), "--out", str(one)) == 0
    # the global flag works too
    assert _run(workdir, "--jobs", "4", "reverse", "--ground-truth", str(gt), "--out", str(four)) == 0
    assert one.read_bytes() == eight.read_bytes() == four.read_bytes()
    out = capsys.readouterr().out
    assert "switch matrices: 16 (2 types)" in out


def test_patch_and_convert(workdir, generated):
    fab, gt = generated
    db_path = workdir / "db.json"
    assert _run(workdir, "reverse", "--ground-truth", str(gt), "--out", str(db_path)) == 0
    empty = workdir / "empty.netlist"
    empty.write_text(write_netlist(empty_netlist("xbr6-tiny")))
    ref = workdir / "ref.bit"
    assert _run(workdir, "bitgen", "--ground-truth", str(gt), "--input", str(empty),
                "--output", str(ref), "--force") == 0

    fabric, db = load_fabric(fab), load_database(db_path)
    pip = next(p for p in fabric.sm_type_at((1, 1)).pip_names() if not db.is_default((1, 1), p))
    patched = workdir / "patched.bit"
    obj = f"INT_X1Y1:{pip[0]}->{pip[1]}"
    assert _run(workdir, "manip", "set-pip", obj, "--db", str(db_path),
                "--input", str(ref), "--output", str(patched)) == 0

    out = workdir / "out.netlist"
    assert _run(workdir, "convert", "--db", str(db_path), "--fabric", str(fab), "--reference", str(ref),
                "--input", str(patched), "--output", str(out)) == 0
    assert pip_set(parse_netlist(out.read_text())) == {("INT_X1Y1", *pip)}

    # unsetting a PIP that is not configured
    assert _run(workdir, "manip", "unset-pip", obj, "--db", str(db_path),
                "--input", str(ref), "--output", str(workdir / "x.bit")) == 1


def test_selfcheck_passes(capsys):
    assert main(["selfcheck"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_pip_objects_need_a_switch_matrix_tile(workdir, generated):
    _, gt = generated
    db_path = workdir / "db.json"
    assert _run(workdir, "reverse", "--ground-truth", str(gt), "--out", str(db_path)) == 0
    empty = workdir / "empty.netlist"
    empty.write_text(write_netlist(empty_netlist("xbr6-tiny")))
    ref = workdir / "ref.bit"
    assert _run(workdir, "bitgen", "--ground-truth", str(gt), "--input", str(empty),
                "--output", str(ref), "--force") == 0
    for obj in ["CLB_X1Y1:W0->S0", "X1Y1:W0->S0", "INT_X1Y1-W0-S0"]:
        assert _run(workdir, "manip", "set-pip", obj, "--db", str(db_path),
                    "--input", str(ref), "--output", str(workdir / "x.bit")) == 1
