import numpy as np
import pytest

from cloformer.cli import main
from cloformer.clot import load_tensor, save_tensor
from cloformer.tensor import Tensor


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_build_and_forward(tmp_path, capsys):
    ck = tmp_path / "m.ckpt"
    code, out, _ = run(capsys, "build", "--variant", "xxs-64", "--out", str(ck))
    assert code == 0 and "parameters" in out
    save_tensor(Tensor(np.zeros((2, 3, 64, 64), np.float32)), tmp_path / "x.clot")
    code, out, _ = run(capsys, "forward", "--ckpt", str(ck), "--input", str(tmp_path / "x.clot"),
                       "--out", str(tmp_path / "y.clot"))
    assert code == 0 and len(out.splitlines()) == 2
    assert load_tensor(tmp_path / "y.clot").shape == (2, 8)


def test_build_with_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("num_classes = 3\n")
    code, out, _ = run(capsys, "build", "--variant", "xxs-64", "--config", str(cfg))
    assert code == 0


def test_cost_prints_text_and_csv(tmp_path, capsys):
    code, out, _ = run(capsys, "cost", "--variant", "xxs", "--input", "224", "--csv", str(tmp_path / "c.csv"))
    assert code == 0 and "name,params,flops" in out and "TOTAL" in out
    assert (tmp_path / "c.csv").read_text().startswith("name,params,flops")


def test_gradcheck_and_equivariance(capsys):
    code, out, _ = run(capsys, "gradcheck", "--module", "dwconv")
    assert code == 0 and out.startswith("PASS dwconv")
    code, out, _ = run(capsys, "equivariance", "--padding", "circular")
    assert code == 0 and out.startswith("PASS")
    code, out, _ = run(capsys, "equivariance", "--padding", "zero")
    assert code == 1 and out.startswith("FAIL")


def test_ablate(capsys):
    code, out, _ = run(capsys, "ablate", "--knobs", "row=shared")
    assert code == 0 and out.startswith("params")


def test_train_and_spectrum(tmp_path, capsys):
    ck = tmp_path / "t.ckpt"
    code, out, _ = run(capsys, "train", "--steps", "1", "--samples", "16", "--batch", "8", "--out", str(ck))
    assert code == 0 and ck.exists()
    code, out, _ = run(capsys, "spectrum", "--ckpt", str(ck), "--stage", "2", "--out", str(tmp_path / "s"),
                       "--samples", "2", "--hw", "64", "--bands", "4")
    assert code == 0 and len(out.splitlines()) == 3
    assert len(list((tmp_path / "s").glob("*.pgm"))) == 3


@pytest.mark.parametrize("argv,category", [
    (["cost", "--variant", "huge"], "config"),
    (["cost", "--input", "100"], "dimension"),
    (["ablate", "--knobs", "branches=global_only,use_k=0"], "config"),
    (["ablate", "--knobs", "oops"], "argument"),
    (["forward", "--ckpt", "/nonexistent", "--input", "/nonexistent"], "io"),
    (["frobnicate"], "argument"),
])
def test_errors_are_single_machine_readable_lines(argv, category, capsys):
    code, _, err = run(capsys, *argv)
    assert code == 2
    lines = err.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith(f"ERROR {category}: ")
