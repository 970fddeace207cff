import subprocess
import sys

import numpy as np
import pytest

from postdae.cli import main
from postdae.masks import read_mask_png, write_mask_png
from test_pipeline import TINY


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("syn")
    assert main(["gen-synthetic", "--count", "12", "--size", "32", "--seed", "1",
                 "--output", str(root)]) == 0
    return root


def _set(items):
    return [arg for item in items for arg in ("--set", item)]


def test_gen_synthetic_writes_manifest(dataset):
    assert (dataset / "manifest.json").exists()
    assert len(list((dataset / "masks").glob("*.png"))) == 12


def test_train_predict_postprocess_evaluate(dataset, tmp_path, capsys):
    common = _set(TINY + [f"dataset.manifest={dataset / 'manifest.json'}"])
    ck = tmp_path / "ck"
    assert main(["train-dae", "--output", str(ck)] + common) == 0
    assert main(["train-rf", "--output", str(ck)] + common) == 0
    assert main(["train-unet", "--output", str(ck)] + common) == 0
    assert (ck / "dae" / "checkpoint.json").exists()
    assert (ck / "unet-converged" / "checkpoint.json").exists()

    images = sorted((dataset / "images").glob("*.png"))[:3]
    pred = tmp_path / "pred"
    assert main(["predict", "--model", str(ck / "rf"), "--output", str(pred)]
                + [str(p) for p in images]) == 0
    assert main(["predict", "--model", str(ck / "unet-converged"), "--output", str(tmp_path / "pu")]
                + [str(p) for p in images]) == 0
    stems = [p.stem for p in images]
    assert sorted(p.name for p in pred.glob("*.png")) == sorted(f"{s}.png" for s in stems)
    prob = np.load(pred / f"{stems[0]}.prob.npy")
    np.testing.assert_array_equal(read_mask_png(pred / f"{stems[0]}.png"), prob >= 0.5)

    dae_out = tmp_path / "dae_out"
    assert main(["postprocess", "--method", "post-dae", "--model", str(ck / "dae"),
                 "--output", str(dae_out)] + [str(pred / f"{s}.png") for s in stems]) == 0
    crf_out = tmp_path / "crf_out"
    assert main(["postprocess", "--method", "crf", "--image-dir", str(dataset / "images"),
                 "--output", str(crf_out)] + [str(pred / f"{s}.prob.npy") for s in stems]) == 0
    assert len(list(crf_out.glob("*.png"))) == 3

    capsys.readouterr()
    assert main(["evaluate", "--truth", str(dataset / "masks"), "--pred", str(dae_out),
                 "--method", "rf", "--stage", "rf", "--postproc", "post-dae"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("image_id,method,stage,postproc,dice")
    assert len(lines) == 4


def test_experiment_and_report(tmp_path, capsys):
    out = tmp_path / "exp"
    assert main(["experiment", "--output", str(out)] + _set(TINY)) == 0
    assert (out / "results.csv").exists()
    capsys.readouterr()
    assert main(["report", str(out / "results.csv"), "--output", str(tmp_path / "plots")]) == 0
    text = capsys.readouterr().out
    assert "dice:" in text and (tmp_path / "plots" / "hausdorff.png").exists()


def test_errors_exit_with_status_2(tmp_path, capsys):
    m = np.zeros((32, 32), bool)
    write_mask_png(m, tmp_path / "m.png")
    assert main(["postprocess", "--method", "post-dae", str(tmp_path / "m.png")]) == 2
    assert main(["experiment", "--set", "nosuch.key=1"]) == 2
    assert main(["report", str(tmp_path / "missing.csv")]) == 2
    assert "error" in capsys.readouterr().err


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "postdae", "--help"],
                         capture_output=True, text=True, check=True)
    for sub in ("import-jsrt", "gen-synthetic", "train-dae", "train-unet", "train-rf",
                "predict", "postprocess", "evaluate", "experiment", "report"):
        assert sub in out.stdout


def test_no_invert_flag(tmp_path):
    from postdae.cli import _config, _read_image, build_parser

    raw = tmp_path / "zero.IMG"
    raw.write_bytes(bytes(2048 * 2048 * 2))
    assert _read_image(raw).min() == 1.0
    assert _read_image(raw, invert=False).max() == 0.0
    parser = build_parser()
    assert _config(parser.parse_args(["experiment"])).data["dataset"]["invert"] is True
    args = parser.parse_args(["experiment", "--no-invert"])
    assert _config(args).data["dataset"]["invert"] is False
