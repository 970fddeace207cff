import csv
import json

import numpy as np
import pytest

from postdae.errors import InvalidConfig, SchemaError
from postdae.metrics import EVAL_FIELDS, EvalRecord, read_records, records_to_csv
from postdae.pipeline import (
    ExperimentConfig,
    apply_override,
    build_report,
    default_config,
    format_report,
    load_folds,
    report_plots,
    run_experiment,
)

TINY = [
    "dataset.size=32", "dataset.synthetic.count=30",
    "dae.train.epochs=2", "dae.architecture.code_size=16",
    "unet.architecture.channels=[4, 8]", "unet.architecture.bottleneck=8",
    "unet.train.max_epochs=5", "unet.train.learning_rate=0.001",
    "rf.n_estimators=5", "rf.samples_per_image=50",
    'rf.glcm={"patch_size": 5, "gray_levels": 8, "offsets": [[1, 0], [1, 90]]}',
    'crf.stages=["*"]', "timings_in_results=true",
]


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = ExperimentConfig.load(None, TINY + [f"output_dir={out}"])
    return cfg, run_experiment(cfg, log_progress=lambda _msg: None)


def test_overrides_parse_json_and_reject_unknown_keys():
    cfg = default_config()
    apply_override(cfg, "dae.train.epochs=7")
    apply_override(cfg, "crf.stages=[\"rf\"]")
    apply_override(cfg, "output_dir=somewhere")
    assert cfg["dae"]["train"]["epochs"] == 7
    assert cfg["crf"]["stages"] == ["rf"]
    assert cfg["output_dir"] == "somewhere"
    for bad in ("dae.train.epoch=3", "nosuch=1", "seed"):
        with pytest.raises(InvalidConfig):
            apply_override(default_config(), bad)


def test_config_validation_and_seed_injection(tmp_path):
    cfg = ExperimentConfig.load(None, ["seed=9"])
    assert cfg.dae_train().seed == cfg.unet_train().seed == cfg.rf_config().seed == 9
    assert cfg.split_spec().seed == 9
    with pytest.raises(InvalidConfig):
        ExperimentConfig.load(None, ["workers=0"])
    with pytest.raises(InvalidConfig):
        ExperimentConfig.load(None, ["dae.threshold=1.0"])
    with pytest.raises(InvalidConfig):
        ExperimentConfig({"dae": {"bogus": 1}})
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 4, "dataset": {"size": 64}}))
    loaded = ExperimentConfig.load(path, ["workers=2"])
    assert (loaded.seed, loaded["dataset"]["size"], loaded["workers"]) == (4, 64, 2)
    assert json.loads(loaded.to_json()) == loaded.data


def test_folds_follow_split():
    cfg = ExperimentConfig.load(None, ["dataset.size=32", "dataset.synthetic.count=20"])
    folds = load_folds(cfg)
    assert (len(folds.train), len(folds.val), len(folds.test)) == (14, 2, 4)
    assert folds.spacing == 1.0
    ids = [s.image_id for s in folds.train + folds.val + folds.test]
    assert len(set(ids)) == 20


def test_every_image_and_stage_has_three_arms(tiny_run):
    cfg, result = tiny_run
    records = read_records(result.output_dir / "results.csv")
    counts = {}
    for r in records:
        counts.setdefault((r.image_id, r.method, r.stage), []).append(r.postproc)
    assert counts and all(sorted(v) == ["crf", "none", "post-dae"] for v in counts.values())
    stages = {r.stage for r in records}
    assert {"unet-converged", "unet-epoch-5", "rf"} <= stages


def test_runtimes_nonnegative_and_sum_to_wall_clock(tiny_run):
    _, result = tiny_run
    records = read_records(result.output_dir / "results.csv")
    assert all(r.runtime_s is not None and r.runtime_s >= 0 for r in records)
    for t in result.timings:
        if t.postproc == "none" or not t.per_image_s:
            continue
        total = sum(t.per_image_s)
        assert total <= t.wall_s * 1.10 and total >= t.wall_s * 0.90
    with open(result.output_dir / "timings.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert any(r["image_id"] == "*stage-wall-clock*" for r in rows)


def test_artifacts_written(tiny_run):
    _, result = tiny_run
    out = result.output_dir
    for name in ("config.snapshot.json", "results.csv", "timings.csv", "report.csv",
                 "significance.csv", "plots/dice.png", "plots/hausdorff.png",
                 "checkpoints/dae/checkpoint.json", "checkpoints/rf/model.json"):
        assert (out / name).exists(), name
    assert not (out / "FAILED").exists()
    assert "post-dae" in format_report(result.report)


def test_dae_trained_on_masks_only(tiny_run, tmp_path, monkeypatch):
    import importlib

    pipeline = importlib.import_module("postdae.pipeline")
    seen = []

    def spy(masks, cfg, spec):
        seen.extend(masks)
        raise RuntimeError("stop after capturing the DAE inputs")

    monkeypatch.setattr(pipeline, "train_dae", spy)
    cfg = ExperimentConfig.load(None, TINY + [f"output_dir={tmp_path}"])
    with pytest.raises(RuntimeError):
        run_experiment(cfg, log_progress=lambda _msg: None)
    folds = load_folds(cfg)
    assert len(seen) == len(folds.train)
    for got, s in zip(seen, folds.train):
        assert got.dtype == bool
        np.testing.assert_array_equal(got, s.mask)
    assert (tmp_path / "FAILED").exists()


def test_results_without_runtime_are_blank(tmp_path):
    recs = [EvalRecord("a", "rf", "rf", "none", 0.5, 1.0, 1.0, None)]
    text = records_to_csv(recs)
    assert text.splitlines()[1].endswith(",")


def test_report_plots_means_match_recomputation(tiny_run, tmp_path):
    _, result = tiny_run
    plots = report_plots(result.output_dir / "results.csv", tmp_path / "plots")
    assert sorted(p.name for p in (tmp_path / "plots").iterdir()) == ["dice.png", "hausdorff.png"]
    records = read_records(result.output_dir / "results.csv")
    sel = [r.dice for r in records
           if (r.method, r.stage, r.postproc) == ("rf", "rf", "post-dae") and not r.skipped]
    assert plots["dice"]["means"]["rf\npost-dae"] == pytest.approx(np.mean(sel))
    assert (tmp_path / "report.csv").exists() and (tmp_path / "significance.csv").exists()


def test_report_rejects_empty_csv(tmp_path):
    (tmp_path / "r.csv").write_text(",".join(EVAL_FIELDS) + "\n")
    with pytest.raises(SchemaError):
        report_plots(tmp_path / "r.csv")


def test_build_report_pairs_only_shared_images():
    recs = []
    for i in range(8):
        recs.append(EvalRecord(f"i{i}", "rf", "rf", "none", 0.5, 4.0, 4.0))
        recs.append(EvalRecord(f"i{i}", "rf", "rf", "post-dae", 0.6 + 0.01 * i, 2.0, 2.0))
        recs.append(EvalRecord.skipped_arm(f"i{i}", "rf", "rf", "crf")
                    if i < 5 else EvalRecord(f"i{i}", "rf", "rf", "crf", 0.55, 3.0, 3.0))
    report = build_report(recs)
    c = report.comparison("rf", "rf", "dice", "none", "post-dae")
    assert c.n == 8 and c.significant and c.pvalue == pytest.approx(2 / 256)
    crf = report.comparison("rf", "rf", "dice", "none", "crf")
    assert crf.n == 3 and np.isnan(crf.pvalue)
    s = report.summary("rf", "rf", "crf")
    assert (s.n, s.skipped) == (3, 5)
