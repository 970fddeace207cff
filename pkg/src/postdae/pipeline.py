"""End-to-end experiment: train predictors, post-process their test masks, evaluate, report.

Outputs written under ``output_dir``::

    config.snapshot.json   fully resolved configuration of the run
    results.csv            one EvalRecord per (image, method, stage, postproc)
    timings.csv            wall-clock seconds per post-processing call
    report.csv             per-(method, stage, postproc) aggregates
    significance.csv       paired Wilcoxon tests between post-processing arms
    plots/dice.png, plots/hausdorff.png
    checkpoints/<name>/    one directory per trained model
    FAILED                 present only when the run aborted (partial results kept)
"""
from __future__ import annotations

import copy
import csv
import fnmatch
import io
import json
import logging
import math
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .crf import DenseCRFParams, crf_postprocess
from .dae import DAEArchitectureSpec, DAETrainConfig, binarize, load_dae, reconstruct, train_dae
from .data import DatasetManifest, ManifestEntry, SplitSpec, resize_to, split, synthetic_samples
from .errors import InvalidConfig, SchemaError
from .forest import RFConfig, load_rf, predict_rf, save_rf, train_rf
from .metrics import POSTPROC_ARMS, EvalRecord, read_records, records_to_csv
from .stats import MIN_N, wilcoxon_test
from .texture import GLCMConfig
from .unet import (
    UNetArchitectureSpec,
    UNetTrainConfig,
    load_unet,
    predict_unet,
    stage_name,
    train_unet,
)

log = logging.getLogger(__name__)

ALPHA = 0.05
COMPARISONS = (("none", "post-dae"), ("none", "crf"), ("crf", "post-dae"))


# ---------------------------------------------------------------- configuration

def default_config() -> dict[str, Any]:
    """Desk-scale synthetic experiment; every key can be overridden."""
    return {
        "seed": 0,
        "workers": 1,
        "output_dir": "runs/synthetic",
        "timings_in_results": False,
        "dataset": {
            "manifest": None,
            "root": None,
            "size": 128,
            "invert": True,
            "synthetic": {"count": 250, "spacing": 1.0},
            "split": {"train_frac": 0.7, "val_frac": 0.1, "test_frac": 0.2},
        },
        "dae": {
            "checkpoint": None,
            "threshold": 0.5,
            "architecture": {},
            "train": DAETrainConfig().to_dict(),
            "train_masks": "train",
        },
        "unet": {
            "enabled": True,
            "checkpoint": None,
            "architecture": {},
            "train": UNetTrainConfig(learning_rate=1e-4, max_epochs=40, patience=10).to_dict(),
        },
        "rf": {
            "enabled": True,
            "checkpoint": None,
            "glcm": GLCMConfig().to_dict(),
            "samples_per_image": 2000,
            "n_estimators": 100,
        },
        "crf": {
            "enabled": True,
            "params": DenseCRFParams().to_dict(),
            "stages": ["unet-converged", "rf"],
        },
    }


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in out:
            raise InvalidConfig(f"unknown config key {path + key!r}")
        if isinstance(out[key], dict) and isinstance(value, dict) and key not in ("architecture",):
            out[key] = _merge(out[key], value, f"{path}{key}.")
        else:
            out[key] = copy.deepcopy(value)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(config: dict, assignment: str) -> dict:
    """Apply one ``dotted.key=value`` assignment; values are parsed as JSON when possible."""
    if "=" not in assignment:
        raise InvalidConfig(f"override {assignment!r} is not KEY=VALUE")
    key, text = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = config
    for i, part in enumerate(parts[:-1]):
        if not isinstance(node.get(part), dict):
            raise InvalidConfig(f"unknown config key {'.'.join(parts[: i + 1])!r}")
        node = node[part]
    leaf = parts[-1]
    # architecture sections are free-form (validated by the spec classes)
    if leaf not in node and not (len(parts) >= 2 and parts[-2] == "architecture"):
        raise InvalidConfig(f"unknown config key {key!r}")
    node[leaf] = _parse_value(text)
    return config


@dataclass
class ExperimentConfig:
    """Resolved experiment configuration (a nested JSON document)."""

    data: dict[str, Any] = field(default_factory=default_config)

    def __post_init__(self):
        self.data = _merge(default_config(), self.data)
        self.validate()

    @classmethod
    def load(cls, path=None, overrides: Iterable[str] = ()) -> "ExperimentConfig":
        data = default_config() if path is None else _merge(default_config(), json.loads(Path(path).read_text()))
        for item in overrides:
            apply_override(data, item)
        return cls(data)

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def output_dir(self) -> Path:
        return Path(self.data["output_dir"])

    def validate(self) -> None:
        d = self.data
        if int(d["workers"]) < 1:
            raise InvalidConfig("workers must be >= 1")
        size = int(d["dataset"]["size"])
        self.split_spec()
        self.dae_spec(size)
        self.dae_train()
        self.unet_spec(size)
        self.unet_train()
        self.rf_config()
        self.crf_params()
        if not 0 < float(d["dae"]["threshold"]) < 1:
            raise InvalidConfig("dae.threshold must be in (0, 1)")
        if d["dae"]["train_masks"] not in ("train", "train+val"):
            raise InvalidConfig("dae.train_masks must be 'train' or 'train+val'")
        man = d["dataset"]["manifest"]
        if man is not None and not Path(man).exists():
            raise InvalidConfig(f"manifest {man} does not exist")
        for key in ("dae", "unet", "rf"):
            ck = d[key].get("checkpoint")
            if ck is not None and not Path(ck).exists():
                raise InvalidConfig(f"{key}.checkpoint {ck} does not exist")

    # typed views of the sections; the global seed feeds every random component
    def split_spec(self) -> SplitSpec:
        return SplitSpec(**self.data["dataset"]["split"], seed=self.seed)

    def dae_spec(self, size: int | None = None) -> DAEArchitectureSpec:
        arch = {"input_size": size or self.data["dataset"]["size"], **self.data["dae"]["architecture"]}
        return DAEArchitectureSpec.from_dict(arch)

    def dae_train(self) -> DAETrainConfig:
        return DAETrainConfig(**{**self.data["dae"]["train"], "seed": self.seed})

    def unet_spec(self, size: int | None = None) -> UNetArchitectureSpec:
        arch = {"input_size": size or self.data["dataset"]["size"], **self.data["unet"]["architecture"]}
        return UNetArchitectureSpec(**arch)

    def unet_train(self) -> UNetTrainConfig:
        return UNetTrainConfig(**{**self.data["unet"]["train"], "seed": self.seed})

    def rf_config(self) -> RFConfig:
        rf = self.data["rf"]
        return RFConfig(GLCMConfig(**rf["glcm"]), rf["samples_per_image"], rf["n_estimators"], self.seed)

    def crf_params(self) -> DenseCRFParams:
        return DenseCRFParams(**self.data["crf"]["params"])

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- data

@dataclass
class Sample:
    image_id: str
    image: np.ndarray
    mask: np.ndarray


@dataclass
class Folds:
    train: list[Sample]
    val: list[Sample]
    test: list[Sample]
    spacing: float


def _load_manifest_samples(manifest: DatasetManifest, size: int, invert: bool) -> list[Sample]:
    out = []
    for entry in manifest.entries:
        image = manifest.load_image(entry, invert=invert)
        mask = manifest.load_mask(entry)
        if image.shape != (size, size):
            image, _ = resize_to(image, size)
        if mask.shape != (size, size):
            mask, _ = resize_to(mask, size)
        out.append(Sample(entry.image_id, image, mask))
    return out


def load_folds(cfg: ExperimentConfig) -> Folds:
    """Materialise the train/val/test folds in memory at ``dataset.size``."""
    ds = cfg["dataset"]
    size = int(ds["size"])
    if ds["manifest"] is None:
        syn = ds["synthetic"]
        samples = [Sample(i, img, m) for i, img, m in synthetic_samples(int(syn["count"]), size, cfg.seed)]
        # in-memory samples; the manifest only carries ids for splitting
        manifest = DatasetManifest([ManifestEntry(s.image_id, "", "") for s in samples],
                                   float(syn["spacing"]), "synthetic")
        by_id = {s.image_id: s for s in samples}
        native_spacing, native_size = float(syn["spacing"]), size
    else:
        manifest = DatasetManifest.load(ds["manifest"], root=ds["root"])
        by_id = None
        native_spacing = manifest.spacing
        first = manifest.load_mask(manifest.entries[0]) if len(manifest) else None
        native_size = first.shape[0] if first is not None else size
    parts = split(manifest, cfg.split_spec())
    if by_id is None:
        folds = [_load_manifest_samples(p, size, bool(ds["invert"])) for p in parts]
    else:
        folds = [[by_id[i] for i in p.ids] for p in parts]
    spacing = native_spacing * native_size / size
    return Folds(*folds, spacing=spacing)


# ---------------------------------------------------------------- timing

def timed(fn: Callable, *args, **kwargs):
    """``(result, seconds)`` using a monotonic wall clock."""
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - start


@dataclass
class StageTiming:
    method: str
    stage: str
    postproc: str
    wall_s: float
    per_image_s: list[float]


# ---------------------------------------------------------------- post-processing arms

@dataclass
class Prediction:
    image_id: str
    image: np.ndarray
    prob: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return self.prob >= 0.5


def _crf_enabled(cfg: ExperimentConfig, method: str, stage: str) -> bool:
    if not cfg["crf"]["enabled"]:
        return False
    patterns = cfg["crf"]["stages"]
    if patterns == "all":
        return True
    return any(fnmatch.fnmatch(stage, p) for p in patterns)


def postprocess_stage(
    predictions: Sequence[Prediction],
    dae_net,
    cfg: ExperimentConfig,
    method: str,
    stage: str,
) -> tuple[dict[str, list[np.ndarray | None]], list[StageTiming]]:
    """Apply every post-processing arm to one stage's predictions.

    Returns the masks per arm (``None`` for skipped CRF images) and the timings.
    """
    workers = int(cfg["workers"])
    threshold = float(cfg["dae"]["threshold"])
    params = cfg.crf_params()
    masks = [p.mask for p in predictions]
    out: dict[str, list] = {"none": masks}
    timings = [StageTiming(method, stage, "none", 0.0, [0.0] * len(masks))]

    def run_dae(mask):
        return binarize(reconstruct(dae_net, [mask])[0], threshold)

    def run_crf(pred: Prediction):
        if pred.image.size > params.max_pixels:
            return None
        return crf_postprocess(np.clip(pred.image, 0, 1) * 255.0, pred.prob, params)

    arms: list[tuple[str, Callable, list]] = [("post-dae", run_dae, masks)]
    if _crf_enabled(cfg, method, stage):
        arms.append(("crf", run_crf, list(predictions)))
    else:
        out["crf"] = [None] * len(masks)
        timings.append(StageTiming(method, stage, "crf", 0.0, []))

    for arm, fn, inputs in arms:
        start = time.perf_counter()
        if workers == 1:
            results = [timed(fn, x) for x in inputs]
        else:
            with ThreadPoolExecutor(workers) as pool:
                results = list(pool.map(lambda x: timed(fn, x), inputs))
        wall = time.perf_counter() - start
        out[arm] = [r for r, _ in results]
        timings.append(StageTiming(method, stage, arm, wall,
                                   [s if r is not None else 0.0 for r, s in results]))
    return out, timings


def evaluate_stage(
    truths: Sequence[np.ndarray],
    ids: Sequence[str],
    arm_masks: dict[str, list],
    timings: Sequence[StageTiming],
    method: str,
    stage: str,
    spacing: float,
    with_runtime: bool,
) -> list[EvalRecord]:
    per_arm = {t.postproc: t.per_image_s for t in timings}
    records = []
    for arm in POSTPROC_ARMS:
        for k, (image_id, truth) in enumerate(zip(ids, truths)):
            pred = arm_masks[arm][k]
            if pred is None:
                records.append(EvalRecord.skipped_arm(image_id, method, stage, arm))
                continue
            rt = per_arm[arm][k] if with_runtime else None
            records.append(EvalRecord.measure(image_id, method, stage, arm, truth, pred, spacing, rt))
    return records


# ---------------------------------------------------------------- report

@dataclass
class ArmSummary:
    method: str
    stage: str
    postproc: str
    n: int
    skipped: int
    dice_mean: float
    dice_std: float
    hausdorff_px_mean: float
    hausdorff_px_std: float
    hausdorff_mm_mean: float
    hausdorff_mm_std: float


@dataclass
class Comparison:
    method: str
    stage: str
    metric: str
    arm_a: str
    arm_b: str
    n: int
    mean_a: float
    mean_b: float
    statistic: float
    pvalue: float

    @property
    def significant(self) -> bool:
        return bool(self.pvalue < ALPHA)


@dataclass
class ComparisonReport:
    summaries: list[ArmSummary]
    comparisons: list[Comparison]

    def summary(self, method: str, stage: str, postproc: str) -> ArmSummary:
        for s in self.summaries:
            if (s.method, s.stage, s.postproc) == (method, stage, postproc):
                return s
        raise KeyError((method, stage, postproc))

    def comparison(self, method, stage, metric, arm_a, arm_b) -> Comparison:
        for c in self.comparisons:
            if (c.method, c.stage, c.metric, c.arm_a, c.arm_b) == (method, stage, metric, arm_a, arm_b):
                return c
        raise KeyError((method, stage, metric, arm_a, arm_b))

    def summary_csv(self) -> str:
        return _dataclass_csv(self.summaries)

    def significance_csv(self) -> str:
        rows = [{**c.__dict__, "significant": c.significant} for c in self.comparisons]
        return _rows_csv(rows)


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def _rows_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})
    return buf.getvalue()


def _dataclass_csv(items) -> str:
    return _rows_csv([dict(i.__dict__) for i in items])


def _stat(values: list[float], fn) -> float:
    return float(fn(values)) if values else float("nan")


def build_report(records: Sequence[EvalRecord]) -> ComparisonReport:
    """Aggregates per arm and paired Wilcoxon tests on Dice and Hausdorff."""
    groups: dict[tuple[str, str], dict[str, dict[str, EvalRecord]]] = {}
    for r in records:
        groups.setdefault((r.method, r.stage), {}).setdefault(r.postproc, {})[r.image_id] = r
    summaries, comparisons = [], []
    for (method, stage) in sorted(groups):
        arms = groups[(method, stage)]
        for arm in POSTPROC_ARMS:
            recs = [r for _, r in sorted(arms.get(arm, {}).items())]
            done = [r for r in recs if not r.skipped]
            col = {k: [getattr(r, k) for r in done] for k in ("dice", "hausdorff_px", "hausdorff_mm")}
            summaries.append(ArmSummary(
                method, stage, arm, len(done), len(recs) - len(done),
                _stat(col["dice"], np.mean), _stat(col["dice"], np.std),
                _stat(col["hausdorff_px"], np.mean), _stat(col["hausdorff_px"], np.std),
                _stat(col["hausdorff_mm"], np.mean), _stat(col["hausdorff_mm"], np.std),
            ))
        for metric in ("dice", "hausdorff_mm"):
            for a, b in COMPARISONS:
                ra, rb = arms.get(a, {}), arms.get(b, {})
                # pair only images evaluated in both arms
                keys = sorted(k for k in ra.keys() & rb.keys()
                              if not ra[k].skipped and not rb[k].skipped)
                xa = np.array([getattr(ra[k], metric) for k in keys], dtype=float)
                xb = np.array([getattr(rb[k], metric) for k in keys], dtype=float)
                stat, p = float("nan"), float("nan")
                if np.count_nonzero(xa - xb) >= MIN_N:
                    res = wilcoxon_test(xa, xb)
                    stat, p = res.statistic, res.pvalue
                comparisons.append(Comparison(
                    method, stage, metric, a, b, len(keys),
                    _stat(list(xa), np.mean), _stat(list(xb), np.mean), stat, p,
                ))
    return ComparisonReport(summaries, comparisons)


def _group_label(method: str, stage: str) -> str:
    return stage if stage.startswith(method) else f"{method}:{stage}"


def _box_label(method: str, stage: str, arm: str) -> str:
    return f"{_group_label(method, stage)}\n{arm}"


def report_plots(csv_path, out_dir=None) -> dict[str, dict[str, Any]]:
    """Box plots (with mean markers) of Dice and Hausdorff per stage and arm.

    Writes ``dice.png`` and ``hausdorff.png`` to ``out_dir`` (default: a
    ``plots`` folder next to the CSV) plus ``report.csv`` and
    ``significance.csv`` next to the plots folder. Returns, per metric, the
    plot path and the annotated mean of every box.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    csv_path = Path(csv_path)
    records = read_records(csv_path)
    out_dir = Path(out_dir) if out_dir is not None else csv_path.parent / "plots"
    out_dir.mkdir(parents=True, exist_ok=True)
    report = build_report(records)
    (out_dir.parent / "report.csv").write_text(report.summary_csv())
    (out_dir.parent / "significance.csv").write_text(report.significance_csv())

    keys = sorted({(r.method, r.stage) for r in records})
    results = {}
    for metric, column, ylabel in (("dice", "dice", "Dice"),
                                   ("hausdorff", "hausdorff_mm", "Hausdorff distance")):
        data, labels, means = [], [], {}
        for method, stage in keys:
            for arm in POSTPROC_ARMS:
                vals = [getattr(r, column) for r in records
                        if (r.method, r.stage, r.postproc) == (method, stage, arm) and not r.skipped]
                if not vals:
                    continue
                label = _box_label(method, stage, arm)
                data.append(vals)
                labels.append(label)
                means[label] = float(np.mean(vals))
        fig, ax = plt.subplots(figsize=(max(6.0, 0.9 * len(data) + 2), 4.5))
        if data:
            ax.boxplot(data, showmeans=True, meanprops={"marker": "D", "markerfacecolor": "white"})
            ax.set_xticks(range(1, len(labels) + 1), labels, rotation=60, fontsize=7)
            for x, label in enumerate(labels, start=1):
                ax.annotate(f"{means[label]:.3g}", (x, means[label]), textcoords="offset points",
                            xytext=(8, 0), fontsize=6)
        ax.set_ylabel(ylabel)
        ax.set_title(f"{ylabel} by stage and post-processing (mean marked)")
        fig.tight_layout()
        path = out_dir / f"{metric}.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        results[metric] = {"path": path, "means": means}
    return results


def format_report(report: ComparisonReport) -> str:
    """Human-readable summary table for terminal output."""
    lines = [f"{'stage':24} {'arm':9} {'n':>4} {'dice':>15} {'hausdorff mm':>17}"]
    for s in report.summaries:
        if s.n == 0:
            lines.append(f"{_group_label(s.method, s.stage):24} {s.postproc:9} {'-':>4} {'skipped':>15}")
            continue
        lines.append(f"{_group_label(s.method, s.stage):24} {s.postproc:9} {s.n:4d} "
                     f"{s.dice_mean:7.4f}±{s.dice_std:<7.4f} {s.hausdorff_mm_mean:8.3f}±{s.hausdorff_mm_std:<8.3f}")
    lines.append("")
    for c in report.comparisons:
        if math.isnan(c.pvalue):
            continue
        star = " *" if c.significant else ""
        lines.append(f"{_group_label(c.method, c.stage):24} {c.metric:13} {c.arm_a:>8} vs {c.arm_b:<8} "
                     f"p={c.pvalue:.3g}{star}")
    return "\n".join(lines)


# ---------------------------------------------------------------- experiment

@dataclass
class ExperimentResult:
    output_dir: Path
    records: list[EvalRecord]
    report: ComparisonReport
    timings: list[StageTiming]


def _write_timings(timings: Sequence[StageTiming], ids: Sequence[str], path: Path) -> None:
    rows = []
    for t in timings:
        for image_id, s in zip(ids, t.per_image_s):
            rows.append({"method": t.method, "stage": t.stage, "postproc": t.postproc,
                         "image_id": image_id, "runtime_s": s})
        rows.append({"method": t.method, "stage": t.stage, "postproc": t.postproc,
                     "image_id": "*stage-wall-clock*", "runtime_s": t.wall_s})
    path.write_text(_rows_csv(rows))


def obtain_dae(cfg: ExperimentConfig, masks: Sequence[np.ndarray], ckpt_dir: Path | None):
    """Load the configured DAE checkpoint or train one on ``masks`` (never on images)."""
    if cfg["dae"]["checkpoint"]:
        ckpt = load_checkpoint(cfg["dae"]["checkpoint"])
    else:
        ckpt = train_dae(masks, cfg.dae_train(), cfg.dae_spec())
    if ckpt_dir is not None:
        save_checkpoint(ckpt, ckpt_dir / "dae")
    return ckpt


def unet_stages(cfg: ExperimentConfig, folds: Folds, ckpt_dir: Path | None):
    if cfg["unet"]["checkpoint"]:
        ckpts = [load_checkpoint(cfg["unet"]["checkpoint"])]
    else:
        ckpts = train_unet([s.image for s in folds.train], [s.mask for s in folds.train],
                           cfg.unet_train(), [s.image for s in folds.val],
                           [s.mask for s in folds.val], cfg.unet_spec())
    for ck in ckpts:
        name = stage_name(ck)
        if ckpt_dir is not None:
            save_checkpoint(ck, ckpt_dir / name)
        yield name, ck


def run_experiment(cfg: ExperimentConfig, log_progress: Callable[[str], None] | None = None
                   ) -> ExperimentResult:
    """Run the full protocol and write every artifact under ``cfg.output_dir``."""
    say = log_progress or log.info
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "FAILED").unlink(missing_ok=True)
    (out / "config.snapshot.json").write_text(cfg.to_json())
    ckpt_dir = out / "checkpoints"
    records: list[EvalRecord] = []
    timings: list[StageTiming] = []
    with_runtime = bool(cfg["timings_in_results"])
    try:
        folds = load_folds(cfg)
        say(f"folds: train={len(folds.train)} val={len(folds.val)} test={len(folds.test)} "
            f"spacing={folds.spacing:g}")
        dae_masks = [s.mask for s in folds.train]
        if cfg["dae"]["train_masks"] == "train+val":
            dae_masks += [s.mask for s in folds.val]
        dae_ckpt = obtain_dae(cfg, dae_masks, ckpt_dir)
        dae_net = load_dae(dae_ckpt)
        say(f"dae ready (epoch {dae_ckpt.epoch})")

        test_ids = [s.image_id for s in folds.test]
        test_images = [s.image for s in folds.test]
        truths = [s.mask for s in folds.test]

        def evaluate(method: str, stage: str, probs: Sequence[np.ndarray]):
            preds = [Prediction(i, img, p) for i, img, p in zip(test_ids, test_images, probs)]
            arm_masks, stage_timings = postprocess_stage(preds, dae_net, cfg, method, stage)
            timings.extend(stage_timings)
            records.extend(evaluate_stage(truths, test_ids, arm_masks, stage_timings,
                                          method, stage, folds.spacing, with_runtime))
            say(f"evaluated {method}:{stage}")

        if cfg["unet"]["enabled"]:
            for stage, ck in unet_stages(cfg, folds, ckpt_dir):
                evaluate("unet", stage, predict_unet(load_unet(ck), test_images))
        if cfg["rf"]["enabled"]:
            if cfg["rf"]["checkpoint"]:
                rf = load_rf(cfg["rf"]["checkpoint"])
            else:
                rf = train_rf([s.image for s in folds.train], [s.mask for s in folds.train],
                              cfg.rf_config())
            save_rf(rf, ckpt_dir / "rf")
            evaluate("rf", "rf", [predict_rf(rf, img) for img in test_images])
    except BaseException:
        if records:
            records_to_csv(records, out / "results.csv")
        (out / "FAILED").write_text(traceback.format_exc())
        raise

    records_to_csv(records, out / "results.csv")
    _write_timings(timings, test_ids, out / "timings.csv")
    if not records:
        raise SchemaError("experiment produced no records (all predictors disabled?)")
    report_plots(out / "results.csv", out / "plots")
    report = build_report(records)
    return ExperimentResult(out, records, report, timings)
