"""Reproducible runs: ingest -> split -> build -> train -> evaluate -> write artifacts."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data, gradcheck, metrics, report, train, zoo
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .errors import ConfigError
from .graph import Model
from .tensor import deterministic_threads, set_deterministic

log = logging.getLogger(__name__)

MANIFEST = "manifest.txt"
CHECKPOINT = "model.ckpt"
TIMINGS_SECTION = "timings"


@dataclass
class Manifest:
    """Ordered ``[section]`` blocks of ``key = value`` lines; timings live in their own section."""

    sections: dict[str, dict[str, str]] = field(default_factory=dict)

    def set(self, section: str, key: str, value) -> None:
        if isinstance(value, float):
            value = repr(value)
        self.sections.setdefault(section, {})[key] = str(value)

    def render(self) -> str:
        lines = ["# malaria_cnn run manifest"]
        for name, entries in self.sections.items():
            lines.append(f"[{name}]")
            lines.extend(f"{k} = {v}" for k, v in entries.items())
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse(text: str) -> "Manifest":
        m = Manifest()
        section = None
        for line in text.splitlines():
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1]
                m.sections.setdefault(section, {})
                continue
            k, v = line.split(" = ", 1)
            m.sections[section][k] = v
        return m


def without_timings(manifest_text: str) -> str:
    """The manifest text minus its timing section, for determinism comparisons."""
    out, skip = [], False
    for line in manifest_text.splitlines():
        if line.startswith("["):
            skip = line == f"[{TIMINGS_SECTION}]"
        if not skip:
            out.append(line)
    return "\n".join(out) + "\n"


def train_config(cfg: RunConfig) -> train.TrainConfig:
    return train.TrainConfig(
        learning_rate=cfg["train.learning_rate"], batch_size=cfg["train.batch_size"],
        epochs=cfg["train.epochs"], adam_beta1=cfg["train.adam_beta1"], adam_beta2=cfg["train.adam_beta2"],
        adam_eps=cfg["train.adam_eps"], seed=cfg["train.seed"], deterministic=cfg["train.deterministic"])


def _dtype(cfg: RunConfig):
    name = cfg["model.dtype"]
    if name not in ("float32", "float64"):
        raise ConfigError(f"model.dtype must be float32 or float64, got {name!r}")
    return np.dtype(name)


def load_records(cfg: RunConfig) -> list[data.LabeledImage]:
    size = cfg["model.input_size"]
    n_synth = cfg["data.synthetic"]
    if n_synth:
        return data.synthetic_dataset(n_synth, (size, size), seed=cfg["data.split_seed"])
    root = cfg.data_root()
    if root is None:
        raise ConfigError("no data source: set data.root, MALARIA_DATA_DIR, or data.synthetic")
    skipped: list[data.SkippedFile] = []
    records = data.load_image_dataset(root, (size, size), workers=cfg["data.workers"], skipped=skipped,
                                      fraction=cfg["data.fraction"], seed=cfg["data.split_seed"])
    if skipped:
        log.warning("skipped %d unreadable files, e.g. %s", len(skipped), skipped[0].source_id)
    return records


def build_model(cfg: RunConfig, arch: str | None = None) -> Model:
    size = cfg["model.input_size"]
    return zoo.build(arch or cfg["model.arch"], (size, size, 3), cfg["model.scale"], seed=cfg["train.seed"],
                     dtype=_dtype(cfg), head_only_trainable=cfg["model.head_only_trainable"])


def fit(model: Model, optimizer: train.Adam, records, split: data.DatasetSplit, tcfg: train.TrainConfig,
        start_epoch: int = 0, epochs: int | None = None, on_epoch=None) -> list[dict]:
    """Train epochs ``start_epoch .. start_epoch + epochs - 1``, validating after each one."""
    history = []
    epochs = tcfg.epochs if epochs is None else epochs
    for epoch in range(start_epoch, start_epoch + epochs):
        t0 = time.perf_counter()
        stats = train.train_epoch(model, data.batch_iter(records, split.train, tcfg.batch_size, tcfg.seed, epoch),
                                  optimizer, tcfg.seed)
        val = train.evaluate(model, data.batch_iter(records, split.validation, tcfg.batch_size, shuffle=False))
        rec = {"epoch": epoch + 1, "train_loss": stats.loss, "train_accuracy": stats.accuracy,
               "val_loss": val.loss, "val_accuracy": val.accuracy, "seconds": time.perf_counter() - t0}
        log.info("epoch %d: train loss %.4f acc %.4f | val loss %.4f acc %.4f", rec["epoch"], stats.loss,
                 stats.accuracy, val.loss, val.accuracy)
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return history


@dataclass
class TrainResult:
    manifest: Manifest
    test_report: metrics.MetricsReport
    test_eval: train.EvalResult
    out_dir: Path
    history: list[dict]


def _report_sections(m: Manifest, section: str, ev: train.EvalResult, rep: metrics.MetricsReport) -> None:
    m.set(section, "loss", ev.loss)
    m.set(section, "accuracy", rep.accuracy)
    c = rep.confusion
    for k in ("tn", "fp", "fn", "tp"):
        m.set(section, f"confusion.{k}", getattr(c, k))
    for cls, v in rep.per_class.items():
        m.set(section, f"{cls}.precision", v.precision)
        m.set(section, f"{cls}.recall", v.recall)
        m.set(section, f"{cls}.f1", v.f1)
    m.set(section, "auc_roc", rep.auc_roc)
    m.set(section, "rmse", rep.rmse)
    m.set(section, "n", rep.n)
    m.set(section, "flags", ",".join(rep.flags) or "none")


def cmd_train(cfg: RunConfig, out_dir: str | Path | None = None, arch: str | None = None,
              records=None, split: data.DatasetSplit | None = None) -> TrainResult:
    out = Path(out_dir or cfg["run.out"])
    arch = arch or cfg["model.arch"]
    set_deterministic(cfg["train.deterministic"])
    timings: dict[str, float] = {}
    t_start = time.perf_counter()
    with deterministic_threads():
        t0 = time.perf_counter()
        if records is None:
            records = load_records(cfg)
        if split is None:
            split = data.split_811(len(records), cfg["data.split_seed"])
        timings["ingest_seconds"] = time.perf_counter() - t0

        tcfg = train_config(cfg)
        model = build_model(cfg, arch)
        optimizer = train.Adam.from_config(tcfg)
        start_epoch = 0
        resume = cfg["train.resume"]
        if resume:
            ckpt = load_checkpoint(resume)
            ckpt.restore(model, optimizer)
            start_epoch = ckpt.epoch
        t0 = time.perf_counter()
        history = fit(model, optimizer, records, split, tcfg, start_epoch=start_epoch)
        timings["train_seconds"] = time.perf_counter() - t0
        test_eval = train.evaluate(model, data.batch_iter(records, split.test, tcfg.batch_size, shuffle=False))
        test_report = metrics.evaluate_predictions(test_eval.probs[:, 1], test_eval.labels)

    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / CHECKPOINT, model, optimizer, epoch=start_epoch + len(history))
    name = zoo.DISPLAY_NAMES.get(arch, arch)
    report.atomic_write(out / "report.txt", report.render_report({name: test_report}, "table"))
    report.atomic_write(out / "report.csv", report.render_report({name: test_report}, "csv"))
    report.emit_accuracy_chart({name: test_report.accuracy}, out / "chart.svg")

    m = Manifest()
    for key, value in cfg.items():
        m.set("config", key, value)
    m.set("config", "model.arch", arch)
    for key, src in cfg.source.items():
        m.set("config.source", key, src)
    m.set("config.resolved", "data.root", cfg.data_root() or "none")
    m.set("seeds", "train.seed", tcfg.seed)
    m.set("seeds", "data.split_seed", split.seed)
    m.set("model", "name", model.name)
    m.set("model", "input_shape", "x".join(map(str, model.input_shape)))
    m.set("model", "scale", model.scale)
    counts = model.count_params()
    m.set("model", "params.trainable", counts.trainable)
    m.set("model", "params.non_trainable", counts.non_trainable)
    for k, v in model.metadata.items():
        m.set("model", f"metadata.{k}", v)
    for part in ("train", "validation", "test"):
        idx = getattr(split, part)
        m.set("split", f"{part}.size", len(idx))
        for cls, count in data.class_counts(records, idx).items():
            m.set("split", f"{part}.{cls}", count)
    m.set("epochs", "start_epoch", start_epoch)
    m.set("epochs", "count", len(history))
    for rec in history:
        for k in ("train_loss", "train_accuracy", "val_loss", "val_accuracy"):
            m.set("epochs", f"epoch.{rec['epoch']}.{k}", rec[k])
    _report_sections(m, "test", test_eval, test_report)
    for k, fname in (("checkpoint", CHECKPOINT), ("report_txt", "report.txt"), ("report_csv", "report.csv"),
                     ("chart_svg", "chart.svg"), ("chart_csv", "chart.csv")):
        m.set("artifacts", k, fname)
    for rec in history:
        m.set(TIMINGS_SECTION, f"epoch.{rec['epoch']}.seconds", rec["seconds"])
    for k, v in timings.items():
        m.set(TIMINGS_SECTION, k, v)
    m.set(TIMINGS_SECTION, "total_seconds", time.perf_counter() - t_start)
    report.atomic_write(out / MANIFEST, m.render())
    return TrainResult(m, test_report, test_eval, out, history)


def cmd_evaluate(checkpoint_path: str | Path, cfg: RunConfig) -> tuple[metrics.MetricsReport, str]:
    """Rebuild the checkpointed model, evaluate on the configured test split, return the report and its table row."""
    ckpt = load_checkpoint(checkpoint_path)
    if ckpt.model_name not in zoo.REGISTRY:
        raise ConfigError(f"checkpoint architecture {ckpt.model_name!r} is not in the registry")
    dtype = next(iter(ckpt.tensors.values())).dtype
    model = zoo.build(ckpt.model_name, ckpt.input_shape, ckpt.scale, dtype=dtype,
                      head_only_trainable=ckpt.head_only_trainable if ckpt.model_name in
                      ("vgg19", "densenet121", "xception") else None)
    ckpt.restore(model)
    cfg = RunConfig(dict(cfg.raw), dict(cfg.source))
    cfg.raw["model.input_size"] = str(model.input_shape[0])
    set_deterministic(cfg["train.deterministic"])
    with deterministic_threads():
        records = load_records(cfg)
        split = data.split_811(len(records), cfg["data.split_seed"])
        ev = train.evaluate(model, data.batch_iter(records, split.test, cfg["train.batch_size"], shuffle=False))
    rep = metrics.evaluate_predictions(ev.probs[:, 1], ev.labels)
    name = zoo.DISPLAY_NAMES.get(ckpt.model_name, ckpt.model_name)
    return rep, report.render_report({name: rep}, "table")


def cmd_compare(cfg: RunConfig, out_dir: str | Path | None = None) -> dict[str, TrainResult]:
    """Train and evaluate each architecture on one shared split; write the combined table and chart."""
    out = Path(out_dir or cfg["run.out"])
    archs = cfg["compare.archs"]
    if not archs:
        raise ConfigError("compare.archs is empty")
    unknown = [a for a in archs if a not in zoo.REGISTRY]
    if unknown:
        raise ConfigError(f"unknown architecture(s) {', '.join(unknown)}; valid names: {', '.join(zoo.REGISTRY)}")
    set_deterministic(cfg["train.deterministic"])
    records = load_records(cfg)
    split = data.split_811(len(records), cfg["data.split_seed"])

    def run(arch):
        log.info("training %s", arch)
        return arch, cmd_train(cfg, out / arch, arch=arch, records=records, split=split)

    if cfg["compare.parallel"]:
        with ThreadPoolExecutor(max_workers=len(archs)) as pool:
            results = dict(pool.map(run, archs))
    else:
        results = dict(run(a) for a in archs)

    reports = {zoo.DISPLAY_NAMES[a]: results[a].test_report for a in archs}
    report.atomic_write(out / "report.txt", report.render_report(reports, "table"))
    report.atomic_write(out / "report.csv", report.render_report(reports, "csv"))
    report.emit_accuracy_chart({k: r.accuracy for k, r in reports.items()}, out / "chart.svg")
    return results


@dataclass
class CheckLine:
    name: str
    passed: bool
    detail: str


def cmd_gradcheck(overrides=None, seed: int = 0) -> list[CheckLine]:
    lines = []
    for rep in gradcheck.run_suite(overrides, seed=seed):
        worst = max(rep.errors, key=rep.errors.get)
        lines.append(CheckLine(rep.kind, rep.passed, f"max rel err {rep.max_error:.3e} ({worst})"))
    return lines


PARAM_ANCHORS = {
    ("custom_cnn", "block1"): 1024,
    ("custom_cnn", "block2"): 18752,
    ("custom_cnn", "block3"): 74368,
    ("custom_cnn", "output"): 258,
    ("vgg19", "trainable"): 4_195_842,
}


def cmd_paramcheck(scale=1, input_size: int = 128) -> tuple[list[CheckLine], str]:
    """Check the published parameter anchors and return per-architecture count tables."""
    checks: list[CheckLine] = []
    tables = []
    models = {name: zoo.build(name, (input_size, input_size, 3), scale) for name in zoo.REGISTRY}
    applicable = float(scale) == 1.0 and input_size == 128
    for (arch, what), expected in PARAM_ANCHORS.items():
        counts = models[arch].count_params()
        if what == "trainable":
            got = counts.trainable
        elif what in counts.blocks:
            got = counts.block_total(what)
        else:
            got = sum(counts.per_node[what])
        label = f"{arch} {what}"
        if not applicable:
            checks.append(CheckLine(label, True, f"not applicable (scale != 1 or input != 128); got {got:,}"))
        else:
            checks.append(CheckLine(label, got == expected, f"expected {expected:,}, got {got:,}"))
    for name, m in models.items():
        c = m.count_params()
        tables.append(f"{name:<14} total {c.total:>12,}  trainable {c.trainable:>12,}  "
                      f"non-trainable {c.non_trainable:>12,}")
    return checks, "\n".join(tables)
