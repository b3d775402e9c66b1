"""``dtic`` command line: composable stages with explicit artifact files.

    dtic simulate      --out raw.csv                      (+ raw.labels.csv)
    dtic preprocess    raw.csv --out cohort.json          (+ cohort.exclusions.json)
    dtic pretrain      cohort.json --out pre.json         (+ pre.log.csv)
    dtic cluster       cohort.json --model pre.json --k 4 --out model.json
    dtic select-k      cohort.json --model pre.json --out report.csv
    dtic assign        cohort.json --model model.json --out assignments.csv
    dtic export-plots  raw.csv --assignments assignments.csv --out plots.csv

Exit status: 0 success, 2 invalid input or artifact, 3 numeric failure.
"""
import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import gradcore as gc
from ._accel import set_threads
from .batch import PaddedCohort
from .clustering import DeadClusterError, assign_nearest
from .model import PARAM_ORDER, embed
from .modelsel import KReportConfig, format_report, k_report, write_report_csv
from .timeseries import (VARIABLES, Encounter, IrregularSeries, ScalerStats, SyntheticSpec,
                         clean_encounter, generate_synthetic_cohort, load_ranges, parse_cohort,
                         preprocess, ranges_from_dict, read_labels, resample_5min, write_cohort,
                         write_plot_csv)
from .trainer import (LOG_COLUMNS, TrainConfig, TrainedModel, TrainingDiverged, cluster_train,
                      finalize_labels, init_clusters, pretrain)

log = logging.getLogger("dtic")

FORMAT_VERSION = 1
EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


class ArtifactError(ValueError):
    """Missing, malformed or incompatible input file."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    ranges_path: str = None
    n_per_archetype: int = 500
    gap_references: int = 10
    gap_ref_n_init: int = 3
    min_cluster_frac: float = 0.01

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ValueError("config must be a JSON object")
        train_keys = {f.name for f in fields(TrainConfig)}
        own_keys = {f.name for f in fields(cls)} - {"train"}
        unknown = sorted(set(data) - train_keys - own_keys)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        train = TrainConfig(**{k: v for k, v in data.items() if k in train_keys})
        cfg = cls(train, **{k: v for k, v in data.items() if k in own_keys})
        cfg.validate()
        return cfg

    def validate(self):
        if int(self.n_per_archetype) < 1:
            raise ValueError("n_per_archetype must be positive")
        if int(self.gap_references) < 1 or int(self.gap_ref_n_init) < 1:
            raise ValueError("gap settings must be positive")
        if not 0.0 <= self.min_cluster_frac < 1.0:
            raise ValueError("min_cluster_frac must lie in [0, 1)")

    def as_dict(self):
        out = self.train.as_dict()
        out.update({k: v for k, v in asdict(self).items() if k != "train"})
        return out

    def ranges(self):
        return load_ranges(self.ranges_path)


def load_config(path, seed=None):
    data = {}
    if path is not None:
        data = json.loads(_read_text(path))
    if seed is not None:
        data = dict(data, seed=seed)
    return RunConfig.from_dict(data)


# ---------------------------------------------------------------------------
# artifact IO
# ---------------------------------------------------------------------------


def _read_text(path):
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _read_json(path, what):
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path} is not a valid {what} file: {exc}") from exc


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, allow_nan=False) + "\n", encoding="utf-8")


def _sibling(path, suffix):
    p = Path(path)
    return p.with_name(p.stem + suffix)


def _check_version(data, path, kind):
    if not isinstance(data, dict) or "format_version" not in data:
        raise ArtifactError(f"{path}: missing format_version")
    if data["format_version"] != FORMAT_VERSION:
        raise ArtifactError(f"{path}: format_version {data['format_version']} is not supported "
                            f"(expected {FORMAT_VERSION})")
    if kind is not None and data.get("kind") not in kind:
        raise ArtifactError(f"{path}: expected a {' or '.join(kind)} file, got {data.get('kind')!r}")


def _series_to_json(group):
    return {s.variable: {"t": s.t.tolist(), "x": s.x.tolist()} for s in group}


def _series_from_json(d):
    return [IrregularSeries(v, d[v]["t"], d[v]["x"]) for v in VARIABLES]


def save_cohort(path, encounters, scaler, ranges):
    _write_json(path, {
        "format_version": FORMAT_VERSION,
        "kind": "cohort",
        "scaler": scaler.as_dict(),
        "ranges": {v: r.as_dict() for v, r in ranges.items()},
        "encounters": [{
            "id": e.id,
            "series": _series_to_json(e.series),
            "seventh_hour": None if e.seventh_hour is None else _series_to_json(e.seventh_hour),
        } for e in encounters],
    })


def load_cohort(path):
    data = _read_json(path, "cohort")
    _check_version(data, path, ("cohort",))
    try:
        encounters = [Encounter(e["id"], _series_from_json(e["series"]),
                                None if e["seventh_hour"] is None else _series_from_json(e["seventh_hour"]))
                      for e in data["encounters"]]
        return encounters, ScalerStats.from_dict(data["scaler"]), ranges_from_dict(data["ranges"])
    except (KeyError, TypeError) as exc:
        raise ArtifactError(f"{path}: malformed cohort ({exc})") from exc


@dataclass
class ModelFile:
    kind: str  # "pretrain" or "cluster"
    config: dict
    params: dict
    scaler: ScalerStats
    centroids: np.ndarray = None
    checkpoint: dict = None
    stop_reason: str = None
    format_version: int = FORMAT_VERSION

    def to_json(self):
        out = {
            "format_version": self.format_version,
            "kind": self.kind,
            "config": self.config,
            "params": {k: self.params[k].tolist() for k in PARAM_ORDER if k in self.params},
            "centroids": None if self.centroids is None else self.centroids.tolist(),
            "mu": self.params["cluster.mu"].tolist() if "cluster.mu" in self.params else None,
            "scaler": self.scaler.as_dict(),
            "stop_reason": self.stop_reason,
        }
        if self.checkpoint is not None:
            out["checkpoint"] = _checkpoint_to_json(self.checkpoint)
        return out

    @classmethod
    def from_json(cls, data, path="<model>"):
        _check_version(data, path, ("pretrain", "cluster"))
        try:
            params = {k: np.asarray(v, dtype=np.float64) for k, v in data["params"].items()}
            for k in params:
                if k not in PARAM_ORDER:
                    raise ArtifactError(f"{path}: unknown parameter {k}")
            missing = [k for k in PARAM_ORDER[:-1] if k not in params]
            if missing:
                raise ArtifactError(f"{path}: missing parameters {missing}")
            cent = data.get("centroids")
            return cls(data["kind"], data["config"], params, ScalerStats.from_dict(data["scaler"]),
                       None if cent is None else np.asarray(cent, dtype=np.float64),
                       _checkpoint_from_json(data.get("checkpoint")), data.get("stop_reason"),
                       data["format_version"])
        except (KeyError, TypeError) as exc:
            raise ArtifactError(f"{path}: malformed model file ({exc})") from exc

    def save(self, path):
        _write_json(path, self.to_json())

    @classmethod
    def load(cls, path):
        return cls.from_json(_read_json(path, "model"), path)

    def train_config(self):
        return TrainConfig.from_dict(self.config["train"])


def _checkpoint_to_json(state):
    out = dict(state)
    out["params"] = {k: v.tolist() for k, v in state["params"].items()}
    out["adam"] = {"step": state["adam"]["step"],
                   "m": {k: v.tolist() for k, v in state["adam"]["m"].items()},
                   "v": {k: v.tolist() for k, v in state["adam"]["v"].items()}}
    out["sampler"] = dict(state["sampler"])
    return out


def _checkpoint_from_json(data):
    if data is None:
        return None
    out = dict(data)
    out["params"] = {k: np.asarray(v, dtype=np.float64) for k, v in data["params"].items()}
    adam = data["adam"]
    out["adam"] = {"step": adam["step"],
                   "m": {k: np.asarray(v, dtype=np.float64) for k, v in adam["m"].items()},
                   "v": {k: np.asarray(v, dtype=np.float64) for k, v in adam["v"].items()}}
    return out


def write_log_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for r in rows:
            writer.writerow(["" if r[c] is None else repr(r[c]) for c in LOG_COLUMNS])


def _model_config(cfg):
    return {"train": cfg.train.as_dict(), "run": {k: v for k, v in cfg.as_dict().items()
                                                   if k not in cfg.train.as_dict()}}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(args, cfg):
    cohort = generate_synthetic_cohort(SyntheticSpec(n_per_archetype=cfg.n_per_archetype), seed=cfg.train.seed)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        write_cohort(cohort, fh)
    with open(_sibling(args.out, ".labels.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("encounter_id", "label"))
        for e in cohort:
            writer.writerow((e.id, e.planted_label))
    log.info("simulated %d encounters -> %s", len(cohort), args.out)


def _parse_raw(path):
    text = _read_text(path)
    return parse_cohort(text)


def cmd_preprocess(args, cfg):
    ranges = load_ranges(args.ranges) if args.ranges else cfg.ranges()
    raw = _parse_raw(args.input)
    scaler = None
    if args.scaler_from:
        scaler = _scaler_from(args.scaler_from)
    scaled, scaler, report = preprocess(raw, ranges, scaler)
    if not scaled:
        raise ArtifactError("no eligible encounters after preprocessing")
    save_cohort(args.out, scaled, scaler, ranges)
    _write_json(_sibling(args.out, ".exclusions.json"), report.as_dict())
    log.info("%d of %d encounters eligible", report.n_eligible, report.n_input)


def _scaler_from(path):
    data = _read_json(path, "scaler source")
    _check_version(data, path, ("cohort", "pretrain", "cluster"))
    return ScalerStats.from_dict(data["scaler"])


def cmd_pretrain(args, cfg):
    cohort, scaler, _ = load_cohort(args.input)
    resume = None
    if args.resume:
        mf = ModelFile.load(args.resume)
        if mf.kind != "pretrain" or mf.checkpoint is None:
            raise ArtifactError(f"{args.resume}: not a resumable pretraining file")
        resume = mf.checkpoint
    try:
        model = pretrain(PaddedCohort.from_encounters(cohort), cfg.train, resume=resume)
    except TrainingDiverged as exc:
        if exc.checkpoint is not None:
            rescue = _sibling(args.out, ".diverged.json")
            ModelFile("pretrain", _model_config(cfg), exc.checkpoint["params"], scaler,
                      checkpoint=exc.checkpoint, stop_reason="diverged").save(rescue)
            log.error("last good state written to %s", rescue)
        raise
    ModelFile("pretrain", _model_config(cfg), model.params, scaler,
              checkpoint=model.checkpoint, stop_reason=model.stop_reason).save(args.out)
    write_log_csv(model.log, _sibling(args.out, ".log.csv"))


def _load_model(path, kinds):
    mf = ModelFile.load(path)
    if mf.kind not in kinds:
        raise ArtifactError(f"{path}: expected a {' or '.join(kinds)} model, got {mf.kind}")
    return mf


def _check_compatible(mf, cfg, path):
    held = mf.train_config()
    for name in ("grid_size", "hidden", "kappa"):
        if getattr(held, name) != getattr(cfg.train, name):
            raise ArtifactError(f"{path}: model {name}={getattr(held, name)} differs from config "
                                f"{name}={getattr(cfg.train, name)}")


def cmd_cluster(args, cfg):
    cohort, scaler, _ = load_cohort(args.input)
    mf = _load_model(args.model, ("pretrain",))
    _check_compatible(mf, cfg, args.model)
    if args.k is not None:
        cfg.train.k = args.k
        cfg.train.__post_init__()
    data = PaddedCohort.from_encounters(cohort)
    params = {k: v for k, v in mf.params.items() if k != "cluster.mu"}
    model = TrainedModel(cfg.train, params)
    init_clusters(model, data, cfg.train.k, cfg.train.seed)
    trained = cluster_train(model, data, cfg.train)
    final = finalize_labels(trained, data, cfg.train.seed)
    ModelFile("cluster", _model_config(cfg), trained.params, scaler, centroids=final.centroids,
              stop_reason=trained.stop_reason).save(args.out)
    write_log_csv(trained.log, _sibling(args.out, ".log.csv"))
    with open(_sibling(args.out, ".labels.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("encounter_id", "phenotype", "nearest", "argmax_q"))
        for i, e in enumerate(cohort):
            writer.writerow((e.id, int(final.labels[i]), int(final.nearest[i]), int(final.argmax_q[i])))
    log.info("cluster training stopped: %s", trained.stop_reason)


def _parse_ks(text):
    try:
        if "-" in text:
            lo, hi = (int(p) for p in text.split("-", 1))
            ks = list(range(lo, hi + 1))
        else:
            ks = [int(p) for p in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad k list {text!r}") from exc
    if not ks or min(ks) < 2:
        raise argparse.ArgumentTypeError("k values must be >= 2")
    return sorted(set(ks))


def cmd_select_k(args, cfg):
    cohort, _, _ = load_cohort(args.input)
    mf = _load_model(args.model, ("pretrain", "cluster"))
    Z = embed(mf.params, PaddedCohort.from_encounters(cohort), mf.train_config().dims)
    if max(args.ks) + 1 > len(cohort):
        raise ArtifactError("largest k must be below the number of encounters")
    kcfg = KReportConfig(B=cfg.gap_references, n_init=cfg.train.n_init, ref_n_init=cfg.gap_ref_n_init,
                         min_cluster_frac=cfg.min_cluster_frac, seed=cfg.train.seed)
    report = k_report(Z, args.ks, kcfg)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        write_report_csv(report, fh)
    Path(_sibling(args.out, ".txt")).write_text(format_report(report), encoding="utf-8")


def cmd_assign(args, cfg):
    cohort, _, _ = load_cohort(args.input)
    mf = _load_model(args.model, ("cluster",))
    if mf.centroids is None:
        raise ArtifactError(f"{args.model}: no phenotype centroids")
    Z = embed(mf.params, PaddedCohort.from_encounters(cohort), mf.train_config().dims)
    labels, dist = assign_nearest(Z, mf.centroids)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("encounter_id", "phenotype", "distance"))
        for e, lab, d in zip(cohort, labels, dist):
            writer.writerow((e.id, int(lab), repr(float(d))))


def cmd_export_plots(args, cfg):
    ranges = load_ranges(args.ranges) if args.ranges else cfg.ranges()
    raw = _parse_raw(args.input)
    with open(args.assignments, newline="", encoding="utf-8") as fh:
        labels = read_labels(fh, column="phenotype")
    cohort = [clean_encounter(e, ranges) for e in raw if e.id in labels]
    rows = resample_5min(cohort, labels)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        write_plot_csv(rows, fh)


COMMANDS = {
    "simulate": cmd_simulate,
    "preprocess": cmd_preprocess,
    "pretrain": cmd_pretrain,
    "cluster": cmd_cluster,
    "select-k": cmd_select_k,
    "assign": cmd_assign,
    "export-plots": cmd_export_plots,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="overrides the configured seed")
    common.add_argument("--threads", type=int, default=1, help="thread cap (default 1)")
    common.add_argument("--out", required=True, help="output artifact path")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dtic", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write a synthetic cohort with planted labels")
    p = sub.add_parser("preprocess", parents=[common], help="clean, impute and scale a raw CSV")
    p.add_argument("input")
    p.add_argument("--ranges", help="ranges JSON overriding the shipped table")
    p.add_argument("--scaler-from", help="reuse scaler stats from a cohort or model file")
    p = sub.add_parser("pretrain", parents=[common], help="reconstruction + auxiliary training")
    p.add_argument("input")
    p.add_argument("--resume", help="continue from a pretraining file")
    p = sub.add_parser("cluster", parents=[common], help="clustering pass and final labels")
    p.add_argument("input")
    p.add_argument("--model", required=True)
    p.add_argument("--k", type=int)
    p = sub.add_parser("select-k", parents=[common], help="cluster-count diagnostics")
    p.add_argument("input")
    p.add_argument("--model", required=True)
    p.add_argument("--ks", type=_parse_ks, default=list(range(2, 11)))
    p = sub.add_parser("assign", parents=[common], help="nearest-phenotype assignment")
    p.add_argument("input")
    p.add_argument("--model", required=True)
    p = sub.add_parser("export-plots", parents=[common], help="5-minute line-plot data")
    p.add_argument("input")
    p.add_argument("--assignments", required=True)
    p.add_argument("--ranges")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ValueError("--threads must be positive")
        cfg = load_config(args.config, args.seed)
        limiter = set_threads(args.threads)
        try:
            COMMANDS[args.command](args, cfg)
        finally:
            if limiter is not None:
                limiter.unregister()
    except (TrainingDiverged, gc.NonFiniteError, DeadClusterError, FloatingPointError) as exc:
        print(f"dtic {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, ArtifactError, KeyError, OSError) as exc:
        print(f"dtic {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
