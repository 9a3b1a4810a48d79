"""Command-line entry point: one subcommand per pipeline stage.

All stages read one INI file of flat ``[section]`` key = value blocks (see
``SCHEMA`` for every key and its default), write a resolved snapshot of it as
``config.resolved.ini`` into the output directory and exchange data through
files laid out under that directory::

    data/{train,query,gallery}.csv      synthetic feature vectors
    images/{train,query,gallery}/       synthetic PPM corpus + manifest.csv
    descriptors/{split}.csv             handcrafted features
    models/*.json                       PCA, metric and network parameters
    logs/*.json                         training traces and fit durations
    sweep/sweep.csv, sweep/summary.json
    eval/<method>.json, bench/<method>.json
    tradeoff.csv, tradeoff.json, scatter.csv

Failures print one JSON object on stderr and exit with the error's code.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import logging
import sys
import time
from pathlib import Path


from . import bench as bench_mod
from .dataset import (FeatureDataset, SplitSpec, SyntheticSpec, generate_synthetic,
                      generate_synthetic_images, load_csv, load_image_corpus, save_csv,
                      save_image_corpus, split_indices)
from .descriptor import DescriptorConfig, extract_corpus, extract_handcrafted
from .distill import (DistillConfig, SweepSpec, cache_teacher_outputs, run_sweep,
                      train_student_with_distillation)
from .errors import (ConfigurationError, ConsistencyError, MissingFileError, ReidLabError,
                     ShapeError, UsageError)
from .evaluation import EvalReport, ProtocolConfig, evaluate
from .metric import (PcaModel, XqdaModel, apply_pca, fit_kissme, fit_pca,
                     fit_xqda, load_model, pair_covariances, save_model)
from .neural import (MlpNetwork, MlpSpec, TrainConfig, accuracy, extract_deep_features,
                     init_network, load_network, save_network, train_classifier)

log = logging.getLogger("reidlab")

SPLITS = ("train", "query", "gallery")
METRICS = ("euclidean", "kissme", "xqda")

# section -> key -> (kind, default). Kinds: int, float, bool, str, ints, floats, opt_float.
SCHEMA = {
    "run": {"seed": ("int", 0), "out": ("str", "reidlab-out")},
    "data": {
        "num_identities": ("int", 20), "records_per_identity": ("int", 10),
        "num_cameras": ("int", 4), "dim": ("int", 32),
        "intra_class_stddev": ("float", 1.0), "camera_shift_stddev": ("float", 1.0),
        "class_center_stddev": ("float", 1.0),
        "train_fraction_of_identities": ("float", 0.5), "queries_per_test_identity": ("int", 1),
        "images": ("bool", True), "image_height": ("int", 128), "image_width": ("int", 64),
    },
    "descriptor": {
        "num_stripes": ("int", 8), "hue_bins": ("int", 8), "sat_bins": ("int", 8),
        "val_bins": ("int", 8), "texture_threshold": ("float", 0.03),
        "subwindow": ("int", 10), "subwindow_stride": ("int", 5),
    },
    "metric": {"method": ("str", "xqda"), "pca_dim": ("int", 64), "max_dim": ("int", 32),
               "ridge": ("opt_float", None)},
    "teacher": {"hidden_widths": ("ints", (256, 128)), "width_multiplier": ("float", 1.0)},
    "student": {"width_multiplier": ("float", 0.25)},
    "train": {
        "learning_rate": ("float", 0.05), "decay_factor": ("float", 0.1),
        "decay_every_steps": ("int", 20000), "momentum": ("float", 0.9),
        "batch_size": ("int", 32), "epochs": ("int", 30), "shuffle": ("bool", True),
    },
    "distill": {"temperature": ("float", 3.0), "lambda": ("float", 0.0001),
                "t2_scaling": ("bool", False)},
    "sweep": {"temperatures": ("floats", (1, 2, 3, 4, 5, 10, 15, 20, 25, 30)),
              "lambdas": ("floats", (0.0001, 0.001, 0.01)), "seeds": ("ints", (0,))},
    "protocol": {"exclude_same_camera_positives": ("bool", True)},
    "bench": {"warmup": ("int", 5), "repetitions": ("int", 3), "workers": ("int", 1),
              "num_items": ("int", 50)},
}


# ---------------------------------------------------------------------------
# Config


def _parse_value(kind, raw, where):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "opt_float":
            return None if raw.lower() in ("", "none", "auto") else float(raw)
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "ints":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if kind == "floats":
            return tuple(float(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ConfigurationError(f"{where}: cannot parse {raw!r} as {kind}") from None


def _format_value(kind, value):
    if value is None:
        return "auto"
    if kind == "bool":
        return "true" if value else "false"
    if kind in ("ints", "floats"):
        return ",".join(repr(v) for v in value)
    return repr(value) if kind in ("float", "opt_float") else str(value)


class RunConfig:
    """Resolved configuration: schema defaults, then the file, then CLI overrides."""

    def __init__(self, values: dict):
        self.values = values

    def __getitem__(self, section):
        return self.values[section]

    @classmethod
    def load(cls, path=None, seed=None, out=None) -> "RunConfig":
        values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise MissingFileError(f"config file not found: {path}")
            parser = configparser.ConfigParser(interpolation=None)
            try:
                parser.read(path, encoding="utf-8")
            except configparser.Error as exc:
                raise ConfigurationError(f"{path}: {exc}") from None
            for section in parser.sections():
                if section not in SCHEMA:
                    raise ConfigurationError(f"{path}: unknown section [{section}]")
                for key, raw in parser.items(section):
                    if key not in SCHEMA[section]:
                        raise ConfigurationError(f"{path}: unknown key {section}.{key}")
                    kind = SCHEMA[section][key][0]
                    values[section][key] = _parse_value(kind, raw, f"{section}.{key}")
        if seed is not None:
            values["run"]["seed"] = seed
        if out is not None:
            values["run"]["out"] = str(out)
        cfg = cls(values)
        cfg.validate()
        return cfg

    def validate(self):
        if self["metric"]["method"] not in METRICS:
            raise ConfigurationError(f"metric.method must be one of {METRICS}")
        if not 0 <= self["run"]["seed"] < 2 ** 64:
            raise ConfigurationError("run.seed must be an unsigned 64-bit integer")
        # constructing the typed configs runs their own checks
        self.synthetic_spec().validate()
        self.split_spec().validate()
        self.descriptor_config().validate()
        self.train_config()
        self.distill_config()
        self.sweep_spec()

    def to_ini(self, include_out=True) -> str:
        buf = io.StringIO()
        for section, keys in SCHEMA.items():
            buf.write(f"[{section}]\n")
            for key, (kind, _) in keys.items():
                if section == "run" and key == "out" and not include_out:
                    continue
                buf.write(f"{key} = {_format_value(kind, self[section][key])}\n")
            buf.write("\n")
        return buf.getvalue()

    @property
    def manifest_id(self) -> str:
        """Hash of everything except the output location."""
        return hashlib.sha256(self.to_ini(include_out=False).encode()).hexdigest()[:16]

    def section_hash(self, section: str) -> str:
        text = "".join(f"{k}={_format_value(kind, self[section][k])}\n"
                       for k, (kind, _) in SCHEMA[section].items())
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @property
    def out(self) -> Path:
        return Path(self["run"]["out"])

    def stage_seed(self, stage: str) -> int:
        digest = hashlib.sha256(f"{self['run']['seed']}:{stage}".encode()).digest()
        return int.from_bytes(digest[:4], "big")

    def synthetic_spec(self) -> SyntheticSpec:
        d = self["data"]
        return SyntheticSpec(d["num_identities"], d["records_per_identity"], d["num_cameras"],
                             d["dim"], d["intra_class_stddev"], d["camera_shift_stddev"],
                             d["class_center_stddev"])

    def split_spec(self) -> SplitSpec:
        d = self["data"]
        return SplitSpec(d["train_fraction_of_identities"], d["queries_per_test_identity"])

    def descriptor_config(self) -> DescriptorConfig:
        return DescriptorConfig(**self["descriptor"])

    def train_config(self, seed=0) -> TrainConfig:
        return TrainConfig(seed=seed, **self["train"])

    def distill_config(self, seed=0) -> DistillConfig:
        d = self["distill"]
        return DistillConfig(d["temperature"], d["lambda"], self.train_config(seed), d["t2_scaling"])

    def sweep_spec(self) -> SweepSpec:
        s = self["sweep"]
        return SweepSpec(s["temperatures"], s["lambdas"], s["seeds"])

    def protocol(self, metric=None) -> ProtocolConfig:
        return ProtocolConfig(self["protocol"]["exclude_same_camera_positives"], metric)

    def mlp_spec(self, role: str, input_dim: int, num_classes: int) -> MlpSpec:
        alpha = self["teacher" if role == "teacher" else "student"]["width_multiplier"]
        return MlpSpec(input_dim, self["teacher"]["hidden_widths"], num_classes, alpha)


# ---------------------------------------------------------------------------
# File helpers


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingFileError(f"required input not found: {path}")
    return path


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def _read_json(path: Path):
    with open(_require(path), encoding="utf-8") as fh:
        return json.load(fh)


def _load_split(cfg, folder, split) -> FeatureDataset:
    return load_csv(_require(cfg.out / folder / f"{split}.csv"))


def _handcrafted_name(cfg) -> str:
    return f"handcrafted+{cfg['metric']['method']}"


# ---------------------------------------------------------------------------
# Stages


def cmd_gen_data(cfg: RunConfig):
    spec = cfg.synthetic_spec()
    split = cfg.split_spec()
    ds = generate_synthetic(spec, cfg.stage_seed("gen-data/features"))
    for name, idx in zip(SPLITS, split_indices(ds.ids, split, cfg.stage_seed("split/features"))):
        (cfg.out / "data").mkdir(parents=True, exist_ok=True)
        save_csv(ds.subset(idx), cfg.out / "data" / f"{name}.csv")
    if cfg["data"]["images"]:
        corpus = generate_synthetic_images(spec, cfg["data"]["image_height"],
                                           cfg["data"]["image_width"],
                                           cfg.stage_seed("gen-data/images"))
        parts = split_indices(corpus.ids, split, cfg.stage_seed("split/images"))
        for name, idx in zip(SPLITS, parts):
            save_image_corpus(corpus.subset(idx), cfg.out / "images" / name)
    log.info("generated %d feature records", len(ds))


def cmd_extract(cfg: RunConfig):
    dcfg = cfg.descriptor_config()
    (cfg.out / "descriptors").mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        corpus = load_image_corpus(_require(cfg.out / "images" / name))
        save_csv(extract_corpus(corpus, dcfg), cfg.out / "descriptors" / f"{name}.csv")
        log.info("extracted %d %s descriptors", len(corpus), name)


def cmd_fit_metric(cfg: RunConfig):
    train = _load_split(cfg, "descriptors", "train")
    m = cfg["metric"]
    seed = cfg.stage_seed("fit-metric")
    start = time.perf_counter()
    pca = fit_pca(train.vectors, min(m["pca_dim"], train.dim, len(train) - 1))
    X = apply_pca(pca, train.vectors)
    pca_time = time.perf_counter() - start
    models = cfg.out / "models"
    models.mkdir(parents=True, exist_ok=True)
    save_model(pca, models / "pca.json")
    durations = {"pca_seconds": pca_time}
    if m["method"] != "euclidean":
        start = time.perf_counter()
        if m["method"] == "kissme":
            model = fit_kissme(*pair_covariances(X, train.ids, seed), m["ridge"], seed)
        else:
            model = fit_xqda(X, train.ids, train.cameras, m["max_dim"], m["ridge"], seed)
        durations[f"{m['method']}_seconds"] = time.perf_counter() - start
        save_model(model, models / "metric.json")
    _write_json(cfg.out / "logs" / "fit_metric.json", durations)


def _train_data(cfg):
    train = _load_split(cfg, "data", "train")
    labels, classes = train.dense_labels()
    return train, labels, len(classes)


def cmd_train(cfg: RunConfig, role: str):
    train, labels, num_classes = _train_data(cfg)
    spec = cfg.mlp_spec(role, train.dim, num_classes)
    net, tlog = train_classifier(spec, train.vectors, labels,
                                 cfg.train_config(cfg.stage_seed(f"train/{role}")))
    name = "teacher" if role == "teacher" else "student_independent"
    save_network(net, _out_file(cfg.out / "models", name))
    _write_json(cfg.out / "logs" / f"train_{role}.json",
                {**tlog.to_dict(), "train_accuracy": accuracy(net, train.vectors, labels)})
    log.info("%s train accuracy %.3f", role, accuracy(net, train.vectors, labels))


def _load_teacher(cfg, train):
    teacher = load_network(_require(cfg.out / "models" / "teacher.json"))
    if teacher.spec.input_dim != train.dim:
        raise ShapeError(f"teacher expects dimensionality {teacher.spec.input_dim}, "
                         f"training data has {train.dim}")
    return teacher


def cmd_distill(cfg: RunConfig):
    train, labels, num_classes = _train_data(cfg)
    teacher = _load_teacher(cfg, train)
    spec = cfg.mlp_spec("student", train.dim, num_classes)
    # same initialisation as the independently trained student
    seed = cfg.stage_seed("train/student")
    dcfg = cfg.distill_config(seed)
    student, tlog = train_student_with_distillation(
        cache_teacher_outputs(teacher, train.vectors), spec, train.vectors, labels, dcfg,
        init=init_network(spec, seed))
    save_network(student, _out_file(cfg.out / "models", "student_distilled"))
    _write_json(cfg.out / "logs" / "distill.json",
                {**tlog.to_dict(), "temperature": dcfg.temperature, "lambda": dcfg.lam})


def cmd_sweep(cfg: RunConfig):
    train, labels, num_classes = _train_data(cfg)
    teacher = _load_teacher(cfg, train)
    report = run_sweep(teacher, cfg.mlp_spec("student", train.dim, num_classes), train.vectors,
                       labels, _load_split(cfg, "data", "query"), _load_split(cfg, "data", "gallery"),
                       cfg.sweep_spec(), cfg.train_config(), cfg.protocol(),
                       cfg["distill"]["t2_scaling"])
    (cfg.out / "sweep").mkdir(parents=True, exist_ok=True)
    report.to_csv(cfg.out / "sweep" / "sweep.csv")
    report.write_summary(cfg.out / "sweep" / "summary.json")
    log.info("sweep finished: %d rows", len(report.rows))


def _deep_eval(net: MlpNetwork, query, gallery, protocol):
    q = query.with_vectors(extract_deep_features(net, query.vectors))
    g = gallery.with_vectors(extract_deep_features(net, gallery.vectors))
    return evaluate(q, g, protocol)


def _metric_model(cfg):
    path = cfg.out / "models" / "metric.json"
    return load_model(path) if cfg["metric"]["method"] != "euclidean" else None


def _handcrafted_methods(cfg):
    """(name, pca, metric) for each handcrafted row that can be evaluated."""
    if not (cfg.out / "models" / "pca.json").exists():
        return []
    pca = load_model(cfg.out / "models" / "pca.json")
    rows = [("handcrafted+euclidean", pca, None)]
    if cfg["metric"]["method"] != "euclidean":
        rows.append((_handcrafted_name(cfg), pca, _metric_model(cfg)))
    return rows


def _deep_methods(cfg):
    names = ("teacher", "student_independent", "student_distilled")
    return [(n, cfg.out / "models" / f"{n}.json") for n in names
            if (cfg.out / "models" / f"{n}.json").exists()]


def _feature_dim(pca: PcaModel, metric):
    return metric.dim if isinstance(metric, XqdaModel) else pca.out_dim


def cmd_eval(cfg: RunConfig, query=None, gallery=None, model=None, name=None):
    out = cfg.out / "eval"
    extra = {"manifest_id": cfg.manifest_id}
    if query is not None or gallery is not None:
        if query is None or gallery is None:
            raise UsageError("--query and --gallery must be given together")
        q, g = load_csv(_require(Path(query))), load_csv(_require(Path(gallery)))
        metric = None
        if model is not None:
            doc = _read_json(Path(model))
            if "layers" in doc:
                net = MlpNetwork.from_dict(doc)
                q = q.with_vectors(extract_deep_features(net, q.vectors))
                g = g.with_vectors(extract_deep_features(net, g.vectors))
            else:
                loaded = load_model(Path(model))
                if isinstance(loaded, PcaModel):
                    q = q.with_vectors(apply_pca(loaded, q.vectors))
                    g = g.with_vectors(apply_pca(loaded, g.vectors))
                else:
                    metric = loaded
        report = evaluate(q, g, cfg.protocol(metric))
        name = name or "custom"
        report.to_json(_out_file(out, name), {**extra, "method": name})
        print(json.dumps(report.to_dict()))
        return [report]

    reports = []
    for method, pca, metric in _handcrafted_methods(cfg):
        q = _load_split(cfg, "descriptors", "query")
        g = _load_split(cfg, "descriptors", "gallery")
        q, g = q.with_vectors(apply_pca(pca, q.vectors)), g.with_vectors(apply_pca(pca, g.vectors))
        report = evaluate(q, g, cfg.protocol(metric))
        report.to_json(_out_file(out, method), {**extra, "method": method,
                                                "feature_dim": _feature_dim(pca, metric),
                                                "param_count": None})
        reports.append(report)
    for method, path in _deep_methods(cfg):
        net = load_network(path)
        report = _deep_eval(net, _load_split(cfg, "data", "query"),
                            _load_split(cfg, "data", "gallery"), cfg.protocol())
        report.to_json(_out_file(out, method), {**extra, "method": method,
                                                "feature_dim": net.spec.feature_dim,
                                                "param_count": net.spec.parameter_count})
        reports.append(report)
    if not reports:
        raise MissingFileError(f"nothing to evaluate: no models under {cfg.out / 'models'}")
    return reports


def _out_file(directory: Path, method: str) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    return directory / f"{method}.json"


def _extractors(cfg):
    """name -> (callable on one input, inputs)."""
    n = cfg["bench"]["num_items"]
    found = {}
    hand = _handcrafted_methods(cfg)
    if hand:
        corpus = load_image_corpus(_require(cfg.out / "images" / "query"))
        images = corpus.images[:n]
        dcfg = cfg.descriptor_config()
        for method, pca, metric in hand:
            def run(img, pca=pca, metric=metric):
                f = apply_pca(pca, extract_handcrafted(img, dcfg))
                return f if metric is None else metric.transform(f)
            found[method] = (run, images)
    deep = _deep_methods(cfg)
    if deep:
        vectors = list(_load_split(cfg, "data", "query").vectors[:n])
        for method, path in deep:
            net = load_network(path)
            found[method] = ((lambda x, net=net: extract_deep_features(net, x)), vectors)
    return found


def cmd_bench(cfg: RunConfig, methods=None):
    available = _extractors(cfg)
    wanted = list(available) if not methods else methods
    unknown = [m for m in wanted if m not in available]
    if unknown:
        raise UsageError(f"cannot benchmark {unknown}; available: {sorted(available)}")
    b = cfg["bench"]
    results = []
    for method in wanted:
        fn, inputs = available[method]
        res = bench_mod.measure_throughput(method, fn, inputs, b["warmup"], b["repetitions"],
                                           b["workers"], cfg.manifest_id)
        # the file keeps the plain method name so report can pair it with eval output
        _write_json(_out_file(cfg.out / "bench", method), res.to_dict())
        log.info("%s: %.1f items/s", res.method, res.images_per_second)
        results.append(res)
    return results


def cmd_report(cfg: RunConfig):
    entries = []
    bench_dir, eval_dir = cfg.out / "bench", cfg.out / "eval"
    names = sorted(p.stem for p in bench_dir.glob("*.json")) if bench_dir.is_dir() else []
    for method in names:
        eval_path = eval_dir / f"{method}.json"
        if not eval_path.exists():
            log.warning("no evaluation for %s; skipped", method)
            continue
        ev = _read_json(eval_path)
        tp = bench_mod.ThroughputResult.from_dict(_read_json(bench_dir / f"{method}.json"))
        if ev.get("manifest_id") != tp.manifest_id:
            raise ConsistencyError(f"{method}: evaluation and benchmark come from different runs")
        entries.append(bench_mod.TradeoffEntry(method, EvalReport.from_dict(ev), tp,
                                               ev["feature_dim"], ev.get("param_count"),
                                               ev.get("manifest_id")))
    if not entries:
        raise MissingFileError(f"no paired eval/bench results under {cfg.out}")
    manifest = {
        "id": cfg.manifest_id,
        "seed": cfg["run"]["seed"],
        "sweep_seeds": list(cfg["sweep"]["seeds"]),
        "dataset_spec_hash": cfg.section_hash("data"),
        "config_hashes": {s: cfg.section_hash(s) for s in SCHEMA if s != "run"},
        "timing": "every method timed per item on the same CPU with a monotonic clock",
    }
    report = bench_mod.build_tradeoff_report(entries, manifest)
    report.write(cfg.out)
    return report


def cmd_pipeline(cfg: RunConfig):
    """gen-data, extract, fit-metric, train teacher and student, distill, sweep, eval, bench, report."""
    cmd_gen_data(cfg)
    if cfg["data"]["images"]:
        cmd_extract(cfg)
        cmd_fit_metric(cfg)
    cmd_train(cfg, "teacher")
    cmd_train(cfg, "student")
    cmd_distill(cfg)
    cmd_sweep(cfg)
    cmd_eval(cfg)
    cmd_bench(cfg)
    return cmd_report(cfg)


# ---------------------------------------------------------------------------
# Entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--seed", type=int, help="global seed (overrides run.seed)")
    common.add_argument("--out", help="output directory (overrides run.out)")
    common.add_argument("--quiet", action="store_true", help="only log warnings")

    parser = _Parser(prog="reidlab", description="Synthetic re-identification experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in [("gen-data", "generate synthetic features and images"),
                       ("extract", "handcrafted descriptors for the image corpus"),
                       ("fit-metric", "fit PCA and the configured metric"),
                       ("distill", "distil a student from the saved teacher"),
                       ("sweep", "distillation sweep over temperature and lambda"),
                       ("report", "combine eval and bench output into the trade-off report"),
                       ("pipeline", "run every stage in order")]:
        sub.add_parser(name, parents=[common], help=text)
    train = sub.add_parser("train", parents=[common], help="train a classifier network")
    train.add_argument("--role", choices=("teacher", "student"), required=True)
    ev = sub.add_parser("eval", parents=[common], help="CMC and mAP evaluation")
    ev.add_argument("--query", help="query feature CSV (default: every saved method)")
    ev.add_argument("--gallery", help="gallery feature CSV")
    ev.add_argument("--model", help="PCA, metric or network JSON applied before ranking")
    ev.add_argument("--name", help="output name for --query/--gallery evaluation")
    be = sub.add_parser("bench", parents=[common], help="feature extraction throughput")
    be.add_argument("--methods", help="comma-separated method names (default: all)")
    return parser


def _dispatch(args, cfg):
    if args.command == "train":
        return cmd_train(cfg, args.role)
    if args.command == "eval":
        return cmd_eval(cfg, args.query, args.gallery, args.model, args.name)
    if args.command == "bench":
        methods = [m.strip() for m in args.methods.split(",")] if args.methods else None
        return cmd_bench(cfg, methods)
    return {"gen-data": cmd_gen_data, "extract": cmd_extract, "fit-metric": cmd_fit_metric,
            "distill": cmd_distill, "sweep": cmd_sweep, "report": cmd_report,
            "pipeline": cmd_pipeline}[args.command](cfg)


def _fail(exc: Exception, code: int) -> int:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(doc), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                            format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
        cfg = RunConfig.load(args.config, args.seed, args.out)
        cfg.out.mkdir(parents=True, exist_ok=True)
        (cfg.out / "config.resolved.ini").write_text(cfg.to_ini(), encoding="utf-8")
        _dispatch(args, cfg)
    except ReidLabError as exc:
        return _fail(exc, exc.exit_code)
    except FileNotFoundError as exc:
        return _fail(exc, MissingFileError.exit_code)
    except Exception as exc:  # anything unexpected still yields the JSON contract
        return _fail(exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
