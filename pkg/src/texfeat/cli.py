"""Command-line operator surface.

Subcommands: extract, reconstruct, train, eval, gradcheck, params.

Configuration is a flat "key = value" text file with dotted section keys
(feature.kind, train.epochs, data.source); the same keys can be supplied or
overridden on the command line with repeated --set key=value.  Any value may
hold a comma-separated list, which train expands into a cartesian run grid.

Every artifact-producing command creates its output directory atomically and
echoes the fully resolved configuration to config.txt before doing work;
re-running that echo reproduces the artifacts bit-identically (timings are
printed to the console, never written into artifacts).

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .classic import LBP_VARIANTS, EHDConfig, LBPConfig, ehd, lbp_code_map, lbp_feature, var_bin_map, lbp_var_map
from .data import Dataset, load_idx, load_image_dir
from .neural import FeatureSpec, feature_forward
from .reconstruct import classic_maps, compare, map_configs
from .synth import make_garments_dataset
from .tensor import save_tensor
from .training import ShallowClassifier, TrainConfig, evaluate, param_count, run_experiment

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we reserve that for data errors
        raise CliError(f"{self.prog}: {message}", EXIT_USAGE)


# --- configuration ---------------------------------------------------------


def parse_config_file(path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CliError(f"cannot read config file {path}: {exc}", EXIT_USAGE)
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        if "=" not in line:
            col = len(line) - len(line.lstrip()) + 1
            raise CliError(f"{path}:{lineno}:{col}: expected 'key = value'", EXIT_USAGE)
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            col = line.index("=") + 1
            raise CliError(f"{path}:{lineno}:{col}: missing key before '='", EXIT_USAGE)
        out[key] = value.strip()
    return out


def resolve_config(args, command: str) -> dict[str, str]:
    cfg: dict[str, str] = {}
    if getattr(args, "config", None):
        cfg.update(parse_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}", EXIT_USAGE)
        key, value = item.split("=", 1)
        cfg[key.strip()] = value.strip()
    echoed = cfg.get("command")
    if echoed and echoed != command:
        raise CliError(f"config was echoed by {echoed!r} but given to {command!r}", EXIT_USAGE)
    cfg["command"] = command
    return cfg


def expand_grid(cfg: dict[str, str]) -> list[dict[str, str]]:
    """Comma-separated values become axes of a cartesian run grid."""
    axes = {k: [p.strip() for p in v.split(",")] for k, v in cfg.items() if "," in v}
    if not axes:
        return [dict(cfg)]
    keys = sorted(axes)
    points = []
    for combo in itertools.product(*(axes[k] for k in keys)):
        point = dict(cfg)
        point.update(dict(zip(keys, combo)))
        points.append(point)
    return points


def _get(cfg: dict, key: str, default=None, cast=str):
    if key not in cfg:
        return default
    raw = cfg[key]
    try:
        if cast is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return cast(raw)
    except ValueError:
        raise CliError(f"config key {key} = {raw!r} is not a valid {cast.__name__}", EXIT_USAGE)


def _optional_int(cfg, key, default=None):
    if key not in cfg or cfg[key].lower() in ("", "none"):
        return default
    return _get(cfg, key, default, int)


def build_feature_spec(cfg: dict[str, str]) -> FeatureSpec:
    learn = _get(cfg, "feature.learn", "both")
    if learn not in ("both", "structural", "statistical", "none"):
        raise CliError(f"feature.learn must be both/structural/statistical/none, got {learn!r}", EXIT_USAGE)
    kind = _get(cfg, "feature.kind", "nehd")
    if kind not in ("nehd", "nlbp"):
        raise CliError(f"feature.kind must be nehd or nlbp, got {kind!r}", EXIT_USAGE)
    return FeatureSpec(
        kind=kind,
        init=_get(cfg, "feature.init", "paper"),
        bins=_get(cfg, "feature.bins", 0, int),
        learn_structural=learn in ("both", "structural"),
        learn_statistical=learn in ("both", "statistical"),
        no_edge_mode=_get(cfg, "feature.no_edge_mode", "learned"),
        fixed_base=_get(cfg, "feature.fixed_base", False, bool),
        activation=_get(cfg, "feature.activation", "modified_relu"),
        dilation=_get(cfg, "feature.dilation", 1, int),
        window=_get(cfg, "feature.window", 5, int),
        stride=_optional_int(cfg, "feature.stride"),
        padding=_optional_int(cfg, "feature.padding"),
        threshold=_get(cfg, "feature.threshold", 0.9, float),
        normalize_kernels=_get(cfg, "feature.normalize_kernels", False, bool),
    )


def load_dataset(cfg: dict[str, str], role: str = "data") -> Dataset:
    """role selects the key prefix: data.* for extraction, data.test_* for eval/test."""
    source = _get(cfg, "data.source", "synthetic")
    prefix = "data.test_" if role == "test" else "data."
    try:
        if source == "synthetic":
            per_class = _get(cfg, prefix + "per_class", 10 if role != "test" else 5, int)
            seed = _get(cfg, "data.seed", 0, int) + (1000 if role == "test" else 0)
            return make_garments_dataset(per_class=per_class, seed=seed)
        if source == "idx":
            images = cfg.get(prefix + "images")
            labels = cfg.get(prefix + "labels")
            if not images or not labels:
                raise CliError(f"idx source needs {prefix}images and {prefix}labels", EXIT_USAGE)
            return load_idx(images, labels)
        if source == "dir":
            root = cfg.get(prefix + "root")
            if not root:
                raise CliError(f"dir source needs {prefix}root", EXIT_USAGE)
            return load_image_dir(
                root,
                resize=_optional_int(cfg, "data.resize"),
                crop=_optional_int(cfg, "data.crop"),
            )
    except (OSError, ValueError) as exc:
        raise CliError(str(exc), EXIT_DATA)
    raise CliError(f"data.source must be synthetic/idx/dir, got {source!r}", EXIT_USAGE)


def make_out_dir(args, cfg: dict[str, str]) -> Path:
    if not getattr(args, "out", None):
        raise CliError("--out DIR is required for this command", EXIT_USAGE)
    root = os.environ.get("TEXFEAT_OUT_ROOT", "")
    out = Path(root) / args.out if root and not Path(args.out).is_absolute() else Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=False)
    except FileExistsError:
        raise CliError(f"output directory {out} already exists", EXIT_USAGE)
    echo = "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))
    (out / "config.txt").write_text(echo)
    return out


# --- commands ---------------------------------------------------------------


def cmd_extract(args) -> int:
    cfg = resolve_config(args, "extract")
    if args.feature:
        cfg["extract.feature"] = args.feature
    if args.variant:
        cfg["extract.variant"] = args.variant
    feature = _get(cfg, "extract.feature", "lbp")
    variant = _get(cfg, "extract.variant", "default")
    normalize = _get(cfg, "extract.normalize", False, bool)
    if feature not in ("lbp", "ehd"):
        raise CliError(f"unknown feature {feature!r}; valid: lbp, ehd", EXIT_USAGE)
    if feature == "lbp" and variant not in LBP_VARIANTS:
        raise CliError(f"unknown variant {variant!r}; valid: {', '.join(LBP_VARIANTS)}", EXIT_USAGE)
    out = make_out_dir(args, cfg)
    ds = load_dataset(cfg)

    if feature == "lbp":
        lbp_cfg = LBPConfig(variant=variant)
        bins = lbp_cfg.bins
        name = f"lbp_{variant}"
    else:
        bins = 9
        name = "ehd"
    header = ["image_id"] + [f"{name}_{i}" for i in range(bins)]
    dump_dir = out / "dump"
    if args.dump:
        dump_dir.mkdir()
    rows = []
    for i in range(len(ds)):
        image = ds.images[i : i + 1]
        if image.shape[1] != 1:
            raise CliError("extract expects single-channel data; convert upstream", EXIT_DATA)
        if feature == "lbp":
            hist = lbp_feature(image, lbp_cfg, normalize=normalize)[0]
            if args.dump:
                codes = (
                    var_bin_map(lbp_var_map(image, lbp_cfg))
                    if variant == "var"
                    else lbp_code_map(image, lbp_cfg)
                )
                save_tensor(codes[:, None].astype(np.float64), dump_dir / f"img_{i:05d}.tnsr")
        else:
            votes, hist_batch = ehd(image, EHDConfig(), normalize=normalize)
            hist = hist_batch[0]
            if args.dump:
                save_tensor(votes, dump_dir / f"img_{i:05d}.tnsr")
        rows.append([str(i)] + [f"{v:.10g}" for v in hist])
    with open(out / "histograms.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    if not rows:
        print("warning: dataset is empty; wrote header-only CSV", file=sys.stderr)
    print(f"wrote {len(rows)} histograms to {out / 'histograms.csv'}")
    return EXIT_OK


def _render_png(path, plane: np.ndarray) -> None:
    from PIL import Image

    lo, hi = float(plane.min()), float(plane.max())
    scaled = (plane - lo) / (hi - lo) if hi > lo else np.zeros_like(plane)
    Image.fromarray(np.round(scaled * 255).astype(np.uint8), mode="L").save(path)


def cmd_reconstruct(args) -> int:
    cfg = resolve_config(args, "reconstruct")
    if _get(cfg, "feature.init", "paper") != "paper":
        raise CliError("reconstruction is defined only at reference initialization", EXIT_USAGE)
    kinds = [k.strip() for k in _get(cfg, "reconstruct.kinds", "nehd,nlbp").split(",")]
    limit = _get(cfg, "reconstruct.images", 50, int)
    map_images = _get(cfg, "reconstruct.map_images", 1, int)
    out = make_out_dir(args, cfg)
    ds = load_dataset(cfg)
    images = ds.images[:limit]
    if images.shape[1] != 1:
        raise CliError("reconstruction expects single-channel data", EXIT_DATA)

    with open(out / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "image_id", "relative_l1"])
        summary = {}
        for kind in kinds:
            result = compare(images, kind)
            for i, d in enumerate(result.distances):
                writer.writerow([kind, str(i), f"{d:.10g}"])
            summary[kind] = result
            with open(out / f"histograms_{kind}.csv", "w", newline="") as hf:
                hw = csv.writer(hf)
                bins = result.classic.shape[1]
                hw.writerow(["image_id", "side"] + [f"bin_{i}" for i in range(bins)])
                for i in range(len(images)):
                    hw.writerow([str(i), "classic"] + [f"{v:.10g}" for v in result.classic[i]])
                    hw.writerow([str(i), "neural"] + [f"{v:.10g}" for v in result.neural[i]])

    maps_dir = out / "maps"
    maps_dir.mkdir()
    layer_cfgs = map_configs(images.shape[2:])
    for kind in kinds:
        for i in range(min(map_images, len(images))):
            image = images[i : i + 1]
            classic = classic_maps(image, kind)
            neural, _ = feature_forward(image, layer_cfgs[kind])
            save_tensor(classic, maps_dir / f"{kind}_{i:03d}_classic.tnsr")
            save_tensor(neural, maps_dir / f"{kind}_{i:03d}_neural.tnsr")
            show = range(classic.shape[1]) if kind == "nehd" else list(range(8)) + [255]
            for ch in show:
                _render_png(maps_dir / f"{kind}_{i:03d}_classic_{ch:03d}.png", classic[0, ch])
                _render_png(maps_dir / f"{kind}_{i:03d}_neural_{ch:03d}.png", neural[0, ch])

    for kind in kinds:
        d = summary[kind].distances
        print(f"{kind}: mean relative L1 {d.mean():.4f}, max {d.max():.4f} over {len(d)} images")
    return EXIT_OK


def _write_run_artifacts(out: Path, result, test_ds) -> None:
    with open(out / "epochs.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
        for ri, run in enumerate(result.runs):
            for e in range(len(run.train_loss)):
                writer.writerow(
                    [ri, e, f"{run.train_loss[e]:.10g}", f"{run.train_acc[e]:.10g}",
                     f"{run.val_loss[e]:.10g}", f"{run.val_acc[e]:.10g}"]
                )
    for ri, run in enumerate(result.runs):
        with open(out / f"confusion_run{ri}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([""] + list(test_ds.class_names))
            for ci, row in enumerate(run.confusion):
                writer.writerow([test_ds.class_names[ci]] + [str(v) for v in row])
    lines = [result.summary()]
    for ri, run in enumerate(result.runs):
        status = "FAILED" if run.failed else f"test_acc={run.test_accuracy:.6f}"
        lines.append(f"run {ri} (seed {run.seed}): {status}")
    lines.append("param_counts: " + ", ".join(f"{k}={v}" for k, v in result.runs[0].param_counts.items()))
    (out / "summary.txt").write_text("\n".join(lines) + "\n")


def _run_grid_point(point: dict, sub: str) -> tuple[str, bool]:
    """Train one grid point into its own directory; safe to run in a worker
    process (every input is a plain dict/string and points are independent)."""
    sub = Path(sub)
    spec = build_feature_spec(point)
    train_cfg = TrainConfig(
        feature=spec,
        multichannel=_get(point, "train.multichannel", "independent"),
        epochs=_get(point, "train.epochs", 20, int),
        batch_size=_get(point, "train.batch_size", 64, int),
        learning_rate=_get(point, "train.learning_rate", 0.01, float),
        seed=_get(point, "train.seed", 0, int),
        val_fraction=_get(point, "train.val_fraction", 0.1, float),
        runs=_get(point, "train.runs", 1, int),
        crop_size=_optional_int(point, "train.crop_size"),
    )
    train_ds = load_dataset(point, role="train")
    test_ds = load_dataset(point, role="test")
    result = run_experiment(train_cfg, train_ds, test_ds)
    _write_run_artifacts(sub, result, test_ds)
    for ri, model in enumerate(result.models):
        model.save(sub / "models" / f"run{ri}")
    return result.summary(), result.n_failed == len(result.runs)


def cmd_train(args) -> int:
    cfg = resolve_config(args, "train")
    if args.learn:
        cfg["feature.learn"] = args.learn
    if args.feature:
        cfg["feature.kind"] = args.feature
    points = expand_grid(cfg)
    out = make_out_dir(args, cfg)
    overall_start = time.perf_counter()
    jobs = []
    for gi, point in enumerate(points):
        sub = out if len(points) == 1 else out / f"run_{gi:03d}"
        if sub != out:
            sub.mkdir()
            (sub / "config.txt").write_text("".join(f"{k} = {point[k]}\n" for k in sorted(point)))
        jobs.append((point, str(sub)))

    workers = max(1, getattr(args, "workers", 1) or 1)
    if workers == 1 or len(jobs) == 1:
        outcomes = [_run_grid_point(point, sub) for point, sub in jobs]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_grid_point, *zip(*jobs)))

    diverged_points = []
    for gi, (summary, diverged) in enumerate(outcomes):
        label = f"grid point {gi}: " if len(points) > 1 else ""
        print(f"{label}{summary}")
        if diverged:
            diverged_points.append(gi)
    if diverged_points:
        raise CliError(f"every run diverged (NaN loss) in grid point(s) {diverged_points}", EXIT_NUMERIC)
    print(f"total wall time {time.perf_counter() - overall_start:.1f}s")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = resolve_config(args, "eval")
    if not args.model:
        raise CliError("--model DIR is required", EXIT_USAGE)
    try:
        model = ShallowClassifier.load(args.model)
    except (OSError, KeyError, ValueError) as exc:
        raise CliError(f"cannot load model from {args.model}: {exc}", EXIT_DATA)
    ds = load_dataset(cfg, role="test")
    loss, acc, confusion = evaluate(model, ds, crop_size=None)
    print(f"loss {loss:.6f}  accuracy {acc:.6f}  ({len(ds)} samples)")
    if args.out:
        out = make_out_dir(args, cfg)
        with open(out / "confusion.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([""] + list(ds.class_names))
            for ci, row in enumerate(confusion):
                writer.writerow([ds.class_names[ci]] + [str(v) for v in row])
        (out / "accuracy.txt").write_text(f"{acc:.10g}\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = resolve_config(args, "gradcheck")
    if args.feature:
        cfg["feature.kind"] = args.feature
    trials = _get(cfg, "gradcheck.trials", 5, int)
    from .gradcheck import run_gradcheck

    report = run_gradcheck(build_feature_spec(cfg), trials=trials, seed=_get(cfg, "gradcheck.seed", 0, int))
    worst = 0.0
    for group, err in sorted(report.items()):
        print(f"{group:24s} max rel err {err:.3e}")
        worst = max(worst, err)
    if worst >= 1e-3:
        print(f"FAIL: worst relative error {worst:.3e} >= 1e-3", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"OK: worst relative error {worst:.3e} < 1e-3")
    return EXIT_OK


def cmd_params(args) -> int:
    cfg = resolve_config(args, "params")
    if args.feature:
        cfg["feature.kind"] = args.feature
    spec = build_feature_spec(cfg)
    rng = np.random.default_rng(0)
    report = param_count(
        spec.build(rng),
        image_hw=(28, 28),
        in_channels=_get(cfg, "params.channels", 1, int),
        n_classes=_get(cfg, "params.classes", 10, int),
        multichannel=_get(cfg, "train.multichannel", "independent"),
    )
    print(f"feature kind: {spec.kind}")
    for name, info in report["groups"].items():
        flag = "learnable" if info["learnable"] else "frozen"
        print(f"  {name:16s} {info['count']:6d}  ({flag})")
    print(f"  feature total    {report['feature_total']:6d}")
    print(f"  classifier       {report['classifier']:6d}")
    if report["mix"]:
        print(f"  channel mix      {report['mix']:6d}")
    target = report["published_target"]
    verdict = "matches" if report["matches_published"] else "differs from"
    print(f"published feature-layer total: {target} ({verdict} ours: {report['feature_total']})")
    print(report["note"])
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="texfeat", description=__doc__)
    parser.add_argument("--version", action="version", version=f"texfeat {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        if needs_out:
            p.add_argument("--out", help="output directory (created, must not exist)")

    p = sub.add_parser("extract", help="classical feature histograms to CSV")
    common(p)
    p.add_argument("--feature", choices=["lbp", "ehd"])
    p.add_argument("--variant", help="lbp variant: " + ", ".join(LBP_VARIANTS))
    p.add_argument("--dump", action="store_true", help="also dump per-image tensors")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("reconstruct", help="classic vs neural comparison dumps")
    common(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("train", help="train shallow classifiers (grid-capable)")
    common(p)
    p.add_argument("--feature", choices=["nehd", "nlbp"])
    p.add_argument("--learn", choices=["both", "structural", "statistical", "none"])
    p.add_argument("--workers", type=int, default=1,
                   help="grid points to train in parallel (runs are independent)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a saved model")
    common(p, needs_out=False)
    p.add_argument("--model", help="model directory written by train")
    p.add_argument("--out", help="optional output directory for artifacts")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    common(p, needs_out=False)
    p.add_argument("--feature", choices=["nehd", "nlbp"])
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="parameter-count tables")
    common(p, needs_out=False)
    p.add_argument("--feature", choices=["nehd", "nlbp"])
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
