"""Command-line interface.

    qlfnet generate  --out DIR [--n N] [--scheme S] [--seed S]
    qlfnet train     --models M [--compositions C] [--shuffle I] --out DIR
    qlfnet evaluate  --models M [--compositions C,...] --out DIR
    qlfnet ablate    [--models M,...] --out DIR
    qlfnet gradcheck [--seed S]
    qlfnet report    --in report.json --out DIR

Experiment commands read an optional ``--config`` JSON file; flags override
it. ``--data DIR`` loads a dataset directory instead of generating one.
``--seed`` sets the image seed for ``generate`` and ``gradcheck`` and the
split / model seed elsewhere.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 a verification (gradcheck) that ran but failed.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, cnn
from .config import CLI_NAMES, ConfigError, ExperimentConfig
from .dataio import dump_json, export_dataset, fmt_float, load_dataset, write_text
from .datagen import generate_dataset
from .eval import (CNN, MODEL_ORDER, cnn_cell, cnn_seed, make_trial_plan, run_ablation, run_experiment,
                   shallow_cell)
from .errors import ConsistencyError
from .report import read_report, render_csv, rounded, write_report

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3
GRADCHECK_TOL = 1e-5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _csv_list(text):
    return [t for t in (s.strip() for s in text.split(",")) if t]


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="seed (see the command description)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--scheme", choices=["rfpp3", "rfmqh5", "mslp4"], help="label scheme")
    common.add_argument("--compositions", type=_csv_list, help="channel compositions, e.g. r,rg,rgb")
    common.add_argument("--models", type=_csv_list, help=f"models from {','.join(CLI_NAMES.values())}")
    common.add_argument("--data", metavar="DIR", help="dataset directory to load instead of generating")

    parser = _Parser(prog="qlfnet", description="CNN and shallow classifiers on synthetic plaque images.")
    parser.add_argument("--version", action="version", version=f"qlfnet {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    gen = sub.add_parser("generate", parents=[common], help="write a synthetic dataset directory")
    gen.add_argument("--n", type=int, help="number of images")
    tr = sub.add_parser("train", parents=[common], help="train one model on one split")
    tr.add_argument("--shuffle", type=int, default=0, help="split index 0-9")
    sub.add_parser("evaluate", parents=[common], help="one model over the ten shuffles")
    sub.add_parser("ablate", parents=[common], help="all models over the R, RG and RGB compositions")
    gc = sub.add_parser("gradcheck", help="check CNN gradients against finite differences")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--epsilon", type=float, default=1e-5)
    rep = sub.add_parser("report", help="render report files from a stored report.json")
    rep.add_argument("--in", dest="inp", required=True, metavar="PATH", help="report.json or its directory")
    rep.add_argument("--out", required=True, metavar="DIR")
    return parser


# --------------------------------------------------------------------------
# helpers

def _config(args) -> ExperimentConfig:
    raw = {}
    if args.config:
        raw = ExperimentConfig.load(args.config).to_dict()
    cfg = ExperimentConfig.from_dict(raw)
    if args.scheme:
        cfg.scheme = args.scheme
    if args.compositions:
        cfg.compositions = args.compositions
    if args.models:
        cfg.models = args.models
    if args.seed is not None:
        if args.command == "generate":
            if "generate" not in cfg.dataset:
                cfg.dataset = {"generate": {}}
            cfg.dataset["generate"]["base_seed"] = args.seed
        else:
            cfg.seed = args.seed
    if getattr(args, "n", None) is not None:
        if "generate" not in cfg.dataset:
            cfg.dataset = {"generate": {}}
        cfg.dataset["generate"]["n"] = args.n
    if args.data and args.command != "generate":
        cfg.dataset = {"path": args.data}
    if args.out:
        cfg.out = args.out
    cfg.validate()
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    if cfg.out is None:
        raise UsageError(f"{args.command}: an output directory is required (--out or config 'out')")
    return cfg


def _dataset(cfg: ExperimentConfig, explicit_scheme: bool):
    if "path" in cfg.dataset:
        ds = load_dataset(cfg.dataset["path"])
        if explicit_scheme and ds.scheme != cfg.label_scheme():
            raise ConsistencyError(f"dataset uses {ds.scheme.name} but {cfg.scheme} was requested")
        cfg.scheme = ds.scheme.key
        return ds
    gen = cfg.dataset["generate"]
    return generate_dataset(gen["n"], cfg.label_scheme(), gen["class_mix"], gen["base_seed"], cfg.scene_params())


def _dataset_digest(ds) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ds.images, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(ds.labels, dtype="<i8").tobytes())
    return h.hexdigest()


def _write_manifest(out: Path, command: str, cfg: ExperimentConfig, ds, plan=None):
    config = cfg.to_dict()
    config.pop("out")
    seeds = {"plan": cfg.seed,
             "dataset": cfg.dataset["generate"]["base_seed"] if "generate" in cfg.dataset else None}
    if plan is not None:
        seeds["splits"] = [s.seed for s in plan.splits]
    manifest = {"artifact_version": __version__, "command": command, "config_hash": cfg.digest(),
                "config": config, "seeds": seeds,
                "dataset": {"count": len(ds), "scheme": ds.scheme.name, "shape": list(ds.shape),
                            "digest": _dataset_digest(ds)}}
    write_text(out / "run-manifest.json", dump_json(manifest))


def _plan(cfg: ExperimentConfig, ds, models, compositions):
    return make_trial_plan(ds.labels, cfg.seed, models, compositions, cfg.grid_map(), cfg.cnn_settings())


def _progress():
    """Report finished cell shuffles on stderr with the elapsed seconds."""
    start = time.perf_counter()

    def tick(done, total):
        print(f"[{done}/{total}] {time.perf_counter() - start:.1f}s", file=sys.stderr, flush=True)
    return tick


def _print_table(report):
    print(render_csv(rounded(report)), end="")


# --------------------------------------------------------------------------
# commands

def cmd_generate(args) -> int:
    cfg = _config(args)
    if "generate" not in cfg.dataset:
        raise UsageError("generate needs generator settings, not a dataset path")
    ds = _dataset(cfg, True)
    out = Path(cfg.out)
    export_dataset(ds, out, cfg.dataset["generate"]["base_seed"])
    counts = np.bincount(ds.labels, minlength=ds.scheme.n_classes)
    print(f"wrote {len(ds)} images ({ds.scheme.name}, class counts {counts.tolist()}) to {out}")
    return EXIT_OK


def _single_model(cfg, command):
    models = cfg.model_kinds()
    if len(models) != 1:
        raise UsageError(f"{command} takes exactly one model (--models), got {cfg.models}")
    return models


def cmd_train(args) -> int:
    cfg = _config(args)
    models = _single_model(cfg, "train")
    masks = cfg.masks() if args.compositions else [m for m in cfg.masks() if m.name == "RGB"] or cfg.masks()[-1:]
    if len(masks) != 1:
        raise UsageError(f"train takes exactly one composition (--compositions), got {cfg.compositions}")
    if not 0 <= args.shuffle < 10:
        raise UsageError("--shuffle must lie in 0..9")
    ds = _dataset(cfg, bool(args.scheme))
    plan = _plan(cfg, ds, models, masks)
    split, mask, name = plan.splits[args.shuffle], masks[0], models[0]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if name == CNN:
        train_f1, test_f1, val_f1, chosen, failures = cnn_cell(
            plan, ds.images, ds.labels, ds.scheme.n_classes, split, mask, cnn_seed(plan, split),
            keep_model=out / "model.ckpt")
    else:
        train_f1, test_f1, val_f1, chosen, failures = shallow_cell(
            plan, ds.images, ds.labels, split, mask, name, MODEL_ORDER.index(name))
    result = {"model": name, "composition": mask.name, "shuffle": args.shuffle, "split_seed": split.seed,
              "chosen": chosen, "train_f1": float(fmt_float(train_f1)), "val_f1": float(fmt_float(val_f1)),
              "test_f1": float(fmt_float(test_f1)), "failures": [list(f) for f in failures]}
    write_text(out / "train.json", dump_json(result))
    _write_manifest(out, "train", cfg, ds, plan)
    print(f"{name} {mask.name} shuffle {args.shuffle}: train F1 {fmt_float(train_f1)}, "
          f"val F1 {fmt_float(val_f1)}, test F1 {fmt_float(test_f1)}, chosen {chosen}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    models = _single_model(cfg, "evaluate")
    ds = _dataset(cfg, bool(args.scheme))
    plan = _plan(cfg, ds, models, cfg.masks())
    report = run_experiment(plan, ds, args.jobs, _progress())
    out = Path(cfg.out)
    write_report(report, out)
    _write_manifest(out, "evaluate", cfg, ds, plan)
    _print_table(report)
    return EXIT_OK


def cmd_ablate(args) -> int:
    if args.compositions:
        raise UsageError("ablate always runs the R, RG and RGB compositions; drop --compositions")
    cfg = _config(args)
    cfg.compositions = ["r", "rg", "rgb"]
    ds = _dataset(cfg, bool(args.scheme))
    plan = _plan(cfg, ds, cfg.model_kinds(), cfg.masks())
    report = run_ablation(ds, plan, args.jobs, _progress())
    out = Path(cfg.out)
    write_report(report, out)
    _write_manifest(out, "ablate", cfg, ds, plan)
    _print_table(report)
    return EXIT_OK


def gradcheck(seed: int, epsilon: float = 1e-5) -> float:
    """Max relative gradient error of the default network on a random 3x16x16 input."""
    rng = np.random.default_rng([seed, 0x6C])
    arch = cnn.ArchSpec()
    model = cnn.build_model(arch, seed)
    image = rng.uniform(0.0, 1.0, size=(arch.input_channels, arch.input_height, arch.input_width))
    label = int(rng.integers(arch.classes))
    return cnn.grad_check(model, image, label, epsilon)


def cmd_gradcheck(args) -> int:
    err = gradcheck(args.seed, args.epsilon)
    ok = err < GRADCHECK_TOL
    print(f"max relative error {fmt_float(err)} ({'ok' if ok else 'FAILED'}, tolerance {fmt_float(GRADCHECK_TOL)})")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_report(args) -> int:
    src = Path(args.inp)
    if src.is_dir():
        src = src / "report.json"
    report = read_report(src)
    write_report(report, args.out)
    _print_table(report)
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate, "ablate": cmd_ablate,
            "gradcheck": cmd_gradcheck, "report": cmd_report}


def run_cli(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if not argv:
            raise UsageError(parser.format_help())
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help / --version
            return int(exc.code or 0)
        if args.command is None:
            raise UsageError(parser.format_help())
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}" if isinstance(exc, ConfigError) else str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
