"""Command-line pipeline: generate -> build-eval -> train -> evaluate -> report.

Every stage accepts ``--config run.json`` with optional sections
``phantom``, ``split``, ``referee``, ``encoder`` and ``evaluation``;
explicit flags override values from the file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from gcmetrics.core import ATTRIBUTES, SIDES, ConfigurationError, InvalidInputError, NumericalError, digest
from gcmetrics.data import MANIFEST, PhantomConfig, generate_cohort, load_cohort, read_manifest, save_cohort, split_dataset
from gcmetrics.encoder import ContrastiveTrainConfig, EncoderModel, train_encoder
from gcmetrics.metrics import EncoderFeatures, MetricReport, evaluate_dataset
from gcmetrics.plotting import write_plots
from gcmetrics.referees import (
    RefereeModel,
    RefereeTrainConfig,
    load_referees,
    referee_dirname,
    train_referee,
    validate_referee,
)
from gcmetrics.views import DEFAULT_BAND, EVAL_SIDECAR, build_eval_sets, load_eval_sets, save_eval_sets

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4
EXIT_INPUT = 5

COHORT_SIDECAR = "cohort.json"
REPORT = "report.json"
ENCODER_DIR = "encoder"


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc


def _build(cls, params: dict, section: str):
    try:
        return cls(**params)
    except TypeError as exc:
        raise ConfigurationError(f"bad [{section}] configuration: {exc}") from exc


def _merge(section: dict, **flags) -> dict:
    out = dict(section)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def manifest_digest(directory: str | Path) -> str:
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"no cohort manifest at {path}")
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _write_json(path: Path, obj: dict) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


# -- stages -----------------------------------------------------------------

def cmd_generate(args, cfg: dict) -> int:
    phantom = _merge(cfg.get("phantom", {}), seed=args.seed, noise_level=args.noise,
                     height=args.height, width=args.width, age_range=args.age_range,
                     bmi_range=args.bmi_range, body_fat_range=args.body_fat_range)
    split = _merge(cfg.get("split", {}), seed=args.split_seed)
    n = args.n if args.n is not None else cfg.get("n", 1000)
    if args.out is None:
        raise ConfigurationError("--out is required")
    try:
        pc = PhantomConfig.from_dict(phantom)
    except TypeError as exc:
        raise ConfigurationError(f"bad [phantom] configuration: {exc}") from exc
    fractions = tuple(split.get("fractions", (0.8, 0.1, 0.1)))
    split_seed = split.get("seed", pc.seed)
    parts = split_dataset(generate_cohort(n, pc), fractions, split_seed)
    records = sorted((r for rs in parts.values() for r in rs), key=lambda r: r.id)
    out = Path(args.out)
    save_cohort(records, out)
    run = {"n": n, "phantom": pc.to_dict(), "split": {"fractions": list(fractions), "seed": split_seed}}
    run["config_digest"] = digest(run)
    _write_json(out / COHORT_SIDECAR, run)
    sizes = {k: len(v) for k, v in parts.items()}
    print(f"wrote {n} phantoms to {out} {sizes} manifest digest {manifest_digest(out)}")
    return EXIT_OK


def cmd_build_eval(args, cfg: dict) -> int:
    ev = _merge(cfg.get("evaluation", {}), seed=args.seed, band=args.band)
    if args.cohort is None or args.out is None:
        raise ConfigurationError("--cohort and --out are required")
    test = load_cohort(args.cohort, split="test")
    band = ev.get("band", DEFAULT_BAND)
    sets = build_eval_sets(test, seed=ev.get("seed", 0), band=band)
    extra = {"cohort_digest": manifest_digest(args.cohort)}
    extra["config_digest"] = digest({"band": band, "seed": ev.get("seed", 0), **extra})
    save_eval_sets(sets, args.out, extra)
    print(f"wrote {len(sets.reference)} reference, {len(sets.consistent)} consistent, "
          f"{len(sets.inconsistent)} inconsistent images to {args.out} "
          f"manifest digest {manifest_digest(args.out)}")
    return EXIT_OK


def _expand(value: str | None, choices: tuple[str, ...], name: str) -> tuple[str, ...]:
    if value is None:
        raise ConfigurationError(f"--{name} is required for referee training")
    if value == "all":
        return choices
    if value not in choices:
        raise ConfigurationError(f"invalid {name} {value!r}; expected one of {choices} or 'all'")
    return (value,)


def cmd_train(args, cfg: dict) -> int:
    if args.cohort is None or args.models is None:
        raise ConfigurationError("--cohort and --models are required")
    data_digest = manifest_digest(args.cohort)
    models = Path(args.models)
    if args.target == "referee":
        rc = _merge(cfg.get("referee", {}), capacity=args.capacity, epochs=args.epochs, seed=args.seed,
                    batch_size=args.batch_size, learning_rate=args.lr)
        attrs = _expand(args.attribute or rc.pop("attribute", None), ATTRIBUTES, "attribute")
        sides = _expand(args.side or rc.pop("side", None), SIDES, "side")
        rc.pop("attribute", None)
        rc.pop("side", None)
        config = _build(RefereeTrainConfig, rc, "referee")
        train = load_cohort(args.cohort, split="train")
        val = load_cohort(args.cohort, split="val")
        for a in attrs:
            for s in sides:
                model = train_referee(train, a, s, config, data_digest=data_digest)
                out = model.save(models / referee_dirname(a, s))
                if val:
                    mae, sd = validate_referee(model, val)
                    _write_json(out / "validation.json", {"mae": mae, "std": sd, "count": len(val)})
                    print(f"{a}/{s}: validation MAE {mae:.3f} ± {sd:.3f} -> {out}")
                else:
                    print(f"{a}/{s}: -> {out}")
        return EXIT_OK

    ec = _merge(cfg.get("encoder", {}), capacity=args.capacity, epochs=args.epochs, seed=args.seed,
                batch_size=args.batch_size, learning_rate=args.lr, temperature=args.temperature,
                feature_source=args.feature_source)
    if "augmentations" in ec:
        ec["augmentations"] = tuple(ec["augmentations"])
    if ec.get("input_shape") is not None:
        ec["input_shape"] = tuple(ec["input_shape"])
    config = _build(ContrastiveTrainConfig, ec, "encoder")
    train = load_cohort(args.cohort, split="train")
    model = train_encoder(train, config, data_digest=data_digest)
    out = model.save(models / ENCODER_DIR)
    print(f"encoder (dim {model.embedding_dim}, {model.feature_source} features) -> {out}")
    return EXIT_OK


def _load_models(models_dir: Path):
    missing = [referee_dirname(a, s) for a in ATTRIBUTES for s in SIDES
               if not (models_dir / referee_dirname(a, s) / "metadata.json").is_file()]
    if not (models_dir / ENCODER_DIR / "metadata.json").is_file():
        missing.append(ENCODER_DIR)
    if missing:
        raise ConfigurationError(f"missing models in {models_dir}: {', '.join(missing)}")
    return load_referees(models_dir), EncoderModel.load(models_dir / ENCODER_DIR)


def cmd_evaluate(args, cfg: dict) -> int:
    ev = _merge(cfg.get("evaluation", {}), seed=args.seed, band=args.band, extractor=args.extractor)
    if args.cohort is None or args.models is None or args.out is None:
        raise ConfigurationError("--cohort, --models and --out are required")
    cohort = Path(args.cohort)
    read_manifest(cohort)
    referees, encoder = _load_models(Path(args.models))
    if (cohort / EVAL_SIDECAR).is_file():
        sets = load_eval_sets(cohort)
    else:
        sets = build_eval_sets(load_cohort(cohort, split="test"), seed=ev.get("seed", 0),
                               band=ev.get("band", DEFAULT_BAND))
    for m in referees.values():
        if m.band != sets.band:
            raise ConfigurationError(
                f"{m.attribute}/{m.side} referee was trained with band {m.band}, evaluation uses {sets.band}")
    extractor = EncoderFeatures(encoder, ev.get("extractor", "halves"))
    run = {
        "cohort_digest": manifest_digest(cohort),
        "evaluation": {"seed": sets.seed, "band": sets.band, "extractor": extractor.mode},
        "referees": {f"{a}/{s}": m.training_config_digest for (a, s), m in sorted(referees.items())},
        "encoder": encoder.training_config_digest,
        "feature_source": encoder.feature_source,
    }
    report = evaluate_dataset(sets, referees, encoder, extractor, config=run, config_digest=digest(run))
    out = Path(args.out)
    report.save(out / REPORT)
    write_plots(report, out)
    print(report.table())
    print(f"report -> {out / REPORT}")
    return EXIT_OK


def cmd_report(args, cfg: dict) -> int:
    if args.run is None:
        raise ConfigurationError("--run is required")
    run = Path(args.run)
    path = run / REPORT if run.is_dir() else run
    if not path.is_file():
        raise FileNotFoundError(f"no report at {path}")
    report = MetricReport.load(path)
    print(report.table())
    if args.plots:
        for p in write_plots(report, args.plots):
            print(f"plot -> {p}")
    return EXIT_OK


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gcmetrics", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON run configuration; flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a phantom cohort")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--age-range", type=float, nargs=2, metavar=("MIN", "MAX"))
    p.add_argument("--bmi-range", type=float, nargs=2, metavar=("MIN", "MAX"))
    p.add_argument("--body-fat-range", type=float, nargs=2, metavar=("MIN", "MAX"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("build-eval", help="build reference/consistent/inconsistent sets")
    p.add_argument("--cohort")
    p.add_argument("--seed", type=int)
    p.add_argument("--band", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_build_eval)

    p = sub.add_parser("train", help="train a referee or the contrastive encoder")
    p.add_argument("--target", choices=("referee", "encoder"), required=True)
    p.add_argument("--attribute", help=f"one of {', '.join(ATTRIBUTES)} or 'all'")
    p.add_argument("--side", help=f"one of {', '.join(SIDES)} or 'all'")
    p.add_argument("--capacity", choices=("tiny", "small", "paper-scale"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--feature-source", choices=("backbone", "projection"))
    p.add_argument("--cohort")
    p.add_argument("--models", "--out", dest="models")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score an evaluation set and write the report")
    p.add_argument("--cohort", help="cohort directory or build-eval output")
    p.add_argument("--models")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--band", type=float)
    p.add_argument("--extractor", choices=("halves", "whole"))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="print a saved report and redraw its plots")
    p.add_argument("--run")
    p.add_argument("--plots")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, _load_config(args.config))
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FileNotFoundError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InvalidInputError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
