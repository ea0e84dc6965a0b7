"""Command-line surface: inject / train / evaluate / sweep / report.

Exit codes: 0 success, 2 usage or config error, 3 data ingestion error,
4 training failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import ExperimentConfig, load_config
from .errors import DataIngestError, TrainingDivergedError, ValidationError

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_TRAINING = 4


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ValidationError(f"expected a comma-separated number list, got {text!r}") from exc


def _parse_ints(text: str) -> list[int]:
    return [int(v) for v in _parse_floats(text)]


def _load_base_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    noise = config.noise
    train = config.train
    if getattr(args, "noise", None):
        noise = replace(noise, kind=args.noise)
    if getattr(args, "rate", None) is not None:
        noise = replace(noise, rate=args.rate)
    if getattr(args, "seed", None) is not None:
        train = replace(train, seed=args.seed)
    if getattr(args, "method", None):
        train = replace(train, method=args.method)
    return replace(config, noise=noise, train=train)


def _cmd_inject(args) -> int:
    from . import training
    from .noise import realized_noise_rate, write_manifest

    config = _load_base_config(args)
    train_clean, _ = training._build_datasets(config)
    noisy = training._apply_noise(train_clean, config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_manifest(out, noisy.records, noisy.manifest)
    rate = realized_noise_rate(noisy.records)
    print(f"wrote {out} ({len(noisy.records)} records, realized noise rate {rate:.4f})")
    return 0


def _cmd_train(args) -> int:
    from .training import run_experiment

    config = _load_base_config(args)
    if args.export_features:
        config = replace(config, run=replace(config.run, export_features=True))
    run_dir = run_experiment(config, out_dir=args.out)
    report = json.loads((run_dir / "report").read_text())
    print(f"run directory: {run_dir}")
    print(f"last-3-epoch average test accuracy: {report['accuracy_last3_avg']:.2f}")
    return 0


def _cmd_evaluate(args) -> int:
    from . import training
    from .evaluation import evaluate, export_features, write_report
    from .models import load_checkpoint

    config = _load_base_config(args)
    _, test_dataset = training._build_datasets(config)
    model, extra = load_checkpoint(args.checkpoint)
    report = evaluate(model, test_dataset, epoch=extra.get("epoch"))
    payload = report.to_dict()
    if args.out:
        write_report(args.out, payload)
        print(f"wrote {args.out}")
    else:
        print(json.dumps(payload, indent=2))
    if args.export_features:
        export_features(model, test_dataset, args.export_features)
        print(f"wrote {args.export_features}")
    return 0


def _cmd_sweep(args) -> int:
    from .training import run_experiment

    base = _load_base_config(args)
    rates = _parse_floats(args.rates) if args.rates else [base.noise.rate]
    sizes = _parse_ints(args.mixup_sizes) if args.mixup_sizes else [base.train.group_size]
    depths = _parse_ints(args.head_depths) if args.head_depths else [base.model.mixup_head_layers]
    proj_layers = _parse_ints(args.projection_layers) if args.projection_layers \
        else [base.model.projection_layers]
    seeds = _parse_ints(args.seeds) if args.seeds else [base.train.seed]

    target_batch = base.train.batch_size
    out_root = Path(args.out)
    runs = []
    for rate in rates:
        for m in sizes:
            for depth in depths:
                for z in proj_layers:
                    for seed in seeds:
                        # Keep the effective batch size near the base K*M.
                        k = max(1, round(target_batch / m))
                        noise_kind = base.noise.kind
                        if noise_kind == "none" and rate > 0:
                            noise_kind = "symmetric"
                        if rate == 0:
                            noise_kind = "none"
                        config = replace(
                            base,
                            noise=replace(base.noise, kind=noise_kind, rate=rate),
                            model=replace(base.model, mixup_head_layers=depth,
                                          projection_layers=z),
                            train=replace(base.train, group_size=m,
                                          groups_per_batch=k, seed=seed),
                        )
                        name = f"rate{rate:g}_M{m}_N{depth}_Z{z}_seed{seed}"
                        run_dir = run_experiment(config, out_dir=out_root / name)
                        runs.append(run_dir)
                        print(f"finished {run_dir}")
    print(f"{len(runs)} runs under {out_root}")
    return 0


def _cmd_report(args) -> int:
    from .training import load_run_report

    rows = []
    for run in args.runs:
        report = load_run_report(run)
        rows.append({
            "run": str(run),
            "method": report["method"],
            "noise_kind": report["noise"]["kind"],
            "noise_rate": report["noise"]["rate"],
            "seed": report["seed"],
            "accuracy_last3_avg": report["accuracy_last3_avg"],
            "macro_f1": report["metrics"]["macro_f1"],
        })
    rows.sort(key=lambda r: (r["method"], r["noise_kind"], r["noise_rate"], r["seed"]))
    header = ["method", "noise_kind", "noise_rate", "seed", "accuracy_last3_avg",
              "macro_f1", "run"]
    widths = {h: max(len(h), *(len(f"{r[h]}") for r in rows)) for h in header}
    print("  ".join(h.ljust(widths[h]) for h in header))
    for r in rows:
        print("  ".join(f"{r[h]}".ljust(widths[h]) for h in header))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(",".join(header) + "\n")
            for r in rows:
                fh.write(",".join(str(r[h]) for h in header) + "\n")
        print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="groupmix",
        description="Noise-robust training: contrastive warm-up + group-attentive mixup.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_noise=True):
        p.add_argument("--config", help="experiment config YAML (defaults apply if omitted)")
        p.add_argument("--seed", type=int, help="override train.seed")
        if with_noise:
            p.add_argument("--noise", choices=["none", "symmetric", "asymmetric",
                                               "instance_dependent"],
                           help="override noise.kind")
            p.add_argument("--rate", type=float, help="override noise.rate")

    p = sub.add_parser("inject", help="corrupt a dataset's labels and write the manifest")
    add_common(p)
    p.add_argument("--out", required=True, help="manifest output path")
    p.set_defaults(func=_cmd_inject)

    p = sub.add_parser("train", help="run the full experiment pipeline")
    add_common(p)
    p.add_argument("--method", choices=["ours", "default_baseline", "label_smooth"])
    p.add_argument("--out", help="run directory (default: run.out_dir from the config)")
    p.add_argument("--export-features", action="store_true",
                   help="also write features.tsv for the selected snapshot")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on the test split")
    add_common(p, with_noise=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="report JSON path (default: print)")
    p.add_argument("--export-features", help="feature TSV output path")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="grid of runs over rates / mixup sizes / depths")
    add_common(p)
    p.add_argument("--method", choices=["ours", "default_baseline", "label_smooth"])
    p.add_argument("--out", required=True, help="directory receiving one run dir per cell")
    p.add_argument("--rates", help="comma list, e.g. 0,0.1,0.2,0.3,0.4")
    p.add_argument("--mixup-sizes", help="comma list of group sizes, e.g. 2,3,4,5")
    p.add_argument("--head-depths", help="comma list of mixup head layer counts (1..3)")
    p.add_argument("--projection-layers", help="comma list of projection depths (1..2)")
    p.add_argument("--seeds", help="comma list of seeds")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="aggregate run directories into a table")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataIngestError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except Exception as exc:  # pragma: no cover - defensive
        print(f"unexpected failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
