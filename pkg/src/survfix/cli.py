"""Command-line entry point: ``survfix <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np
import pandas as pd

from survfix.data import DatasetManifest, load_dataset
from survfix.errors import StageError, SurvfixError
from survfix.pipeline import PipelineConfig, run_pipeline, with_seed
from survfix.stratify import summarize_groups
from survfix.synth import SynthConfig, generate, write_csv, write_dataset

log = logging.getLogger("survfix")

# stage subsets behind the single-step subcommands
SUBSETS = {
    "fit-cox": ("load", "assemble", "standardize", "fit", "prune"),
    "distill": ("load", "distill"),
    "stratify": ("load", "assemble", "standardize", "fit", "prune", "predict", "stratify", "boundaries"),
    "evaluate": ("load", "assemble", "standardize", "fit", "prune", "predict", "stratify", "metrics", "baselines"),
}


def _common(p: argparse.ArgumentParser, manifest: bool = True) -> None:
    if manifest:
        p.add_argument("--manifest", required=True, type=Path, help="dataset manifest (JSON)")
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    p.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="survfix", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic survival dataset")
    _common(p, manifest=False)
    p.add_argument("--name", default="synth", help="file stem for the CSV, sidecar and manifest")
    p.add_argument("--n-subjects", type=int)
    p.add_argument("--strata", type=int)

    p = sub.add_parser("km", help="Kaplan-Meier curves and pairwise log-rank tests for a grouping column")
    _common(p)
    p.add_argument("--group", required=True, help="CSV column holding the group of every row")

    for name, text in (
        ("fit-cox", "fit and prune a Cox model on the training rows"),
        ("distill", "distill every teacher column into symbolic expressions"),
        ("stratify", "quantile risk groups, boundary SVMs and decision list"),
        ("evaluate", "C-index and horizon AUC with bootstrap intervals"),
        ("pipeline", "full run: distill, fit, prune, stratify, evaluate"),
    ):
        _common(sub.add_parser(name, help=text))
    return parser


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    return with_seed(cfg, args.seed)


def cmd_synth(args) -> int:
    d = json.loads(args.config.read_text()) if args.config else {}
    cfg = SynthConfig.from_dict(d)
    overrides = {"rng_seed": args.seed, "n_subjects": args.n_subjects, "strata": args.strata}
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    ds = generate(cfg)
    paths = write_dataset(ds, args.out, args.name)
    print(f"wrote {len(ds.frame)} subjects ({ds.censored_fraction:.1%} censored) to {paths['csv']}")
    print(f"manifest: {paths['manifest']}")
    return 0


def cmd_km(args) -> int:
    manifest = DatasetManifest.from_file(args.manifest)
    data = load_dataset(manifest, extra_columns=[args.group])
    raw = data.extras[args.group].astype(str)
    levels = sorted(raw.unique(), key=lambda v: (pd.to_numeric(v, errors="coerce"), v))
    labels = raw.map({v: i + 1 for i, v in enumerate(levels)}).to_numpy()
    res = summarize_groups(labels, data.outcomes, alpha=_config(args).strat_alpha)
    args.out.mkdir(parents=True, exist_ok=True)
    km = res.km_frame()
    km["group"] = km["group"].map(lambda g: levels[g - 1])
    write_csv(km, args.out / "km_groups.csv")
    p = pd.DataFrame(res.pairwise_p, index=levels, columns=levels)
    write_csv(p.reset_index(names="group"), args.out / "pairwise_logrank.csv")
    print(f"{len(levels)} groups; Bonferroni alpha {res.corrected_alpha:.4g}; all distinct: {res.all_distinct}")
    for g, curve in zip(levels, res.km_per_group):
        print(f"  {g}: n={curve.n_subjects} median={curve.median:.1f}")
    return 0


def _print_summary(bundle) -> None:
    if bundle.cox_table is not None:
        print(bundle.cox_table[["name", "hr", "ci_lo", "ci_hi", "p", "effect"]].to_string(index=False))
    for name, d in bundle.distilled.items():
        print(f"{name} (depth {d['depth']}): {d['expression']}  val mse {d['val_mse']:.3g}")
    if bundle.stratification:
        s = bundle.stratification
        print(f"groups: {s['n_groups']} (all pairwise distinct on train: {s['train']['all_distinct']})")
    if bundle.decision_list.get("rules"):
        print(bundle.decision_list["rules"])
    if bundle.metric_table is not None:
        for r in bundle.metric_table.itertuples():
            print(f"{r.metric:16s} {r.split:5s} {r.point:.3f} ({r.lo:.3f}, {r.hi:.3f})")


def cmd_stages(args) -> int:
    manifest = DatasetManifest.from_file(args.manifest)
    config = _config(args)
    stages = SUBSETS.get(args.command)
    if stages is None:
        bundle = run_pipeline(manifest, config, args.out, args.threads)
    else:
        bundle = run_pipeline(manifest, config, args.out, args.threads, stages=stages)
    _print_summary(bundle)
    print(f"reports in {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"synth": cmd_synth, "km": cmd_km}
    try:
        with np.errstate(all="ignore"):
            return handlers.get(args.command, cmd_stages)(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SurvfixError, OSError, jsonschema.ValidationError) as exc:
        msg = exc.message if isinstance(exc, jsonschema.ValidationError) else exc
        print(f"error: {args.command}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
