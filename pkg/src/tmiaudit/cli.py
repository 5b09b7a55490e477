"""Command-line entry point: ``tmiaudit <subcommand> --config FILE [--seed S] [--out DIR]``.

Subcommands mirror the pipeline stages. ``run`` does all of them; the others
read what earlier stages left in ``--out``. Errors are printed to stderr as a
single JSON object and the process exits with status 1 (status 2 for bad
command-line usage).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .errors import TMIError

ERROR_EXIT = 1


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tmiaudit", description="Membership inference on pretraining data of finetuned models.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON experiment config (defaults apply when omitted)")
        sp.add_argument("--seed", type=int, help="override master_seed")
        sp.add_argument("--out", help="output directory (overrides config and TMIAUDIT_OUT_DIR)")
        return sp

    common(sub.add_parser("gen-data", help="sample the population, challenges and downstream task"))
    common(sub.add_parser("train-shadows", help="train the shadow ensemble into OUT/ensemble"))
    common(sub.add_parser("attack", help="score challenges against a trained ensemble"))
    ev = common(sub.add_parser("eval", help="recompute the report from a scores CSV"))
    ev.add_argument("--scores", help="scores CSV (default OUT/scores.csv)")
    ab = common(sub.add_parser("ablate", help="rerun the attack stage over ablation arms"))
    ab.add_argument("--kind", required=True, choices=harness.ABLATION_KINDS)
    ab.add_argument("--arms", required=True,
                    help="comma-separated arms: k values or 'all' (topk), M values (augmentations), "
                         "or metaclassifier kinds (meta_arch)")
    common(sub.add_parser("run", help="all stages end to end"))
    return p


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _parse_arms(kind: str, text: str) -> list:
    parts = [a.strip() for a in text.split(",") if a.strip()]
    if kind == "meta_arch":
        return [{"kind": a} for a in parts]
    if kind == "topk":
        return ["all" if a == "all" else int(a) for a in parts]
    return [int(a) for a in parts]


def _dispatch(args) -> None:
    cfg = harness.load_config(args.config, seed=args.seed, out=args.out)
    out = Path(cfg.out_dir)
    cmd = args.command
    if cmd == "gen-data":
        data = harness.generate_data(cfg)
        harness.save_data(data, out / "data")
        (out / "config.json").parent.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(harness.canonical_json(cfg.to_dict()))
        _emit({"data_dir": str(out / "data"), "pool_size": len(data.population), "challenges": len(data.challenges)})
    elif cmd == "train-shadows":
        ens = harness.train_ensemble(cfg)
        harness.save_ensemble(ens, out / "ensemble")
        _emit({"ensemble_dir": str(out / "ensemble"), "N": len(ens),
               "manifest_hash": harness.manifest_hash(ens.manifest)})
    elif cmd == "attack":
        ens = harness.load_run_ensemble(out)
        report = harness.run_attack_stage(cfg, ens, out)
        _emit({"report": str(out / "report.json"), "auc": {a: s["auc"] for a, s in report.summary.items()}})
    elif cmd == "eval":
        path = Path(args.scores) if args.scores else out / "scores.csv"
        if not path.exists():
            raise FileNotFoundError(f"no scores CSV at {path}; run attack first")
        report = harness.evaluate(harness.read_scores_csv(path), cfg.fpr_targets)
        report.meta_rows_per_point = _meta_rows_from(out)
        harness.write_report(report, out)
        _emit({"report": str(out / "report.json"), "auc": {a: s["auc"] for a, s in report.summary.items()}})
    elif cmd == "ablate":
        arms = _parse_arms(args.kind, args.arms)
        ens = harness.load_run_ensemble(out) if (out / "ensemble" / "manifest.json").exists() else None
        reports = harness.run_ablation(cfg, args.kind, arms, ensemble=ens)
        _emit({r.tag: {a: s["auc"] for a, s in r.summary.items()} for r in reports})
    elif cmd == "run":
        report = harness.run_experiment(cfg)
        _emit({"report": str(out / "report.json"), "auc": {a: s["auc"] for a, s in report.summary.items()}})


def _meta_rows_from(out: Path):
    """Keep ``meta_rows_per_point`` from an earlier report so eval reproduces it."""
    path = out / "report.json"
    if path.exists():
        try:
            return json.loads(path.read_text()).get("meta_rows_per_point")
        except json.JSONDecodeError:
            return None
    return None


def main(argv=None) -> int:
    args = _parser().parse_args(argv)  # exits with status 2 on bad flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _dispatch(args)
    except FileNotFoundError as exc:
        sys.stderr.write(json.dumps({"error": "missing_artifact", "message": str(exc)}) + "\n")
        return ERROR_EXIT
    except TMIError as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return ERROR_EXIT
    return 0


if __name__ == "__main__":
    sys.exit(main())
