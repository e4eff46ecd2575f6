"""Command-line entry point.

Commands::

    phantom   synthetic phantom cohort: frames (PGM + .cal), truth JSON, manifest
    train     fit group models and ensemble on a manifest's thermal frames
    score     per-case scores and calls -> score CSV
    evaluate  stratified metrics for one or all fusion policies
    report    overall/fatty/dense comparison across policies
    fixture   per-case reconstruction of the published reference cohort

Logs go to standard error; data goes to ``--out`` or standard output.
Exit status is 0 on success, 1 if any case failed to score, 2 on a
fatal error.  ``score --debug-dir`` additionally writes each case's
hotspot label map and vessel skeleton as 16-bit PGMs.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_config, parse_key_values, with_overrides
from .core import METRIC_NAMES
from .errors import EmptyCohortError, MissingRequiredModalityError, ScreeningError

log = logging.getLogger("densityfusion")

EXIT_OK, EXIT_CASE_FAILED, EXIT_ERROR = 0, 1, 2


def _write(text: str, out) -> None:
    if out is None or str(out) == "-":
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8", newline="\n")
        log.info("wrote %s", out)


def _config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    return with_overrides(cfg, policy=getattr(args, "policy", None), seed=getattr(args, "seed", None))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_phantom(args) -> int:
    from .pipeline import PhantomCohortSpec, write_phantom_cohort

    kv = {}
    if args.config:
        kv = parse_key_values(Path(args.config).read_text(encoding="utf-8"), args.config)
    if args.n is not None:
        kv["n"] = str(args.n)
    spec = PhantomCohortSpec.from_key_values(kv)
    manifest = write_phantom_cohort(spec, args.out, args.seed if args.seed is not None else 0)
    log.info("%d phantom cases, manifest %s", spec.n, manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    import numpy as np

    from .pipeline import case_features
    from .risk import save_model, train_thermal_model
    from .thermal_io import load_manifest

    cfg = _config(args)
    cases = load_manifest(args.manifest)
    if not cases:
        raise EmptyCohortError("manifest has no cases")
    base = Path(args.manifest).parent
    vecs = [case_features(c, base, cfg.segmentation) for c in cases]
    y = np.array([c.ground_truth.positive for c in cases], dtype=float)
    model, losses = train_thermal_model(vecs, [c.age for c in cases], [c.menopause for c in cases], y,
                                        lam=cfg.train_lambda, iters=cfg.train_iters, bins=cfg.bins)
    pred = np.array([model.score(v, c.age, c.menopause)["thermal_positive"] for v, c in zip(vecs, cases)])
    log.info("training accuracy %.4f on %d cases", float(np.mean(pred == (y > 0))), len(cases))
    save_model(model, args.out)
    for name, loss in losses.items():
        print(f"final_loss.{name}={loss!r}")
    return EXIT_OK


def cmd_score(args) -> int:
    from .pipeline import format_scores, score_cases, write_debug_maps
    from .risk import load_model
    from .thermal_io import load_manifest

    cfg = _config(args)
    cases = load_manifest(args.manifest)
    model = load_model(args.model)
    base = Path(args.manifest).parent
    rows = score_cases(cases, base, model, cfg.segmentation, cfg.mammo_threshold, jobs=args.jobs)
    failed = 0
    for r in rows:
        if r.failed:
            failed += 1
            log.error("%s FAILED: %s", r.case_id, r.error)
    if args.debug_dir:
        for c, r in zip(cases, rows):
            if not r.failed:
                write_debug_maps(c, base, cfg.segmentation, args.debug_dir)
    _write(format_scores(rows), args.out)
    log.info("scored %d cases, %d failed", len(rows), failed)
    return EXIT_CASE_FAILED if failed else EXIT_OK


def _load_results(args, cfg: RunConfig):
    from .pipeline import parse_scores
    from .risk import mammo_positive
    from .core import Source, TestResult
    from .thermal_io import load_manifest

    cases = load_manifest(args.manifest)
    if not cases:
        raise EmptyCohortError("manifest has no cases")
    scores = parse_scores(Path(args.scores).read_text(encoding="utf-8"))
    mammo, thermal = [], []
    for c in cases:
        row = scores.get(c.case_id)
        m = row.mammo_result() if row is not None else None
        if m is None and c.mammo_prob is not None:
            m = TestResult(mammo_positive(c.mammo_prob, cfg.mammo_threshold), Source.MAMMO_AI)
        mammo.append(m)
        thermal.append(row.thermal_result() if row is not None else None)
    return cases, mammo, thermal


def _policy_tables(cases, mammo, thermal, policy):
    """``{policy: stratified table}`` for the requested or every runnable policy."""
    from .evaluate import stratified_report
    from .fusion import FusionPolicy, run_policy

    wanted = [policy] if policy is not None else [
        FusionPolicy.MAMMO_ONLY, FusionPolicy.THERMAL_ONLY, FusionPolicy.OR_RULE, FusionPolicy.DENSITY_INFORMED]
    tables = {}
    for pol in wanted:
        try:
            results = run_policy(pol, cases, mammo, thermal)
        except MissingRequiredModalityError as exc:
            if policy is not None:
                raise
            log.warning("skipping %s: %d case(s) lack the required modality", pol.value, len(exc.case_ids))
            continue
        tables[pol] = stratified_report(cases, results)
    if not tables:
        raise MissingRequiredModalityError("no fusion policy can run on these inputs")
    return tables


def cmd_evaluate(args) -> int:
    from .evaluate import format_report_csv, format_report_text

    cfg = _config(args)
    cases, mammo, thermal = _load_results(args, cfg)
    tables = _policy_tables(cases, mammo, thermal, cfg.policy)
    text = []
    for pol, table in tables.items():
        text.append(format_report_text(table, title=f"[{pol.value}]"))
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            _write(format_report_csv(table), out / f"report_{pol.value}.csv")
    sys.stdout.write("\n".join(text))
    return EXIT_OK


def cmd_report(args) -> int:
    import csv
    import io

    from .evaluate import UNDEFINED, fmt_pct

    cfg = _config(args)
    cases, mammo, thermal = _load_results(args, cfg)
    tables = _policy_tables(cases, mammo, thermal, cfg.policy)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("policy", "stratum") + METRIC_NAMES)
    lines = []
    for pol, table in tables.items():
        for stratum in ("overall", "fatty", "dense"):
            rep = table[stratum]
            cells = []
            for metric in METRIC_NAMES:
                est = None if rep is None else getattr(rep, metric)
                cells.append(UNDEFINED if est is None else
                             f"{fmt_pct(est.point)} ({fmt_pct(est.ci_lo)}-{fmt_pct(est.ci_hi)})")
            w.writerow([pol.value, stratum] + cells)
            lines.append(f"{pol.value:<17} {stratum:<8} " + "  ".join(cells))
    sys.stdout.write("\n".join(lines) + "\n")
    if args.out:
        _write(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_fixture(args) -> int:
    from .cohort import build_reference_cohort, reference_score_rows
    from .pipeline import ScoreRow, format_scores
    from .risk import to_bscore
    from .thermal_io import write_manifest

    cfg = _config(args)
    seed = args.seed if args.seed is not None else 0
    cohort = build_reference_cohort(seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest([rc.record for rc in cohort], out / "manifest.csv")
    rows = [ScoreRow(r["case_id"], ensemble=r["ensemble"], bscore=to_bscore(r["ensemble"], cfg.bins).grade,
                     thermal_positive=r["thermal_positive"], mammo_positive=r["mammo_positive"])
            for r in reference_score_rows(cohort, cfg.bins, seed)]
    _write(format_scores(rows), out / "scores.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="densityfusion", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a phantom cohort")
    p.add_argument("--config", help="phantom spec (key=value: n, malignant_fraction, frame fields)")
    p.add_argument("--n", type=int, help="number of cases (overrides the phantom config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("train", help="train the thermal risk model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="model file to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--config")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--debug-dir", help="write hotspot/vessel PGMs here")
    p.add_argument("--out", help="score CSV (default: stdout)")
    p.set_defaults(func=cmd_score)

    for name, func, help_ in (("evaluate", cmd_evaluate, "stratified metrics per policy"),
                              ("report", cmd_report, "overall/fatty/dense comparison")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--scores", required=True, help="score CSV from 'score' or 'fixture'")
        p.add_argument("--manifest", required=True)
        p.add_argument("--config")
        p.add_argument("--policy", help="DENSITY_INFORMED, OR_RULE, MAMMO_ONLY, THERMAL_ONLY or ALL")
        p.add_argument("--out", help="output directory" if name == "evaluate" else "CSV file")
        p.set_defaults(func=func)

    p = sub.add_parser("fixture", help="write the reference cohort manifest and scores")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_fixture)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ScreeningError as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    except OSError as exc:
        log.error("IO error: %s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
