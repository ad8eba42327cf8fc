"""Command-line pipeline: build-refset, simulate, evaluate, report.

Exit codes: 0 ok, 2 input error, 3 provenance mismatch, 4 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import cohort as cohort_mod
from . import metrics as metrics_mod
from . import refset as refset_mod
from . import synth
from .estimators import EffectEstimate, METHOD_REGISTRY, RunSettings, run_all_methods
from .formats import dump_json_line, read_jsonl, read_kv_config, sha256_file, write_jsonl

TOOL_VERSION = "0.1.0"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_PROVENANCE = 3
EXIT_INTERNAL = 4


class InputError(Exception):
    pass


class ProvenanceError(Exception):
    pass


def _require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"missing input file: {p}")
    return p


def cmd_build_refset(args) -> int:
    dump = _require_file(args.dump)
    drug_dict = _require_file(args.drug_dict)
    outcome_dict = _require_file(args.outcome_dict)
    built, drops, parsed = refset_mod.build(
        dump, drug_dict, outcome_dict,
        alpha=args.alpha, use_prefilter=not args.no_prefilter,
    )
    refset_mod.save(built, args.out)
    refset_mod.save_drop_report(drops, str(args.out) + ".drops.tsv")
    if parsed.diagnostics:
        diag_path = Path(str(args.out) + ".diagnostics.tsv")
        lines = ["line_number\tmessage"]
        lines += [f"{d.line_number}\t{d.message}" for d in parsed.diagnostics]
        diag_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(built.entries)} reference entries to {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    scenario_path = _require_file(args.scenario)
    try:
        scenario = json.loads(scenario_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid scenario JSON: {exc}") from exc
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)

    drugs, outcomes = set(), set()
    if "claims" in scenario:
        try:
            config = synth.ScenarioConfig.from_dict(scenario["claims"])
        except (TypeError, ValueError) as exc:
            raise InputError(f"invalid claims scenario: {exc}") from exc
        patients, dense_rows, _ = synth.gen_claims(config, rng)
        write_jsonl(out_dir / "claims.jsonl", patients)
        write_jsonl(out_dir / "dense_features.jsonl", dense_rows)
        (out_dir / "vocab.txt").write_text(
            "\n".join(synth.vocabulary(config)) + "\n", encoding="utf-8")
        n_mc = int(scenario.get("mc_samples", 1_000_000))
        truth = synth.ground_truth(config, rng, n_mc=n_mc)
        (out_dir / "ground_truth.json").write_text(
            dump_json_line(truth.to_dict()) + "\n", encoding="utf-8")
        drugs |= {config.drug_a, config.drug_b}
        outcomes.add(config.outcome_code)
    if "trials" in scenario:
        planted = []
        for comp in scenario["trials"]:
            try:
                planted.append(synth.PlantedComparison(**comp))
            except (TypeError, ValueError) as exc:
                raise InputError(f"invalid planted comparison: {exc}") from exc
            drugs |= {comp["drug_a"], comp["drug_b"]}
            outcomes.add(comp["outcome"])
        lines = synth.gen_trial_dump(planted, seed=args.seed + 1)
        (out_dir / "trial_dump.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if drugs:
        (out_dir / "drug_dict.tsv").write_text(
            "\n".join(synth.make_drug_dictionary_rows(drugs)) + "\n", encoding="utf-8")
        (out_dir / "outcome_dict.tsv").write_text(
            "\n".join(synth.make_outcome_dictionary_rows(outcomes)) + "\n", encoding="utf-8")
    if not drugs:
        raise InputError("scenario defines neither 'claims' nor 'trials'")
    print(f"simulation outputs written to {out_dir}")
    return EXIT_OK


def _entry_id(entry) -> str:
    return f"{entry.drug_a}__{entry.drug_b}__{entry.outcome_code}"


def _estimate_record(entry, est: EffectEstimate) -> dict:
    return {
        "drug_a": entry.drug_a,
        "drug_b": entry.drug_b,
        "outcome_code": entry.outcome_code,
        "method_id": est.method_id,
        "scale": est.scale,
        "point": est.point if math.isfinite(est.point) else None,
        "std_error": est.std_error if math.isfinite(est.std_error) else None,
        "converged": bool(est.converged),
        "n_used": int(est.n_used),
        "note": est.note,
    }


def cmd_evaluate(args) -> int:
    refset_path = _require_file(args.refset)
    db_path = _require_file(args.db)
    vocab_path = _require_file(args.vocab)
    reference = refset_mod.load(refset_path)
    db = cohort_mod.load_patient_db(
        db_path, vocab_path,
        dense_features_path=_require_file(args.dense_features) if args.dense_features else None,
    )

    settings_kv = read_kv_config(_require_file(args.config)) if args.config else {}
    seed = args.seed if args.seed is not None else (
        int(settings_kv["seed"]) if "seed" in settings_kv else None)
    if seed is None:
        raise InputError("an explicit --seed (or seed= in the run config) is required")

    methods = tuple(METHOD_REGISTRY)
    if args.ablation_standard_ipw:
        methods = ("cox_ipw_overlap", "cox_ipw_standard")
    if args.methods:
        requested = tuple(args.methods.split(","))
        unknown = [m for m in requested if m not in METHOD_REGISTRY]
        if unknown:
            raise InputError(f"unknown methods: {unknown}; registry: {METHOD_REGISTRY}")
        methods = requested

    expected_vocab = reference.provenance.get("db_vocab_sha256")
    if expected_vocab is not None and expected_vocab != sha256_file(vocab_path):
        raise ProvenanceError("reference set was built against a different db vocabulary")

    settings_base = RunSettings(
        ridge=float(settings_kv.get("ridge", 1e-6)),
        caliper_sd_logit=float(settings_kv.get("caliper_sd_logit", 0.2)),
        weight_cap=float(settings_kv.get("weight_cap", 100.0)),
        tau_percentile=float(settings_kv.get("tau_percentile", 0.8)),
        methods=methods,
    )
    max_per_arm = int(settings_kv.get("max_per_arm", cohort_mod.MAX_ARM_SIZE))
    min_per_arm = int(settings_kv.get("min_per_arm", cohort_mod.MIN_ARM_SIZE))

    out_path = Path(args.out)
    parts_dir = Path(str(out_path) + ".parts")
    parts_dir.mkdir(parents=True, exist_ok=True)

    root = np.random.SeedSequence(seed)
    entry_seeds = root.generate_state(2 * max(len(reference.entries), 1))
    records = []
    for i, entry in enumerate(reference.entries):
        part = parts_dir / f"{_entry_id(entry)}.jsonl"
        if args.resume and part.is_file():
            _, recs = read_jsonl(part)
            records.extend(recs)
            continue
        cohort_seed = int(entry_seeds[2 * i])
        method_seed = int(entry_seeds[2 * i + 1])
        built = cohort_mod.build_cohort(db, entry, seed=cohort_seed,
                                        max_per_arm=max_per_arm, min_per_arm=min_per_arm)
        entry_records = []
        if isinstance(built, cohort_mod.SkipSignal):
            for method_id in methods:
                scale = ("log_hazard_ratio" if method_id.startswith("cox")
                         else "rmst_difference_days")
                est = EffectEstimate(method_id=method_id, scale=scale, point=math.nan,
                                     std_error=math.nan, converged=False, n_used=0,
                                     note=f"cohort skipped: {built.reason}")
                entry_records.append(_estimate_record(entry, est))
        else:
            settings = dataclasses.replace(settings_base, seed=method_seed)
            for est in run_all_methods(built, settings):
                entry_records.append(_estimate_record(entry, est))
        write_jsonl(part, entry_records)
        records.extend(entry_records)

    records.sort(key=lambda r: (r["drug_a"], r["drug_b"], r["outcome_code"], r["method_id"]))
    header = {
        "kind": "estimates",
        "tool_version": TOOL_VERSION,
        "refset_sha256": sha256_file(refset_path),
        "config_sha256": sha256_file(args.config) if args.config else None,
        "seed": seed,
        "methods": list(methods),
    }
    write_jsonl(out_path, records, header=header)
    print(f"wrote {len(records)} estimate rows to {out_path}")
    return EXIT_OK


def cmd_report(args) -> int:
    estimates_path = _require_file(args.estimates)
    refset_path = _require_file(args.refset)
    header, records = read_jsonl(estimates_path, expect_header=True)
    if header is None or header.get("kind") != "estimates":
        raise InputError(f"{estimates_path}: not an estimates file")
    if not records:
        raise InputError(f"{estimates_path}: no estimate rows")
    if header.get("refset_sha256") != sha256_file(refset_path):
        raise ProvenanceError("estimates were produced against a different reference set")
    reference = refset_mod.load(refset_path)

    hr_thresholds = [float(t) for t in args.thresholds.split(",")] if args.thresholds \
        else list(metrics_mod.FIXED_HR_THRESHOLDS)
    rmst_thresholds = [float(t) for t in args.rmst_thresholds.split(",")] \
        if args.rmst_thresholds else []

    by_method: dict[str, dict] = {}
    for rec in records:
        key = (rec["drug_a"], rec["drug_b"], rec["outcome_code"])
        by_method.setdefault(rec["method_id"], {"scale": rec["scale"], "rows": {}})
        by_method[rec["method_id"]]["rows"][key] = rec

    table_lines = ["method_id\tscale\tthreshold\tthreshold_magnitude\tprecision\trecall"
                   "\trecall_evaluable\ttp\tfp\tfn\tn_evaluable"]
    curve_lines = ["method_id\tscale\tthreshold_magnitude\tprecision\trecall"
                   "\trecall_evaluable\ttp\tfp\tfn\tn_evaluable"]

    def fmt(value):
        return "" if value is None else f"{value:.6g}"

    for method_id in sorted(by_method):
        scale = by_method[method_id]["scale"]
        effects = []
        for key, rec in by_method[method_id]["rows"].items():
            available = rec["converged"] and rec["point"] is not None
            if available:
                effects.append(metrics_mod.ScoredEffect(
                    key, method_id, True,
                    metrics_mod.direction_of(scale, rec["point"]),
                    metrics_mod.magnitude_of(scale, rec["point"])))
            else:
                effects.append(metrics_mod.ScoredEffect(
                    key, method_id, False, refset_mod.DIRECTION_NONE, math.nan))
        raw_thresholds = hr_thresholds if scale == metrics_mod.SCALE_LOG_HR else rmst_thresholds
        for raw in raw_thresholds:
            mag = metrics_mod.threshold_to_magnitude(scale, raw)
            row = metrics_mod.score(effects, reference, mag, method_id)
            table_lines.append("\t".join([
                method_id, scale, fmt(raw), fmt(mag), fmt(row.weighted_precision),
                fmt(row.recall), fmt(row.recall_evaluable),
                str(row.tp), str(row.fp), str(row.fn), str(row.n_evaluable)]))
        try:
            curve = metrics_mod.pr_curve(effects, reference, scale, method_id)
        except ValueError:
            continue
        for row in curve:
            curve_lines.append("\t".join([
                method_id, scale, fmt(row.threshold), fmt(row.weighted_precision),
                fmt(row.recall), fmt(row.recall_evaluable),
                str(row.tp), str(row.fp), str(row.fn), str(row.n_evaluable)]))

    out_prefix = Path(args.out)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(str(out_prefix) + ".table.tsv").write_text(
        "\n".join(table_lines) + "\n", encoding="utf-8")
    Path(str(out_prefix) + ".pr_curve.tsv").write_text(
        "\n".join(curve_lines) + "\n", encoding="utf-8")
    print(f"wrote report files with prefix {out_prefix}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trialbench",
        description="Reference-set construction and observational-method benchmarking",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-refset", help="build a reference set from a trial dump")
    p.add_argument("--dump", required=True)
    p.add_argument("--drug-dict", required=True)
    p.add_argument("--outcome-dict", required=True)
    p.add_argument("--alpha", type=float, default=refset_mod.DEFAULT_ALPHA)
    p.add_argument("--no-prefilter", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_refset)

    p = sub.add_parser("simulate", help="generate synthetic claims and/or trial dumps")
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="run the estimator suite over a reference set")
    p.add_argument("--refset", required=True)
    p.add_argument("--db", required=True, help="patient event-stream jsonl")
    p.add_argument("--vocab", required=True)
    p.add_argument("--dense-features", default=None)
    p.add_argument("--config", default=None, help="key=value run configuration file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--methods", default=None, help="comma-separated method ids")
    p.add_argument("--ablation-standard-ipw", action="store_true",
                   help="run only the overlap vs standard IPW comparison arms")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--jobs", type=int, default=1,
                   help="reserved parallelism degree (entries are independent)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="score estimates against a reference set")
    p.add_argument("--estimates", required=True)
    p.add_argument("--refset", required=True)
    p.add_argument("--thresholds", default=None, help="comma-separated HR thresholds")
    p.add_argument("--rmst-thresholds", default=None, help="comma-separated day thresholds")
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (InputError, refset_mod.ingest.DumpError,
            refset_mod.ingest.DictionaryError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ProvenanceError as exc:
        print(f"provenance error: {exc}", file=sys.stderr)
        return EXIT_PROVENANCE
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
