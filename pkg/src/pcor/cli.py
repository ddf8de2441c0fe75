"""Command-line entry point: ``pcor <command> [options]``.

Every command is deterministic for a fixed seed. Wall-clock figures are left
out of the output unless ``--timing`` is given.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from pcor import __version__
from pcor.audit import DEFAULT_DELTAS, MATCH_METRIC, coe_match_study, ratio_study
from pcor.detectors import KINDS as DETECTOR_KINDS
from pcor.detectors import DetectorSpec
from pcor.errors import PcorError
from pcor.experiments import (
    AXES,
    RunConfig,
    RunSummary,
    emit_stats,
    load_source,
    metadata,
    parse_config_file,
    random_outliers,
    rows_from_csv,
    rows_to_csv,
    run_experiment,
    sweep,
)
from pcor.fixtures import PRESETS, generate_fixture, write_fixture
from pcor.oracle import DEFAULT_CAP, build_reference_file
from pcor.samplers import KINDS as SAMPLER_KINDS
from pcor.samplers import DEFAULT_MAX_ATTEMPTS, SamplerSpec
from pcor.utility import KINDS as UTILITY_KINDS
from pcor.utility import UtilitySpec

_BOOL_KEYS = {"timing", "cache_evaluations"}


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _add_source(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("dataset")
    g.add_argument("--data", help="CSV data file")
    g.add_argument("--schema", help="schema sidecar file")
    g.add_argument("--fixture", choices=sorted(PRESETS), help="built-in synthetic fixture")
    g.add_argument("--fixture-seed", type=int, default=0)


def _add_detector(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("detector")
    g.add_argument("--detector", choices=DETECTOR_KINDS, default="lof")
    g.add_argument("--grubbs-alpha", type=float, default=0.05)
    g.add_argument("--lof-k", type=int, default=10)
    g.add_argument("--lof-threshold", type=float, default=1.5)
    g.add_argument("--hist-coeff", type=float, default=2.5e-3)
    g.add_argument("--min-population", type=int, default=None)


def _add_run(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("release")
    g.add_argument("--utility", choices=UTILITY_KINDS, default="popsize")
    g.add_argument("--sampler", choices=SAMPLER_KINDS, default="bfs")
    g.add_argument("--n", type=int, default=50)
    g.add_argument("--epsilon", type=float, default=0.2)
    g.add_argument("--max-attempts", type=int, default=DEFAULT_MAX_ATTEMPTS)
    g.add_argument("--reps", type=int, default=200)
    g.add_argument("--target-id", type=_ints, default=(), help="comma-separated record ids")
    g.add_argument("--targets", type=int, default=10, help="random target count")
    g.add_argument("--target-pool", choices=("all", "hidden"), default="all")
    g.add_argument("--min-coe", type=int, default=1)
    g.add_argument("--reference", help="reference file from 'pcor oracle'")
    g.add_argument("--cache-evaluations", action="store_true",
                   help="share context evaluations across repetitions of a target")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file supplying option defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="include wall-clock figures")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcor", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"pcor {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.set_defaults(_subparsers=sub.choices)

    p = sub.add_parser("oracle", help="enumerate every context into a reference file")
    _add_source(p)
    _add_detector(p)
    _add_common(p)
    p.add_argument("--utility", choices=UTILITY_KINDS, default="popsize")
    p.add_argument("--cap", type=int, default=DEFAULT_CAP)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="repeated private releases with a summary")
    _add_source(p)
    _add_detector(p)
    _add_run(p)
    _add_common(p)
    p.add_argument("--out", help="write per-repetition rows (CSV) here")

    p = sub.add_parser("sweep", help="run once per value of one parameter")
    _add_source(p)
    _add_detector(p)
    _add_run(p)
    _add_common(p)
    p.add_argument("--axis", choices=AXES, required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--stats", help="also write histogram bins here")
    p.add_argument("--stats-format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("coe-match", help="COE match under record removal")
    _add_source(p)
    _add_detector(p)
    _add_common(p)
    p.add_argument("--detectors", default="grubbs,lof,histogram")
    p.add_argument("--deltas", type=_ints, default=DEFAULT_DELTAS)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--targets", type=int, default=100)
    p.add_argument("--out", help="write the long-format table here")

    p = sub.add_parser("privacy-check", help="exact probability-ratio audit")
    _add_source(p)
    _add_detector(p)
    _add_common(p)
    p.add_argument("--utility", choices=UTILITY_KINDS, default="popsize")
    p.add_argument("--epsilon", type=float, default=0.2)
    p.add_argument("--delta", type=int, default=1)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--targets", type=int, default=20)
    p.add_argument("--out", help="write per-pair rows (CSV) here")

    p = sub.add_parser("gen-fixture", help="write a synthetic dataset and schema")
    p.add_argument("--config", help="key = value file supplying option defaults")
    p.add_argument("--preset", choices=sorted(PRESETS), default="small")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--records", type=int)
    p.add_argument("--domain-sizes", type=_ints)
    p.add_argument("--unused", type=_ints)
    p.add_argument("--hidden", type=int)
    p.add_argument("--data-out", required=True)
    p.add_argument("--schema-out", required=True)

    p = sub.add_parser("stats", help="histogram bins from run row files")
    p.add_argument("--config", help="key = value file supplying option defaults")
    p.add_argument("--input", action="append", required=True, help="rows CSV (repeatable)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Load ``--config`` values as defaults of the chosen subcommand."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config or not known.command:
        return
    try:
        values = parse_config_file(Path(known.config).read_text())
    except OSError as exc:
        raise PcorError(f"cannot read config {known.config}: {exc}") from exc
    sub = parser.get_default("_subparsers").get(known.command)
    if sub is None:
        return
    dests = {a.dest for a in sub._actions}
    unknown = sorted(set(values) - dests)
    if unknown:
        raise PcorError(f"unknown config keys for {known.command}: {unknown}")
    for key in _BOOL_KEYS & set(values):
        values[key] = values[key].lower() in ("1", "true", "yes", "on")
    sub.set_defaults(**values)


def _detector(args) -> DetectorSpec:
    return DetectorSpec(
        kind=args.detector,
        grubbs_alpha=args.grubbs_alpha,
        lof_k=args.lof_k,
        lof_threshold=args.lof_threshold,
        hist_freq_coeff=args.hist_coeff,
        min_population=args.min_population,
    )


def _run_config(args) -> RunConfig:
    return RunConfig(
        data=args.data,
        schema=args.schema,
        fixture=args.fixture,
        fixture_seed=args.fixture_seed,
        detector=_detector(args),
        utility=args.utility,
        sampler=SamplerSpec(args.sampler, args.n, args.epsilon, None, args.max_attempts),
        reps=args.reps,
        seed=args.seed,
        reference=args.reference,
        target_ids=tuple(args.target_id),
        target_count=args.targets,
        target_pool=args.target_pool,
        min_coe=args.min_coe,
        workers=args.workers,
        cache_evaluations=args.cache_evaluations,
    )


def _source_config(args, **extra) -> RunConfig:
    return RunConfig(data=args.data, schema=args.schema, fixture=args.fixture,
                     fixture_seed=args.fixture_seed, detector=_detector(args),
                     seed=args.seed, **extra)


def _dump(obj, out=None) -> None:
    (out or sys.stdout).write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_oracle(args) -> None:
    config = _source_config(args, utility=args.utility)
    dataset, _ = load_source(config)
    ref = build_reference_file(dataset, config.detector, args.utility, args.out,
                               cap=args.cap, workers=args.workers)
    _dump({"metadata": metadata(config), "contexts": len(ref.rows),
           "outliers": len(ref.index), "fingerprint": ref.fingerprint, "out": args.out})


def cmd_run(args) -> None:
    config = _run_config(args)
    summary = run_experiment(config)
    meta = metadata(config)
    if args.out:
        Path(args.out).write_text(rows_to_csv(summary.rows, meta, timing=args.timing))
    _dump({"metadata": meta, "summary": summary.to_dict(timing=args.timing)})


def _parse_axis_values(axis: str, text: str) -> list:
    parts = [x.strip() for x in text.split(",") if x.strip()]
    if axis == "epsilon":
        return [float(x) for x in parts]
    if axis == "n":
        return [int(x) for x in parts]
    return parts


def cmd_sweep(args) -> None:
    config = _run_config(args)
    values = _parse_axis_values(args.axis, args.values)
    summaries = sweep(config, args.axis, values)
    meta = dict(metadata(config), axis=args.axis, values=values)
    if args.stats:
        emit_stats(summaries, args.stats_format, args.stats, meta, timing=args.timing)
    _dump({"metadata": meta, "summaries": [s.to_dict(timing=args.timing) for s in summaries]})


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.2f}"


def cmd_coe_match(args) -> None:
    config = _source_config(args)
    dataset, _ = load_source(config)
    kinds = [k.strip() for k in args.detectors.split(",") if k.strip()]
    base = _detector(args)
    rows = []
    seeds = np.random.SeedSequence(args.seed).spawn(len(kinds))
    for kind, seq in zip(kinds, seeds):
        det = replace(base, kind=kind)
        target_seq, study_seq = seq.spawn(2)
        targets = random_outliers(dataset, det, args.targets, np.random.default_rng(target_seq))
        study_seed = int(study_seq.generate_state(1)[0])
        report = coe_match_study(dataset, targets, [det], args.deltas, args.trials,
                                 seed=study_seed, workers=args.workers)
        rows.extend(report.rows)
    meta = dict(metadata(config), metric=MATCH_METRIC, trials=args.trials, targets=args.targets)
    out = ["# " + json.dumps(meta, sort_keys=True),
           ",".join(["algorithm"] + [f"delta={d}" for d in args.deltas])]
    for kind in kinds:
        cells = {r.delta: r.mean_match for r in rows if r.detector == kind}
        out.append(",".join([kind] + [_fmt(cells[d]) for d in args.deltas]))
    sys.stdout.write("\n".join(out) + "\n")
    if args.out:
        lines = out[:1] + ["detector,delta,mean_match,pairs,vacuous,skipped"]
        lines += [f"{r.detector},{r.delta},{r.mean_match!r},{r.pairs},{r.vacuous},{r.skipped}"
                  for r in rows]
        Path(args.out).write_text("\n".join(lines) + "\n")


def cmd_privacy_check(args) -> None:
    config = _source_config(args, utility=args.utility)
    dataset, _ = load_source(config)
    target_seq, study_seq = np.random.SeedSequence(args.seed).spawn(2)
    targets = random_outliers(dataset, config.detector, args.targets,
                              np.random.default_rng(target_seq))
    summary = ratio_study(dataset, targets, config.detector, UtilitySpec(args.utility),
                          args.epsilon, delta=args.delta, trials=args.trials,
                          seed=int(study_seq.generate_state(1)[0]))
    meta = metadata(config)
    if args.out:
        lines = ["# " + json.dumps(meta, sort_keys=True),
                 "target_id,max_ratio,bound,contexts,equal_coe,passed,flag"]
        lines += [f"{r.target_id},{r.max_ratio!r},{r.bound!r},{r.contexts},"
                  f"{int(r.equal_coe)},{int(r.passed)},{r.flag}" for r in summary.reports]
        Path(args.out).write_text("\n".join(lines) + "\n")

    def frac(x: float):
        return None if math.isnan(x) else x

    _dump({
        "metadata": meta,
        "epsilon": args.epsilon,
        "bound": math.exp(args.epsilon),
        "pairs": len(summary.reports),
        "equal_coe_pairs": summary.count(True),
        "equal_coe_within_bound": frac(summary.fraction_within(True)),
        "unequal_coe_pairs": summary.count(False),
        "unequal_coe_within_bound": frac(summary.fraction_within(False)),
        "flagged": summary.flagged,
    })


def cmd_gen_fixture(args) -> None:
    base = PRESETS[args.preset]
    overrides = {"seed": args.seed}
    if args.records is not None:
        overrides["n_records"] = args.records
    if args.domain_sizes is not None:
        overrides["domain_sizes"] = args.domain_sizes
        overrides.setdefault("unused_values", (0,) * len(args.domain_sizes))
    if args.unused is not None:
        overrides["unused_values"] = args.unused
    if args.hidden is not None:
        overrides["n_hidden"] = args.hidden
    try:
        params = replace(base, **overrides)
    except ValueError as exc:
        raise PcorError(str(exc)) from exc
    fx = generate_fixture(params)
    write_fixture(fx, args.data_out, args.schema_out)
    _dump({"metadata": {"version": __version__, "seed": args.seed}, **fx.metadata(),
           "t": params.t, "records": len(fx.dataset)})


def cmd_stats(args) -> None:
    summaries = []
    timed = True
    placeholder = RunConfig(fixture="small")
    for path in args.input:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise PcorError(f"cannot read {path}: {exc}") from exc
        header = next((ln for ln in text.splitlines() if not ln.startswith("#")), "")
        timed = timed and "wall_time" in header.split(",")
        summaries.append(RunSummary(Path(path).stem, placeholder, tuple(rows_from_csv(text))))
    text = emit_stats(summaries, args.format, args.out, {"version": __version__}, timing=timed)
    if not args.out:
        sys.stdout.write(text)


COMMANDS = {
    "oracle": cmd_oracle,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "coe-match": cmd_coe_match,
    "privacy-check": cmd_privacy_check,
    "gen-fixture": cmd_gen_fixture,
    "stats": cmd_stats,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        COMMANDS[args.command](args)
    except PcorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
