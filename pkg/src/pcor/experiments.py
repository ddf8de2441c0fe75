"""Seeded batch runs of private releases, sweeps and result files.

Seeds derive from one ``SeedSequence``: the first child picks targets and
starting contexts, the second is split once per repetition. Repetitions cycle
through the targets and results are merged back in repetition order, so the
worker count never changes the output.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from pcor import __version__
from pcor.dataset import Context, Dataset, Record, load_dataset_files
from pcor.detectors import DetectorSpec
from pcor.errors import ConfigurationError, PcorError, PreconditionError
from pcor.evaluator import ContextEvaluator
from pcor.fixtures import Fixture, preset_fixture
from pcor.oracle import (
    ReferenceFile,
    build_reference,
    fingerprint,
    load_reference_file,
    max_utility,
)
from pcor.samplers import SamplerSpec, find_starting_context, release
from pcor.utility import POPSIZE, UtilitySpec

Z90 = 1.645
STAT_BINS = 20
AXES = ("epsilon", "n", "sampler", "detector", "utility")


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce a batch of releases.

    The dataset comes from ``data``/``schema`` files or a named ``fixture``.
    Targets are ``target_ids`` if given, else ``target_count`` random records
    with at least ``min_coe`` matching contexts, drawn from ``target_pool``
    (``all`` records, or the fixture's planted ``hidden`` outliers).
    """

    data: str | None = None
    schema: str | None = None
    fixture: str | None = None
    fixture_seed: int = 0
    detector: DetectorSpec = field(default_factory=DetectorSpec)
    utility: str = POPSIZE
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    reps: int = 200
    seed: int = 0
    reference: str | None = None
    target_ids: tuple[int, ...] = ()
    target_count: int = 10
    target_pool: str = "all"
    min_coe: int = 1
    workers: int = 1
    cache_evaluations: bool = False

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigurationError("reps must be >= 1")
        if self.target_count < 1:
            raise ConfigurationError("target count must be >= 1")
        if self.min_coe < 1:
            raise ConfigurationError("min_coe must be >= 1")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if self.target_pool not in ("all", "hidden"):
            raise ConfigurationError("target_pool must be 'all' or 'hidden'")
        if (self.fixture is None) == (self.data is None):
            raise ConfigurationError("give exactly one of a fixture name or a data file")
        if self.data is not None and self.schema is None:
            raise ConfigurationError("a data file needs a schema file")
        UtilitySpec(self.utility)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["detector"] = self.detector.to_dict()
        sampler = asdict(self.sampler)
        sampler["starting_context"] = None
        d["sampler"] = sampler
        d["target_ids"] = list(self.target_ids)
        return d

    @property
    def hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def metadata(config: RunConfig) -> dict:
    return {"version": __version__, "seed": config.seed, "config_hash": config.hash}


def load_source(config: RunConfig) -> tuple[Dataset, Fixture | None]:
    if config.fixture is not None:
        fx = preset_fixture(config.fixture, seed=config.fixture_seed)
        return fx.dataset, fx
    return load_dataset_files(config.data, config.schema), None


@dataclass(frozen=True)
class RepRow:
    rep: int
    target_id: int
    context: str
    utility: float
    max_utility: float
    ratio: float
    invocations: int
    expansions: int
    attempts: int
    wall_time: float
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


ROW_FIELDS = tuple(RepRow.__dataclass_fields__)


@dataclass(frozen=True)
class RunSummary:
    label: str
    config: RunConfig
    rows: tuple[RepRow, ...]

    @property
    def ok_rows(self) -> list[RepRow]:
        return [r for r in self.rows if r.ok]

    @property
    def errors(self) -> int:
        return len(self.rows) - len(self.ok_rows)

    @property
    def ratios(self) -> np.ndarray:
        return np.array([r.ratio for r in self.ok_rows], dtype=float)

    @property
    def wall_times(self) -> np.ndarray:
        return np.array([r.wall_time for r in self.ok_rows], dtype=float)

    @property
    def mean_ratio(self) -> float:
        x = self.ratios
        return float(x.mean()) if len(x) else math.nan

    @property
    def ci90(self) -> tuple[float, float]:
        """Normal-approximation interval: mean +- 1.645 * s / sqrt(reps)."""
        x = self.ratios
        if len(x) < 2:
            return (self.mean_ratio, self.mean_ratio)
        half = Z90 * float(x.std(ddof=1)) / math.sqrt(len(x))
        return (self.mean_ratio - half, self.mean_ratio + half)

    def time_stats(self) -> dict:
        w = self.wall_times
        if not len(w):
            return {"min": math.nan, "max": math.nan, "mean": math.nan}
        return {"min": float(w.min()), "max": float(w.max()), "mean": float(w.mean())}

    def to_dict(self, timing: bool = True) -> dict:
        lo, hi = self.ci90
        d = {
            "label": self.label,
            "reps": len(self.rows),
            "errors": self.errors,
            "mean_ratio": self.mean_ratio,
            "ci90": [lo, hi],
            "mean_expansions": float(np.mean([r.expansions for r in self.ok_rows]))
            if self.ok_rows else math.nan,
        }
        if timing:
            d["wall_time"] = self.time_stats()
        return d


def select_targets(
    dataset: Dataset,
    detector: DetectorSpec,
    count: int,
    rng: np.random.Generator,
    *,
    min_coe: int = 1,
    pool: Sequence[int] | None = None,
    reference: ReferenceFile | None = None,
) -> list[Record]:
    """Random records with at least ``min_coe`` matching contexts.

    A reference file answers the question directly; otherwise candidates are
    tried in random order and checked by enumeration.
    """
    if reference is not None:
        ids = sorted(i for i, rows in reference.index.items() if len(rows) >= min_coe)
        if pool is not None:
            allowed = set(pool)
            ids = [i for i in ids if i in allowed]
        if not ids:
            raise PcorError("no record has enough matching contexts")
        picked = rng.choice(np.array(ids), size=min(count, len(ids)), replace=False)
        return [dataset.record(int(i)) for i in sorted(picked.tolist())]
    candidates = np.array(sorted(pool) if pool is not None else dataset.ids.tolist())
    chosen = []
    for rid in rng.permutation(candidates).tolist():
        target = dataset.record(int(rid))
        ev = ContextEvaluator(dataset, target, detector, UtilitySpec(POPSIZE))
        if ev.count_matches(at_least=min_coe) >= min_coe:
            chosen.append(target)
            if len(chosen) == count:
                break
    if not chosen:
        raise PcorError("no record has enough matching contexts")
    return sorted(chosen, key=lambda r: r.id)


@dataclass(frozen=True)
class _TargetSetup:
    target: Record
    starting: Context
    utility: UtilitySpec
    max_utility: float


def _setup_targets(
    dataset: Dataset,
    config: RunConfig,
    fixture: Fixture | None,
    reference: ReferenceFile | None,
    rng: np.random.Generator,
) -> list[_TargetSetup]:
    detector = config.detector
    if config.target_ids:
        missing = [i for i in config.target_ids if not dataset.has_record(i)]
        if missing:
            raise PreconditionError(f"target ids not in the dataset: {missing}")
        targets = [dataset.record(i) for i in config.target_ids]
    else:
        pool = None
        if config.target_pool == "hidden":
            if fixture is None:
                raise ConfigurationError("target_pool 'hidden' needs a fixture")
            pool = fixture.hidden_ids
        targets = select_targets(dataset, detector, config.target_count, rng,
                                 min_coe=config.min_coe, pool=pool, reference=reference)
    setups = []
    for target in targets:
        start = find_starting_context(dataset, target, detector, rng)
        utility = UtilitySpec(config.utility).with_start(start)
        if reference is not None:
            best = max_utility(reference, target.id, dataset=dataset, starting=start)
        else:
            found = ContextEvaluator(dataset, target, detector, utility).matching_utilities()
            best = max(found.values())
        setups.append(_TargetSetup(target, start, utility, float(best)))
    return setups


def _run_reps(args) -> list[RepRow]:
    dataset, config, setups, jobs, evaluators = args
    rows = []
    for rep, seed_seq in jobs:
        s = setups[rep % len(setups)]
        ev = None
        if config.cache_evaluations:
            key = (s.target.id, config.detector, s.utility)
            ev = evaluators.get(key)
            if ev is None:
                ev = evaluators[key] = ContextEvaluator(
                    dataset, s.target, config.detector, s.utility)
        sampler = replace(config.sampler, starting_context=s.starting)
        rng = np.random.default_rng(seed_seq)
        try:
            out = release(dataset, s.target, config.detector, s.utility, sampler, rng, evaluator=ev)
        except PcorError as exc:
            rows.append(RepRow(rep, s.target.id, "", math.nan, s.max_utility, math.nan,
                               0, 0, 0, 0.0, f"{type(exc).__name__}: {exc}"))
            continue
        rows.append(RepRow(
            rep, s.target.id, str(out.private_context), out.private_utility, s.max_utility,
            out.private_utility / s.max_utility, out.mechanism_invocations, out.expansions,
            out.attempts, out.wall_time,
        ))
    return rows


@dataclass
class RunCache:
    """Reusable work across runs on one dataset.

    Target setups depend only on the fields in ``_setup_key``; evaluators are
    shared only when ``cache_evaluations`` is on and the run is in-process.
    """

    setups: dict = field(default_factory=dict)
    evaluators: dict = field(default_factory=dict)


def _setup_key(config: RunConfig) -> tuple:
    return (config.detector, config.utility, config.seed, config.reference, config.target_ids,
            config.target_count, config.target_pool, config.min_coe)


def run_experiment(
    config: RunConfig,
    *,
    dataset: Dataset | None = None,
    fixture: Fixture | None = None,
    label: str = "",
    cache: RunCache | None = None,
) -> RunSummary:
    """``config.reps`` independent releases; failed repetitions are kept as rows."""
    if dataset is None:
        dataset, fixture = load_source(config)
    if cache is None:
        cache = RunCache()
    setup_seq, rep_seq = np.random.SeedSequence(config.seed).spawn(2)
    key = _setup_key(config)
    setups = cache.setups.get(key)
    if setups is None:
        reference = None
        if config.reference is not None:
            reference = load_reference_file(config.reference)
            reference.check(fingerprint(dataset, config.detector, config.utility))
        setups = _setup_targets(dataset, config, fixture, reference,
                                np.random.default_rng(setup_seq))
        cache.setups[key] = setups
    jobs = list(enumerate(rep_seq.spawn(config.reps)))
    workers = min(config.workers, len(jobs))
    if workers > 1:
        chunks = [jobs[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_run_reps, [(dataset, config, setups, c, {}) for c in chunks]))
        rows = sorted((r for part in parts for r in part), key=lambda r: r.rep)
    else:
        rows = _run_reps((dataset, config, setups, jobs, cache.evaluators))
    return RunSummary(label or config.sampler.kind, config, tuple(rows))


def _with_axis(config: RunConfig, axis: str, value) -> RunConfig:
    if axis == "epsilon":
        return replace(config, sampler=replace(config.sampler, total_epsilon=float(value)))
    if axis == "n":
        return replace(config, sampler=replace(config.sampler, n=int(value)))
    if axis == "sampler":
        return replace(config, sampler=replace(config.sampler, kind=str(value)))
    if axis == "detector":
        return replace(config, detector=replace(config.detector, kind=str(value)))
    if axis == "utility":
        return replace(config, utility=str(value))
    raise ConfigurationError(f"unknown sweep axis {axis!r}; expected one of {AXES}")


def sweep(config: RunConfig, axis: str, values: Sequence, **kwargs) -> list[RunSummary]:
    """One summary per value; every run reuses the config's base seed."""
    if axis not in AXES:
        raise ConfigurationError(f"unknown sweep axis {axis!r}; expected one of {AXES}")
    configs = [_with_axis(config, axis, v) for v in values]
    if not configs:
        return []
    if "dataset" not in kwargs:
        kwargs["dataset"], kwargs["fixture"] = load_source(config)
    kwargs.setdefault("cache", RunCache())
    return [run_experiment(c, label=f"{axis}={v}", **kwargs) for c, v in zip(configs, values)]


def ratio_bins(ratios: Sequence[float]) -> list[int]:
    counts, _ = np.histogram(np.asarray(ratios, dtype=float), bins=STAT_BINS, range=(0.0, 1.0))
    return counts.tolist()


def _runtime_bins(times: np.ndarray) -> tuple[list[int], float, float]:
    if not len(times):
        return [0] * STAT_BINS, 0.0, 0.0
    lo, hi = float(times.min()), float(times.max())
    if hi <= lo:
        hi = lo + 1e-9
    counts, _ = np.histogram(times, bins=STAT_BINS, range=(lo, hi))
    return counts.tolist(), lo, hi


def stats_records(summaries: Sequence[RunSummary], timing: bool = True) -> list[dict]:
    """One record per (config, quantity, bin); runtime bins only with ``timing``."""
    out = []
    edges = np.linspace(0.0, 1.0, STAT_BINS + 1)
    for s in summaries:
        for i, c in enumerate(ratio_bins(s.ratios)):
            out.append({"label": s.label, "quantity": "ratio", "bin": i,
                        "lo": float(edges[i]), "hi": float(edges[i + 1]), "count": c})
        if not timing:
            continue
        counts, lo, hi = _runtime_bins(s.wall_times)
        t_edges = np.linspace(lo, hi, STAT_BINS + 1)
        for i, c in enumerate(counts):
            out.append({"label": s.label, "quantity": "runtime", "bin": i,
                        "lo": float(t_edges[i]), "hi": float(t_edges[i + 1]), "count": c})
    return out


STAT_FIELDS = ("label", "quantity", "bin", "lo", "hi", "count")


def emit_stats(summaries: Sequence[RunSummary], fmt: str, out: str | Path | None = None,
               meta: dict | None = None, timing: bool = True) -> str:
    """Histogram bins of ratios (20 over [0, 1]) and runtimes; returns the text written."""
    records = stats_records(summaries, timing)
    if fmt == "json":
        text = json.dumps({"metadata": meta or {}, "bins": records}, indent=2, sort_keys=True) + "\n"
    elif fmt == "csv":
        buf = io.StringIO()
        if meta:
            buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        writer = csv.DictWriter(buf, STAT_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(records)
        text = buf.getvalue()
    else:
        raise ConfigurationError(f"unknown stats format {fmt!r}")
    if out is not None:
        try:
            Path(out).write_text(text)
        except OSError as exc:
            raise PcorError(f"cannot write {out}: {exc}") from exc
    return text


def read_stats_csv(text: str) -> dict[tuple[str, str], list[int]]:
    """Bin counts per (label, quantity) from ``emit_stats`` CSV output."""
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    out: dict[tuple[str, str], list[int]] = {}
    for row in csv.DictReader(lines):
        out.setdefault((row["label"], row["quantity"]), []).append(int(row["count"]))
    return out


def rows_to_csv(rows: Sequence[RepRow], meta: dict | None = None, timing: bool = True) -> str:
    buf = io.StringIO()
    if meta:
        buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    fields = [f for f in ROW_FIELDS if timing or f != "wall_time"]
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fields)
    for r in rows:
        d = asdict(r)
        writer.writerow([repr(d[f]) if isinstance(d[f], float) else d[f] for f in fields])
    return buf.getvalue()


def rows_from_csv(text: str) -> list[RepRow]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    rows = []
    for d in csv.DictReader(lines):
        rows.append(RepRow(
            rep=int(d["rep"]), target_id=int(d["target_id"]), context=d["context"],
            utility=float(d["utility"]), max_utility=float(d["max_utility"]),
            ratio=float(d["ratio"]), invocations=int(d["invocations"]),
            expansions=int(d["expansions"]), attempts=int(d["attempts"]),
            wall_time=float(d.get("wall_time") or 0.0), error=d["error"],
        ))
    return rows


def parse_config_file(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; keys use flag spelling."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"config line {lineno}: expected 'key = value'")
        out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


def random_outliers(
    dataset: Dataset, detector: DetectorSpec, count: int, rng: np.random.Generator
) -> list[Record]:
    """Random records that are outliers in at least one context.

    Finds them with one in-memory pass over every context, so it is bounded
    by the enumeration cap.
    """
    reference = build_reference(dataset, detector)
    return select_targets(dataset, detector, count, rng, reference=reference)
