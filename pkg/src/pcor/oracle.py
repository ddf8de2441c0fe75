"""Brute-force ground truth over all 2^t contexts.

Deliberately built on the generic ``filter_population``/``verify`` path rather
than the samplers' evaluator, so the two can check each other.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from pcor import __version__
from pcor.dataset import Context, Dataset, Record, contains, filter_population, membership_mask
from pcor.detectors import DetectorSpec, outlier_mask, verify
from pcor.errors import (
    EnumerationCapError,
    FingerprintMismatchError,
    NoValidContextError,
    PcorError,
)
from pcor.utility import NEG_INFINITY, OVERLAP, POPSIZE, UtilitySpec, utility_value

DEFAULT_CAP = 24
FORMAT = "pcor-reference"


@dataclass(frozen=True)
class CoeSet:
    """Every matching context of one target."""

    target_id: int
    contexts: frozenset[Context]

    def __len__(self) -> int:
        return len(self.contexts)

    def __contains__(self, context: Context) -> bool:
        return context in self.contexts


def _check_cap(t: int, cap: int) -> None:
    if t > cap:
        raise EnumerationCapError(
            f"t = {t} means 2^{t} contexts; raise the enumeration cap (currently {cap}) "
            "explicitly if you really want exhaustive enumeration"
        )


def enumerate_coe(
    dataset: Dataset, target: Record, detector: DetectorSpec, *, cap: int = DEFAULT_CAP
) -> CoeSet:
    t = dataset.schema.t
    _check_cap(t, cap)
    if not dataset.has_record(target.id):
        return CoeSet(target.id, frozenset())
    found = []
    for v in range(1 << t):
        ctx = Context(v, t)
        if not contains(ctx, target, dataset.schema):
            continue
        if verify(filter_population(dataset, ctx), target, detector).is_outlier:
            found.append(ctx)
    return CoeSet(target.id, frozenset(found))


def coe_utilities(
    dataset: Dataset,
    target: Record,
    detector: DetectorSpec,
    utility: UtilitySpec,
    coe: CoeSet | None = None,
) -> dict[Context, float]:
    """Utility of every matching context, in canonical order."""
    if coe is None:
        coe = enumerate_coe(dataset, target, detector)
    out = {}
    for ctx in sorted(coe.contexts):
        u = utility_value(dataset, ctx, target, detector, utility)
        if u is NEG_INFINITY:
            raise PcorError(f"context {ctx} is in the COE but scores -inf")
        out[ctx] = u
    return out


@dataclass
class ReferenceFile:
    """Population size and outlier ids of every context under one detector."""

    fingerprint: dict
    t: int
    rows: list[tuple[Context, int, tuple[int, ...]]] = field(repr=False)

    @cached_property
    def index(self) -> dict[int, list[tuple[Context, int]]]:
        """Record id -> its matching contexts with population sizes."""
        out: dict[int, list[tuple[Context, int]]] = {}
        for ctx, size, ids in self.rows:
            for rid in ids:
                out.setdefault(rid, []).append((ctx, size))
        return out

    def matching_contexts(self, target_id: int) -> list[Context]:
        return [ctx for ctx, _ in self.index.get(target_id, [])]

    def check(self, expected: dict) -> None:
        if self.fingerprint != expected:
            diff = {k for k in set(expected) | set(self.fingerprint)
                    if expected.get(k) != self.fingerprint.get(k)}
            raise FingerprintMismatchError(
                f"reference file was built for a different configuration (differs in {sorted(diff)})"
            )


def fingerprint(dataset: Dataset, detector: DetectorSpec, utility_kind: str) -> dict:
    return {
        "schema": dataset.schema.fingerprint,
        "data": dataset.fingerprint,
        "detector": detector.to_dict(),
        "utility": utility_kind,
    }


def _rows_for_range(args) -> list[tuple[int, int, tuple[int, ...]]]:
    dataset, detector, lo, hi = args
    t = dataset.schema.t
    rows = []
    for v in range(lo, hi):
        mask = membership_mask(dataset, Context(v, t))
        size = int(mask.sum())
        ids: tuple[int, ...] = ()
        if size:
            flags = outlier_mask(dataset.metric[mask], detector)
            ids = tuple(dataset.ids[mask][flags].tolist())
        rows.append((v, size, ids))
    return rows


def build_reference(
    dataset: Dataset,
    detector: DetectorSpec,
    utility_kind: str = POPSIZE,
    *,
    cap: int = DEFAULT_CAP,
    workers: int = 1,
) -> ReferenceFile:
    """Enumerate every context; ranges are merged back in canonical order."""
    t = dataset.schema.t
    _check_cap(t, cap)
    total = 1 << t
    chunk = max(1, total // max(1, 4 * workers))
    jobs = [(dataset, detector, lo, min(lo + chunk, total)) for lo in range(0, total, chunk)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_rows_for_range, jobs))
    else:
        parts = [_rows_for_range(job) for job in jobs]
    rows = [(Context(v, t), size, ids) for part in parts for v, size, ids in part]
    return ReferenceFile(fingerprint(dataset, detector, utility_kind), t, rows)


def dump_reference(reference: ReferenceFile) -> str:
    buf = io.StringIO()
    header = {
        "format": FORMAT,
        "version": __version__,
        "t": reference.t,
        "rows": len(reference.rows),
        "fingerprint": reference.fingerprint,
    }
    buf.write(json.dumps(header, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["context", "population_size", "outliers"])
    for ctx, size, ids in reference.rows:
        writer.writerow([str(ctx), size, " ".join(map(str, ids))])
    return buf.getvalue()


def parse_reference(text: str) -> ReferenceFile:
    first, _, body = text.partition("\n")
    try:
        header = json.loads(first)
    except json.JSONDecodeError as exc:
        raise PcorError(f"reference file header is not JSON: {exc}") from None
    if header.get("format") != FORMAT:
        raise PcorError("not a pcor reference file")
    reader = csv.reader(io.StringIO(body))
    next(reader)
    rows = [
        (Context.from_string(bits), int(size), tuple(int(x) for x in ids.split()))
        for bits, size, ids in reader
    ]
    if len(rows) != header["rows"] or len(rows) != 1 << header["t"]:
        raise PcorError(f"reference file is truncated: {len(rows)} rows")
    return ReferenceFile(header["fingerprint"], header["t"], rows)


def build_reference_file(
    dataset: Dataset,
    detector: DetectorSpec,
    utility_kind: str,
    path: str | Path,
    *,
    cap: int = DEFAULT_CAP,
    workers: int = 1,
) -> ReferenceFile:
    reference = build_reference(dataset, detector, utility_kind, cap=cap, workers=workers)
    try:
        Path(path).write_text(dump_reference(reference))
    except OSError as exc:
        raise PcorError(f"cannot write reference file {path}: {exc}") from exc
    return reference


def load_reference_file(path: str | Path) -> ReferenceFile:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise PcorError(f"cannot read reference file {path}: {exc}") from exc
    return parse_reference(text)


def max_utility(
    reference: ReferenceFile,
    target_id: int,
    *,
    dataset: Dataset | None = None,
    starting: Context | None = None,
) -> float:
    """Utility of the target's best matching context.

    Overlap references need the dataset and the target's starting context.
    """
    entries = reference.index.get(target_id)
    if not entries:
        raise NoValidContextError(f"target {target_id} has no matching context")
    if reference.fingerprint["utility"] != OVERLAP:
        return float(max(size for _, size in entries))
    if dataset is None or starting is None:
        raise PcorError("overlap max utility needs the dataset and the starting context")
    start = membership_mask(dataset, starting)
    return float(max(np.count_nonzero(membership_mask(dataset, c) & start) for c, _ in entries))


def max_utility_from_coe(utilities: dict[Context, float]) -> float:
    if not utilities:
        raise NoValidContextError("empty COE")
    return max(utilities.values())
