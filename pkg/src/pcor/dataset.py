"""Schemas, records, contexts and the implicit context graph.

A context is a conjunction over attributes of disjunctions over domain values,
stored as a ``t``-bit vector. Bit 0 is the first value of the first attribute
(leftmost when printed); the vector's integer value reads the printed string
as a big-endian binary number, so ascending integers enumerate contexts in
canonical order.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from pcor.errors import IngestionError, SchemaError

ID_COLUMN = "id"


@dataclass(frozen=True, slots=True, order=True)
class Context:
    """A fixed-length bit vector over every attribute-domain value."""

    value: int
    length: int

    def __post_init__(self):
        if self.length < 0 or not 0 <= self.value < (1 << self.length):
            raise ValueError(f"value {self.value} does not fit in {self.length} bits")

    @classmethod
    def from_string(cls, bits: str) -> Context:
        bits = bits.strip()
        if bits and set(bits) - {"0", "1"}:
            raise ValueError(f"not a 0/1 string: {bits!r}")
        return cls(int(bits, 2) if bits else 0, len(bits))

    @classmethod
    def from_bits(cls, bits: Iterable[int]) -> Context:
        return cls.from_string("".join("1" if b else "0" for b in bits))

    @classmethod
    def zeros(cls, length: int) -> Context:
        return cls(0, length)

    @classmethod
    def ones(cls, length: int) -> Context:
        return cls((1 << length) - 1, length)

    def mask(self, position: int) -> int:
        return 1 << (self.length - 1 - position)

    def is_set(self, position: int) -> bool:
        return bool(self.value & self.mask(position))

    def flip(self, position: int) -> Context:
        return Context(self.value ^ self.mask(position), self.length)

    @property
    def bits(self) -> tuple[int, ...]:
        return tuple(int(c) for c in str(self))

    @property
    def weight(self) -> int:
        return self.value.bit_count()

    def hamming(self, other: Context) -> int:
        return (self.value ^ other.value).bit_count()

    def is_subset_of(self, other: Context) -> bool:
        return self.value & ~other.value == 0

    def __str__(self) -> str:
        return format(self.value, f"0{self.length}b") if self.length else ""


@dataclass(frozen=True)
class Schema:
    """Ordered categorical attributes plus the name of the numeric metric."""

    attributes: tuple[tuple[str, tuple[str, ...]], ...]
    metric_name: str

    def __post_init__(self):
        names = [name for name, _ in self.attributes]
        if not names:
            raise SchemaError("schema declares no categorical attributes")
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate attribute names in {names}")
        if self.metric_name in names:
            raise SchemaError(f"metric {self.metric_name!r} is also a categorical attribute")
        for name, domain in self.attributes:
            if not domain:
                raise SchemaError(f"attribute {name!r} has an empty domain")
            if len(set(domain)) != len(domain):
                raise SchemaError(f"attribute {name!r} has duplicate domain values")

    @classmethod
    def build(cls, attributes: Sequence[tuple[str, Sequence[str]]], metric_name: str) -> Schema:
        return cls(tuple((name, tuple(domain)) for name, domain in attributes), metric_name)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.attributes)

    @property
    def m(self) -> int:
        return len(self.attributes)

    @property
    def t(self) -> int:
        return sum(len(domain) for _, domain in self.attributes)

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        out, pos = [], 0
        for _, domain in self.attributes:
            out.append(pos)
            pos += len(domain)
        return tuple(out)

    @cached_property
    def _positions(self) -> dict[str, dict[str, int]]:
        return {
            name: {value: off + j for j, value in enumerate(domain)}
            for (name, domain), off in zip(self.attributes, self.offsets)
        }

    def position(self, attribute: str, value: str) -> int:
        """Bit position of ``attribute = value``."""
        try:
            values = self._positions[attribute]
        except KeyError:
            raise SchemaError(f"unknown attribute {attribute!r}") from None
        try:
            return values[value]
        except KeyError:
            raise SchemaError(f"value {value!r} not in the domain of {attribute!r}") from None

    def predicate(self, position: int) -> tuple[str, str]:
        for (name, domain), off in zip(self.attributes, self.offsets):
            if off <= position < off + len(domain):
                return name, domain[position - off]
        raise IndexError(position)

    @cached_property
    def group_masks(self) -> tuple[int, ...]:
        """Integer mask of each attribute's bit group."""
        t = self.t
        return tuple(
            sum(1 << (t - 1 - (off + j)) for j in range(len(domain)))
            for (_, domain), off in zip(self.attributes, self.offsets)
        )

    def to_text(self) -> str:
        lines = [f"{name}: {', '.join(domain)}" for name, domain in self.attributes]
        lines.append(f"metric: {self.metric_name}")
        return "\n".join(lines) + "\n"

    @cached_property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Record:
    id: int
    values: tuple[str, ...]
    metric: float


@dataclass(frozen=True)
class Population:
    """Records selected by a context; ids and metric values in dataset order."""

    context: Context
    member_ids: np.ndarray
    metric_values: np.ndarray

    def __len__(self) -> int:
        return len(self.member_ids)

    def __contains__(self, record_id) -> bool:
        return bool(np.any(self.member_ids == record_id))


@dataclass(frozen=True)
class Dataset:
    schema: Schema
    records: tuple[Record, ...] = field(default=())

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise IngestionError("record ids are not unique")
        m = self.schema.m
        for r in self.records:
            if len(r.values) != m:
                raise IngestionError(f"record {r.id}: expected {m} values, got {len(r.values)}")
            for (name, _), value in zip(self.schema.attributes, r.values):
                self.schema.position(name, value)

    def __len__(self) -> int:
        return len(self.records)

    @cached_property
    def _row_of(self) -> dict[int, int]:
        return {r.id: i for i, r in enumerate(self.records)}

    def record(self, record_id: int) -> Record:
        try:
            return self.records[self._row_of[record_id]]
        except KeyError:
            raise KeyError(f"no record with id {record_id}") from None

    def has_record(self, record_id: int) -> bool:
        return record_id in self._row_of

    @cached_property
    def ids(self) -> np.ndarray:
        return np.array([r.id for r in self.records], dtype=np.int64)

    @cached_property
    def metric(self) -> np.ndarray:
        return np.array([r.metric for r in self.records], dtype=np.float64)

    @cached_property
    def record_masks(self) -> np.ndarray:
        """Per record, the context mask of its own attribute values (weight m)."""
        return np.array([record_mask(r, self.schema) for r in self.records], dtype=np.int64)

    def without(self, record_ids: Iterable[int]) -> Dataset:
        drop = set(record_ids)
        return Dataset(self.schema, tuple(r for r in self.records if r.id not in drop))

    @cached_property
    def fingerprint(self) -> str:
        h = hashlib.sha256(self.schema.to_text().encode())
        for r in self.records:
            h.update(f"{r.id}|{'|'.join(r.values)}|{r.metric!r}\n".encode())
        return h.hexdigest()[:16]

    def to_csv(self, out: IO[str]) -> None:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow([ID_COLUMN, *self.schema.names, self.schema.metric_name])
        for r in self.records:
            writer.writerow([r.id, *r.values, repr(r.metric)])


def record_mask(record: Record, schema: Schema) -> int:
    t = schema.t
    return sum(
        1 << (t - 1 - schema.position(name, value))
        for (name, _), value in zip(schema.attributes, record.values)
    )


def encode_context(predicates: Iterable[tuple[str, str]], schema: Schema) -> Context:
    """Bit vector with exactly the given ``(attribute, value)`` predicates set."""
    t = schema.t
    value = 0
    for attribute, v in predicates:
        value |= 1 << (t - 1 - schema.position(attribute, v))
    return Context(value, t)


def decode_context(context: Context, schema: Schema) -> list[tuple[str, str]]:
    return [schema.predicate(i) for i in range(context.length) if context.is_set(i)]


def contains(context: Context, record: Record, schema: Schema) -> bool:
    """True iff every attribute of ``record`` has its value's bit set."""
    if context.length != schema.t:
        raise SchemaError(f"context has {context.length} bits, schema needs {schema.t}")
    return all(
        context.is_set(schema.position(name, value))
        for (name, _), value in zip(schema.attributes, record.values)
    )


def membership_mask(dataset: Dataset, context: Context) -> np.ndarray:
    """Boolean row mask of the records selected by ``context``."""
    if context.length != dataset.schema.t:
        raise SchemaError(f"context has {context.length} bits, schema needs {dataset.schema.t}")
    if not len(dataset):
        return np.zeros(0, dtype=bool)
    hits = np.bitwise_count(dataset.record_masks & np.int64(context.value))
    return hits == dataset.schema.m


def filter_population(dataset: Dataset, context: Context) -> Population:
    mask = membership_mask(dataset, context)
    return Population(context, dataset.ids[mask], dataset.metric[mask])


def neighbors(context: Context) -> list[Context]:
    """The ``t`` contexts at Hamming distance 1, in bit order."""
    return [context.flip(i) for i in range(context.length)]


def parse_schema(stream: IO[str] | str) -> Schema:
    """Parse ``attribute: v1, v2, ...`` lines ending with ``metric: <name>``.

    Blank lines and ``#`` comments are ignored.
    """
    text = stream if isinstance(stream, str) else stream.read()
    attributes: list[tuple[str, list[str]]] = []
    metric = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if metric is not None:
            raise SchemaError(f"line {lineno}: content after the metric line")
        name, sep, rest = line.partition(":")
        name = name.strip()
        if not sep or not name:
            raise SchemaError(f"line {lineno}: expected 'name: values', got {raw!r}")
        if name == "metric":
            metric = rest.strip()
            if not metric:
                raise SchemaError(f"line {lineno}: empty metric name")
            continue
        domain = [v.strip() for v in rest.split(",")]
        if any(not v for v in domain):
            raise SchemaError(f"line {lineno}: empty domain value for {name!r}")
        attributes.append((name, domain))
    if metric is None:
        raise SchemaError("schema has no 'metric: <name>' line")
    return Schema.build(attributes, metric)


def load_dataset(data: IO[str], schema: IO[str] | Schema) -> Dataset:
    """Read an RFC-4180 CSV against a schema sidecar.

    Columns are matched by header name; an optional ``id`` column supplies
    record ids, otherwise rows are numbered from 1.
    """
    if not isinstance(schema, Schema):
        schema = parse_schema(schema)
    reader = csv.reader(data)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise IngestionError("data file is empty (no header row)") from None
    expected = set(schema.names) | {schema.metric_name}
    got = set(header) - {ID_COLUMN}
    if got != expected or len(header) != len(set(header)):
        raise IngestionError(
            f"header {header} does not match schema columns {sorted(expected)}"
        )
    col = {name: i for i, name in enumerate(header)}
    has_id = ID_COLUMN in col
    records = []
    for rowno, row in enumerate(reader, 1):
        if not row:
            continue
        if len(row) != len(header):
            raise IngestionError(f"row {rowno}: expected {len(header)} fields, got {len(row)}")
        values = []
        for name, domain in schema.attributes:
            value = row[col[name]].strip()
            if value not in domain:
                raise IngestionError(
                    f"row {rowno}, column {name!r}: value {value!r} is outside the declared domain"
                )
            values.append(value)
        raw_metric = row[col[schema.metric_name]].strip()
        try:
            metric = float(raw_metric)
        except ValueError:
            raise IngestionError(
                f"row {rowno}, column {schema.metric_name!r}: non-numeric metric {raw_metric!r}"
            ) from None
        if not math.isfinite(metric):
            raise IngestionError(
                f"row {rowno}, column {schema.metric_name!r}: non-finite metric {raw_metric!r}"
            )
        if has_id:
            try:
                rid = int(row[col[ID_COLUMN]])
            except ValueError:
                raise IngestionError(f"row {rowno}, column 'id': not an integer") from None
        else:
            rid = rowno
        records.append(Record(rid, tuple(values), metric))
    return Dataset(schema, tuple(records))


def load_dataset_files(data_path: str | Path, schema_path: str | Path) -> Dataset:
    try:
        with open(schema_path, newline="") as s, open(data_path, newline="") as d:
            return load_dataset(d, s)
    except OSError as exc:
        raise IngestionError(f"cannot read {exc.filename}: {exc.strerror}") from exc


def dataset_to_csv_text(dataset: Dataset) -> str:
    buf = io.StringIO()
    dataset.to_csv(buf)
    return buf.getvalue()
