"""Small datasets for tests and desk-scale experiments.

``income_dataset`` is a ten-record salary table small enough to check by hand.
``generate_fixture`` builds a synthetic salary table over three categorical
attributes with planted hidden outliers: records that are ordinary against
the whole table but extreme inside their own subgroup.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from pcor.dataset import Dataset, Record, Schema

INCOME_SCHEMA = Schema.build(
    [
        ("Jobtitle", ["CEO", "Medical Doctor", "Lawyer"]),
        ("City", ["Montreal", "Ottawa", "Toronto"]),
        ("District", ["Business", "Historic", "Diplomatic"]),
    ],
    "Salary",
)

_INCOME_ROWS = [
    ("Medical Doctor", "Montreal", "Business"),
    ("Lawyer", "Toronto", "Business"),
    ("CEO", "Ottawa", "Diplomatic"),
    ("Lawyer", "Toronto", "Business"),
    ("Lawyer", "Ottawa", "Diplomatic"),
    ("Medical Doctor", "Toronto", "Historic"),
    ("Lawyer", "Ottawa", "Business"),
    ("Lawyer", "Ottawa", "Diplomatic"),
    ("CEO", "Montreal", "Historic"),
    ("Medical Doctor", "Toronto", "Diplomatic"),
]


def income_dataset(salaries: list[float] | None = None) -> Dataset:
    """Records 1..10; salary i is 100+i except record 8 earns 500."""
    if salaries is None:
        salaries = [100.0 + i for i in range(1, 11)]
        salaries[7] = 500.0
    records = tuple(
        Record(i, values, float(s)) for i, (values, s) in enumerate(zip(_INCOME_ROWS, salaries), 1)
    )
    return Dataset(INCOME_SCHEMA, records)


_ATTRIBUTE_NAMES = ("sector", "region", "grade", "tenure", "unit")


@dataclass(frozen=True)
class FixtureParams:
    domain_sizes: tuple[int, ...] = (4, 4, 4)
    unused_values: tuple[int, ...] = (0, 0, 0)
    n_records: int = 4000
    n_hidden: int = 12
    hidden_z: float = 6.0
    cell_sd: float = 4.0
    effect_scale: float = 25.0
    base_salary: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if len(self.unused_values) != len(self.domain_sizes):
            raise ValueError("unused_values needs one entry per attribute")
        if len(self.domain_sizes) > len(_ATTRIBUTE_NAMES):
            raise ValueError(f"at most {len(_ATTRIBUTE_NAMES)} attributes")

    @property
    def t(self) -> int:
        return sum(self.domain_sizes) + sum(self.unused_values)


@dataclass(frozen=True)
class Fixture:
    dataset: Dataset
    params: FixtureParams
    hidden_ids: tuple[int, ...] = field(default=())

    def metadata(self) -> dict:
        return {"generator": "pcor.fixtures.generate_fixture", "params": asdict(self.params),
                "hidden_ids": list(self.hidden_ids)}


def _schema(params: FixtureParams) -> Schema:
    attrs = []
    for name, size, extra in zip(_ATTRIBUTE_NAMES, params.domain_sizes, params.unused_values):
        values = [f"{name[:3]}{j}" for j in range(size)]
        values += [f"{name[:3]}_unused{j}" for j in range(extra)]
        attrs.append((name, values))
    return Schema.build(attrs, "salary")


def generate_fixture(params: FixtureParams | None = None, **overrides) -> Fixture:
    """Synthetic salaries: per-value additive effects plus Gaussian cell noise.

    Each hidden outlier sits ``hidden_z`` cell standard deviations above its
    cell mean, a value that other cells cover densely. Unused domain values
    appear in the schema but in no record.
    """
    if params is None:
        params = FixtureParams(**overrides)
    elif overrides:
        raise TypeError("pass either params or keyword overrides")
    rng = np.random.default_rng(params.seed)
    schema = _schema(params)
    sizes = params.domain_sizes
    effects = [rng.normal(0.0, params.effect_scale, size=s) for s in sizes]
    shape = tuple(sizes)
    cell_weights = rng.dirichlet(np.full(int(np.prod(shape)), 2.0))
    n_normal = params.n_records - params.n_hidden
    cells = rng.choice(len(cell_weights), size=n_normal, p=cell_weights)
    cell_coords = np.array(np.unravel_index(cells, shape)).T

    def cell_mean(coord) -> float:
        return params.base_salary + sum(e[c] for e, c in zip(effects, coord))

    rows = []
    for coord in cell_coords:
        salary = cell_mean(coord) + rng.normal(0.0, params.cell_sd)
        rows.append((tuple(int(c) for c in coord), salary))

    # Hidden outliers go to low-mean cells so their value is typical globally.
    means = np.array([cell_mean(np.unravel_index(c, shape)) for c in range(len(cell_weights))])
    low_cells = np.argsort(means)[: max(1, len(means) // 3)]
    hidden_cells = rng.choice(low_cells, size=params.n_hidden, replace=True)
    hidden_rows = []
    for c in hidden_cells:
        coord = tuple(int(x) for x in np.unravel_index(c, shape))
        salary = cell_mean(coord) + params.hidden_z * params.cell_sd * rng.uniform(1.0, 1.3)
        hidden_rows.append((coord, salary))

    all_rows = rows + hidden_rows
    perm = rng.permutation(len(all_rows))
    records = []
    hidden_ids = []
    for new_id, old in enumerate(perm.tolist(), 1):
        coord, salary = all_rows[old]
        values = tuple(schema.attributes[i][1][c] for i, c in enumerate(coord))
        records.append(Record(new_id, values, round(float(salary), 3)))
        if old >= len(rows):
            hidden_ids.append(new_id)
    return Fixture(Dataset(schema, tuple(records)), params, tuple(sorted(hidden_ids)))


PRESETS = {
    # t = 12: small enough for exhaustive checks of every sampler.
    "small": FixtureParams(),
    # t = 14: large populations so per-step budgets near 0.002 still steer.
    "medium": FixtureParams(domain_sizes=(5, 5, 4), n_records=40000, n_hidden=30),
}


def preset_fixture(name: str, **overrides) -> Fixture:
    if name not in PRESETS:
        raise ValueError(f"unknown fixture {name!r}; expected one of {sorted(PRESETS)}")
    return generate_fixture(replace(PRESETS[name], **overrides))


def write_fixture(fixture: Fixture, data_path: str | Path, schema_path: str | Path) -> None:
    import json

    meta = json.dumps(fixture.metadata(), sort_keys=True)
    Path(schema_path).write_text(f"# {meta}\n" + fixture.dataset.schema.to_text())
    with open(data_path, "w", newline="") as out:
        fixture.dataset.to_csv(out)
