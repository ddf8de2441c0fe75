import numpy as np
import pytest

from pcor.dataset import load_dataset_files
from pcor.detectors import DetectorSpec
from pcor.evaluator import ContextEvaluator
from pcor.fixtures import PRESETS, FixtureParams, generate_fixture, preset_fixture, income_dataset, write_fixture
from pcor.utility import UtilitySpec


def test_income_shape(income):
    assert len(income) == 10 and income.schema.t == 9 and income.schema.m == 3
    assert income.record(8).metric == 500.0
    assert income_dataset([1.0] * 10).metric.tolist() == [1.0] * 10


def test_generate_is_seeded():
    a = generate_fixture(n_records=200, n_hidden=2, seed=3)
    b = generate_fixture(n_records=200, n_hidden=2, seed=3)
    c = generate_fixture(n_records=200, n_hidden=2, seed=4)
    assert a.dataset.fingerprint == b.dataset.fingerprint != c.dataset.fingerprint


def test_unused_values_widen_schema_only():
    a = generate_fixture(n_records=300, n_hidden=2)
    b = generate_fixture(n_records=300, n_hidden=2, unused_values=(1, 2, 0))
    assert b.dataset.schema.t == a.dataset.schema.t + 3
    assert np.array_equal(a.dataset.metric, b.dataset.metric)


def test_param_validation():
    with pytest.raises(ValueError):
        FixtureParams(unused_values=(0,))
    with pytest.raises(ValueError):
        preset_fixture("huge")
    with pytest.raises(TypeError):
        generate_fixture(FixtureParams(), seed=1)


def test_presets():
    assert PRESETS["small"].t == 12 and PRESETS["medium"].t == 14


def test_hidden_outliers_are_hidden(small):
    data = small.dataset
    grubbs = DetectorSpec("grubbs")
    full = (1 << data.schema.t) - 1
    for rid in small.hidden_ids:
        ev = ContextEvaluator(data, data.record(rid), grubbs, UtilitySpec())
        assert not ev.matches(full)
    lof = DetectorSpec("lof", lof_k=10)
    assert all(ContextEvaluator(data, data.record(i), lof, UtilitySpec()).count_matches(at_least=1)
               for i in small.hidden_ids)


def test_write_round_trip(small, tmp_path):
    write_fixture(small, tmp_path / "d.csv", tmp_path / "s.txt")
    back = load_dataset_files(tmp_path / "d.csv", tmp_path / "s.txt")
    assert back.fingerprint == small.dataset.fingerprint
    assert back.schema.t == 12
