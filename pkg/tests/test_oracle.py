import pytest

from pcor.dataset import Context
from pcor.detectors import DetectorSpec
from pcor.errors import EnumerationCapError, FingerprintMismatchError, NoValidContextError, PcorError
from pcor.fixtures import income_dataset
from pcor.oracle import (
    build_reference,
    build_reference_file,
    coe_utilities,
    dump_reference,
    enumerate_coe,
    fingerprint,
    load_reference_file,
    max_utility,
    max_utility_from_coe,
    parse_reference,
)
from pcor.utility import OVERLAP, POPSIZE, UtilitySpec

GRUBBS = DetectorSpec("grubbs")


def test_singleton_coe_lof_k2(income):
    coe = enumerate_coe(income, income.record(1), DetectorSpec("lof", lof_k=2))
    assert [str(c) for c in coe.contexts] == ["110101111"]


def test_singleton_coe_lof_k3(income):
    assert len(enumerate_coe(income, income.record(9), DetectorSpec("lof", lof_k=3))) == 1


def test_record8_counts(income):
    assert len(enumerate_coe(income, income.record(8), GRUBBS)) == 52
    assert len(enumerate_coe(income, income.record(8), DetectorSpec("lof", lof_k=2))) == 35
    assert Context.ones(9) in enumerate_coe(income, income.record(8), GRUBBS)


def test_absent_target_empty(income):
    r = income.record(3)
    assert len(enumerate_coe(income.without([3]), r, GRUBBS)) == 0


def test_cap(income):
    with pytest.raises(EnumerationCapError):
        enumerate_coe(income, income.record(8), GRUBBS, cap=8)
    with pytest.raises(EnumerationCapError):
        build_reference(income, GRUBBS, cap=8)


def test_reference_rows_and_round_trip(income):
    ref = build_reference(income, GRUBBS)
    assert len(ref.rows) == 512
    assert [c.value for c, _, _ in ref.rows] == list(range(512))
    text = dump_reference(ref)
    again = parse_reference(text)
    assert dump_reference(again) == text
    assert sorted(ref.matching_contexts(8)) == sorted(enumerate_coe(income, income.record(8), GRUBBS).contexts)


def test_reference_workers_identical(income):
    assert dump_reference(build_reference(income, GRUBBS, workers=2)) == dump_reference(build_reference(income, GRUBBS))


def test_reference_file_and_fingerprint(income, tmp_path):
    path = tmp_path / "ref.csv"
    build_reference_file(income, GRUBBS, POPSIZE, path)
    ref = load_reference_file(path)
    ref.check(fingerprint(income, GRUBBS, POPSIZE))
    with pytest.raises(FingerprintMismatchError):
        ref.check(fingerprint(income, DetectorSpec("grubbs", grubbs_alpha=0.1), POPSIZE))
    other = income_dataset([100.0 + i for i in range(10)])
    with pytest.raises(FingerprintMismatchError):
        ref.check(fingerprint(other, GRUBBS, POPSIZE))


def test_bad_reference_files(tmp_path):
    with pytest.raises(PcorError):
        parse_reference("not json\n")
    with pytest.raises(PcorError):
        parse_reference('{"format": "other"}\n')
    ref = dump_reference(build_reference(income_dataset(), GRUBBS))
    with pytest.raises(PcorError):
        parse_reference("\n".join(ref.splitlines()[:-3]) + "\n")
    with pytest.raises(PcorError):
        load_reference_file(tmp_path / "missing.csv")


def test_max_utility(income):
    ref = build_reference(income, GRUBBS)
    assert max_utility(ref, 8) == 10.0
    with pytest.raises(NoValidContextError):
        max_utility(ref, 1)
    utils = coe_utilities(income, income.record(8), GRUBBS, UtilitySpec(POPSIZE))
    assert max_utility_from_coe(utils) == 10.0
    with pytest.raises(NoValidContextError):
        max_utility_from_coe({})


def test_max_utility_overlap(income):
    ref = build_reference(income, GRUBBS, OVERLAP)
    start = Context.from_string("011111111")
    assert max_utility(ref, 8, dataset=income, starting=start) == 8.0
    with pytest.raises(PcorError):
        max_utility(ref, 8)
