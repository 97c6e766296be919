import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pqrlka.dataio import (
    DataFormatError,
    Interaction,
    LogColumns,
    filter_dataset,
    load_interactions,
    load_qmatrix,
    save_interactions,
    save_qmatrix,
    split_sequences,
)

from conftest import make_dataset, make_qmatrix

HEADER = "learner_id,question_id,correct,timestamp,elapsed_time\n"


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_empty_file_gives_zero_learners(tmp_path):
    p = write(tmp_path, "log.csv", "")
    with pytest.warns(UserWarning):
        ds = load_interactions(p)
    assert ds.n_learners == 0


def test_equal_timestamps_keep_file_order(tmp_path):
    p = write(tmp_path, "log.csv", HEADER + "u1,qb,1,100,5\nu1,qa,0,100,6\nu1,qc,1,50,1\n")
    ds = load_interactions(p)
    seq = ds.sequences["u1"]
    assert [ds.question_labels[it.question_id] for it in seq] == ["qc", "qb", "qa"]


def test_millisecond_timestamps_are_floored(tmp_path):
    p = write(tmp_path, "log.csv", HEADER + "u1,q1,1,1999,5\n")
    ds = load_interactions(p, LogColumns(timestamp_unit="ms"))
    assert ds.sequences["u1"][0].timestamp == 1


def test_missing_column_is_reported(tmp_path):
    p = write(tmp_path, "log.csv", "learner_id,question_id,correct,timestamp\nu1,q1,1,5\n")
    with pytest.raises(DataFormatError, match="elapsed_time"):
        load_interactions(p)


def test_bad_timestamp_names_the_line(tmp_path):
    p = write(tmp_path, "log.csv", HEADER + "u1,q1,1,10,5\nu1,q1,1,yesterday,5\n")
    with pytest.raises(DataFormatError, match="line 3"):
        load_interactions(p)


def test_empty_elapsed_is_zero_and_flagged(tmp_path):
    p = write(tmp_path, "log.csv", HEADER + "u1,q1,1,10,\nu1,q1,1,11,4\n")
    ds = load_interactions(p)
    assert ds.elapsed_missing
    assert [it.elapsed_time for it in ds.sequences["u1"]] == [0.0, 4.0]


def test_unknown_questions_dropped_against_qmatrix(tmp_path):
    q = make_qmatrix([[1]])
    p = write(tmp_path, "log.csv", HEADER + "u1,q1,1,10,1\nu1,zz,1,11,1\n")
    with pytest.warns(UserWarning, match="dropped 1"):
        ds = load_interactions(p, qmatrix=q)
    assert len(ds.sequences["u1"]) == 1


def test_negative_elapsed_rejected():
    with pytest.raises(ValueError):
        Interaction("u", 0, True, 0, -1.0)


def test_interaction_roundtrip(tmp_path):
    ds = make_dataset({"a": [(0, 1), (1, 0)], "b": [(1, 1)]}, 2)
    p = tmp_path / "log.csv"
    save_interactions(ds, p)
    back = load_interactions(p, qmatrix=make_qmatrix([[1], [1]]))
    assert back.sequences == ds.sequences


def test_filter_threshold_is_inclusive():
    q = make_qmatrix([[1]])
    ds = make_dataset({"nine": [(0, 1)] * 9, "ten": [(0, 1)] * 10}, 1, 1)
    assert filter_dataset(ds, q).learners == ["ten"]


def test_filter_drops_questions_before_counting():
    # learner "a": 10 steps, one on a skill-less question -> 9 left -> removed
    q = make_qmatrix([[1], [0]])
    ds = make_dataset({"a": [(0, 1)] * 9 + [(1, 1)], "b": [(0, 1)] * 10 + [(1, 0)]}, 2, 1)
    out = filter_dataset(ds, q)
    assert out.learners == ["b"]
    assert all(it.question_id == 0 for it in out.sequences["b"])


def test_split_sizes_and_determinism():
    ds = make_dataset({f"u{i}": [(0, 1)] for i in range(10)}, 1)
    tr, te = split_sequences(ds, 0.2, seed=3)
    assert (tr.n_learners, te.n_learners) == (8, 2)
    tr2, te2 = split_sequences(ds, 0.2, seed=3)
    assert tr.learners == tr2.learners and te.learners == te2.learners


def test_split_rounds_half_up():
    ds = make_dataset({f"u{i}": [(0, 1)] for i in range(5)}, 1)
    parts = {tuple(sorted(split_sequences(ds, 0.5, seed=s)[1].learners)) for s in (1, 2)}
    assert all(len(p) == 3 for p in parts)
    assert len(parts) == 2


def test_split_needs_two_learners():
    with pytest.raises(ValueError):
        split_sequences(make_dataset({"u": [(0, 1)]}, 1), 0.2)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.floats(0.05, 0.95), st.integers(0, 10_000))
def test_split_partitions_learners(n, frac, seed):
    ds = make_dataset({f"u{i}": [(0, 1)] for i in range(n)}, 1)
    tr, te = split_sequences(ds, frac, seed)
    assert set(tr.learners).isdisjoint(te.learners)
    assert set(tr.learners) | set(te.learners) == set(ds.learners)
    assert te.n_learners == min(max(int(np.floor(frac * n + 0.5)), 1), n - 1)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.tuples(st.integers(0, 3), st.booleans()), max_size=15), min_size=1, max_size=6))
def test_filter_idempotent_and_clean(seqs):
    q = make_qmatrix([[1, 0], [0, 1], [0, 0], [1, 1]])
    ds = make_dataset({f"u{i}": s for i, s in enumerate(seqs)}, 4, 2)
    once = filter_dataset(ds, q, 3)
    assert filter_dataset(once, q, 3).sequences == once.sequences
    assert all(q.entries[it.question_id].any() for s in once.sequences.values() for it in s)


def test_qmatrix_pair_list(tmp_path):
    p = write(tmp_path, "q.csv", "question_id,skill_id\nq1,s1\nq2,s1\nq2,s2\n")
    q = load_qmatrix(p)
    np.testing.assert_array_equal(q.entries, [[1, 0], [1, 1]])
    dup = write(tmp_path, "d.csv", "question_id,skill_id\nq1,s1\nq2,s1\nq2,s2\nq2,s2\n")
    np.testing.assert_array_equal(load_qmatrix(dup).entries, q.entries)


def test_qmatrix_unknown_skill_appends_column(tmp_path):
    p = write(tmp_path, "q.csv", "question_id,skill_id\nq1,s1\nq2,s9\n")
    with pytest.warns(UserWarning, match="s9"):
        q = load_qmatrix(p, skill_ids=["s1", "s2"])
    assert q.skill_ids == ("s1", "s2", "s9")
    assert q.entries.shape == (2, 3)


def test_qmatrix_dense_rejects_non_binary(tmp_path):
    p = write(tmp_path, "q.csv", "question_id,s1,s2\nq1,1,2\n")
    with pytest.raises(DataFormatError, match="line 2"):
        load_qmatrix(p)


def test_qmatrix_drops_skillless_questions(tmp_path):
    p = write(tmp_path, "q.csv", "question_id,s1,s2\nq1,1,0\nq2,0,0\n")
    with pytest.warns(UserWarning):
        q = load_qmatrix(p)
    assert q.question_ids == ("q1",)


@pytest.mark.parametrize("dense", [True, False])
def test_qmatrix_roundtrip(tmp_path, dense):
    q = make_qmatrix([[0, 1, 0], [1, 1, 0]])
    save_qmatrix(q, tmp_path / "q.csv", dense=dense)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        back = load_qmatrix(tmp_path / "q.csv", skill_ids=q.skill_ids[:2] if not dense else None)
    if dense:
        assert back == q
    else:
        np.testing.assert_array_equal(back.entries, q.entries[:, :2])
