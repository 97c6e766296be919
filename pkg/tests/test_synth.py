import numpy as np
import pytest

from pqrlka.dataio import filter_dataset, load_interactions, load_qmatrix, save_interactions, save_qmatrix
from pqrlka.synth import SynthConfig, generate_synthetic, kg_recovery_metrics, planted_dag

SMALL = SynthConfig(n_skills=5, n_questions=20, n_learners=40, seq_len_range=(15, 30))


def test_noiseless_responses_follow_mastery():
    cfg = SynthConfig(n_skills=5, n_questions=20, n_learners=30, slip=0.0, guess=0.0)
    ds, q, _, traces = generate_synthetic(cfg, return_mastery=True)
    for learner, seq in ds.sequences.items():
        for it, mastered in zip(seq, traces[learner]):
            assert it.correct == bool(mastered[q.entries[it.question_id] == 1].all())


@pytest.mark.parametrize("kind", ["chain", "tree", "random-dag"])
def test_mastery_respects_dag_and_is_monotone(kind):
    cfg = SynthConfig(n_skills=6, n_questions=30, n_learners=40, dag_kind=kind, seed=3)
    ds, _, kg, traces = generate_synthetic(cfg, return_mastery=True)
    parents = [np.flatnonzero(kg[:, j] & (np.arange(6) != j)) for j in range(6)]
    for trace in traces.values():
        assert (np.diff(trace.astype(int), axis=0) >= 0).all()
        for j in range(6):
            assert (~trace[:, j] | trace[:, parents[j]].all(axis=1)).all()


def test_planted_dags_are_acyclic_upper_triangular():
    rng = np.random.default_rng(0)
    for kind in ("chain", "tree", "random-dag"):
        kg = planted_dag(7, kind, rng)
        assert (np.diag(kg) == 1).all()
        assert not np.tril(kg, -1).any()
        assert (kg[:, 1:].sum(axis=0) >= 2).all()  # every later skill has a parent


def test_fixed_seed_gives_identical_files(tmp_path):
    for name in ("a", "b"):
        ds, q, _ = generate_synthetic(SMALL)
        save_interactions(ds, tmp_path / f"{name}.csv")
        save_qmatrix(q, tmp_path / f"{name}_q.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a_q.csv").read_bytes() == (tmp_path / "b_q.csv").read_bytes()


def test_file_roundtrip_and_filter_keeps_everyone(tmp_path):
    ds, q, _ = generate_synthetic(SMALL)
    save_interactions(ds, tmp_path / "log.csv")
    save_qmatrix(q, tmp_path / "q.csv")
    q2 = load_qmatrix(tmp_path / "q.csv")
    ds2 = load_interactions(tmp_path / "log.csv", qmatrix=q2)
    assert q2 == q
    assert ds2.sequences == ds.sequences
    assert filter_dataset(ds2, q2).n_learners == SMALL.n_learners


def test_timestamps_strictly_increase_and_elapsed_positive():
    ds, _, _ = generate_synthetic(SMALL)
    for seq in ds.sequences.values():
        ts = np.array([it.timestamp for it in seq])
        assert (np.diff(ts) > 0).all()
        assert all(it.elapsed_time > 0 for it in seq)


@pytest.mark.parametrize(
    "bad",
    [dict(slip=0.5), dict(guess=-0.1), dict(seq_len_range=(5, 20)), dict(dag_kind="ring"), dict(n_questions=3)],
)
def test_invalid_configs(bad):
    with pytest.raises(ValueError):
        generate_synthetic(SynthConfig(**{**SMALL.__dict__, **bad}))


def test_recovery_metrics():
    truth = np.eye(3, dtype=np.uint8)
    truth[0, 1] = truth[1, 2] = 1
    assert kg_recovery_metrics(truth, truth) == (1.0, 1.0, 1.0)
    assert kg_recovery_metrics(np.eye(3), truth) == (0.0, 0.0, 0.0)
    half = np.eye(3, dtype=np.uint8)
    half[0, 1] = half[2, 0] = 1
    p, r, f = kg_recovery_metrics(half, truth)
    assert (p, r) == (0.5, 0.5) and f == pytest.approx(0.5)
    with pytest.raises(ValueError):
        kg_recovery_metrics(np.eye(2), truth)
