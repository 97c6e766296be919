import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pqrlka.graphembed import (
    SkipGramConfig,
    _sgd_pass,
    embedding_of,
    generate_metapaths,
    load_embeddings,
    load_walks,
    save_embeddings,
    save_walks,
    skipgram_pairs,
    to_metapaths,
    train_skipgram,
)
from pqrlka.qrefine import build_relation_graph

from conftest import make_qmatrix

SMALL = SkipGramConfig(dim=16, epochs=5, seed=0)


def test_qsq_alternation_on_path_graph():
    g = build_relation_graph(make_qmatrix([[1], [1]]))  # q1 - s1 - q2
    walks = generate_metapaths(g, 7, 10, seed=0)
    for path in to_metapaths(walks, g):
        assert [k for k, _ in path] == ["question", "skill"] * 3 + ["question"]


def test_isolated_pair_oscillates():
    g = build_relation_graph(make_qmatrix([[1, 0], [0, 1]]))
    walks = generate_metapaths(g, 7, 3, seed=1)
    np.testing.assert_array_equal(walks[0], [0, 2, 0, 2, 0, 2, 0])


def test_walk_count_and_determinism():
    rng = np.random.default_rng(0)
    entries = np.zeros((10, 4), dtype=np.uint8)
    entries[np.arange(10), rng.integers(0, 4, 10)] = 1
    g = build_relation_graph(make_qmatrix(entries))
    walks = generate_metapaths(g, 7, 100, seed=5)
    assert walks.shape == (1000, 7)
    assert np.array_equal(walks, generate_metapaths(g, 7, 100, seed=5))
    assert not np.array_equal(walks, generate_metapaths(g, 7, 100, seed=6))


@settings(max_examples=40, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 8), st.integers(1, 5)), elements=st.integers(0, 1)), st.integers(0, 99))
def test_walks_alternate_and_follow_edges(entries, seed):
    q = make_qmatrix(entries)
    if q.nnz == 0:
        return
    g = build_relation_graph(q)
    walks = generate_metapaths(g, 5, 4, seed)
    for row in walks:
        row = row[row >= 0]
        assert row[0] < g.n_questions
        for k, (u, v) in enumerate(zip(row, row[1:])):
            assert (u < g.n_questions) == (k % 2 == 0)
            assert v in g.neighbors(u)


def test_empty_graph_rejected():
    g = build_relation_graph(make_qmatrix(np.zeros((2, 2), dtype=np.uint8)))
    with pytest.raises(ValueError):
        generate_metapaths(g)


def test_walk_file_roundtrip(tmp_path):
    g = build_relation_graph(make_qmatrix([[1, 0], [1, 1], [0, 1]]))
    walks = generate_metapaths(g, 7, 5, seed=2)
    save_walks(walks, g, tmp_path / "w.txt")
    back, n_q, n_s = load_walks(tmp_path / "w.txt")
    assert (n_q, n_s) == (3, 2)
    np.testing.assert_array_equal(back, walks)


def test_pairs_are_adjacent_neighbours():
    walks = np.array([[0, 5, 1, -1]])
    c, x = skipgram_pairs(walks, 1)
    assert sorted(zip(c.tolist(), x.tolist())) == [(0, 5), (1, 5), (5, 0), (5, 1)]


def test_single_sgd_step_raises_positive_score():
    rng = np.random.default_rng(0)
    w_in = rng.normal(size=(2, 4))
    w_out = rng.normal(size=(2, 4)) * 0.1
    before = w_in[0] @ w_out[1]
    _sgd_pass(w_in, w_out, np.array([0]), np.array([1]), np.empty((1, 0), np.int64), 0.1, 0.1, True)
    assert w_in[0] @ w_out[1] > before


def _graph(n_q=50, n_s=10, seed=0):
    rng = np.random.default_rng(seed)
    entries = np.zeros((n_q, n_s), dtype=np.uint8)
    entries[np.arange(n_q), rng.integers(0, n_s, n_q)] = 1
    return build_relation_graph(make_qmatrix(entries))


def test_training_is_deterministic_and_learns():
    g = _graph()
    walks = generate_metapaths(g, 7, 20, seed=0)
    a = train_skipgram(walks, g.n_questions, g.n_skills, SMALL)
    b = train_skipgram(walks, g.n_questions, g.n_skills, SMALL)
    np.testing.assert_array_equal(a.question_vectors, b.question_vectors)
    hist = a.loss_history
    assert hist[-1] < 0.7 * hist[0]
    for prev, cur in zip(hist[1:], hist[2:]):
        assert cur <= 1.05 * prev


def test_parallel_mode_runs():
    g = _graph(seed=1)
    walks = generate_metapaths(g, 7, 10, seed=0)
    t = train_skipgram(walks, g.n_questions, g.n_skills, SkipGramConfig(dim=8, epochs=2, parallel=True))
    assert np.isfinite(t.question_vectors).all()


@pytest.mark.parametrize("bad", [dict(dim=0), dict(negatives=0)])
def test_invalid_config(bad):
    g = _graph()
    walks = generate_metapaths(g, 7, 2)
    with pytest.raises(ValueError):
        train_skipgram(walks, g.n_questions, g.n_skills, SkipGramConfig(**bad))


def test_embedding_lookup():
    g = _graph()
    t = train_skipgram(generate_metapaths(g, 7, 5), g.n_questions, g.n_skills, SkipGramConfig(epochs=1))
    v = embedding_of(t, ("question", 3))
    assert v.shape == (128,)
    v[:] = 0
    assert np.array_equal(embedding_of(t, ("question", 3)), t.question_vectors[3])
    assert embedding_of(t, ("question", 3)).any()
    for bad in [("question", 50), ("skill", -1), ("edge", 0)]:
        with pytest.raises(KeyError):
            embedding_of(t, bad)


def test_embedding_file_roundtrip(tmp_path):
    g = _graph(8, 3)
    t = train_skipgram(generate_metapaths(g, 7, 5), 8, 3, SkipGramConfig(dim=6, epochs=1), g.question_ids, g.skill_ids)
    save_embeddings(t, tmp_path / "e.txt")
    assert (tmp_path / "e.txt").read_text().splitlines()[0] == "node_kind node_id 6"
    back = load_embeddings(tmp_path / "e.txt")
    np.testing.assert_array_equal(back.question_vectors, t.question_vectors)
    np.testing.assert_array_equal(back.skill_vectors, t.skill_vectors)
    assert back.question_ids == g.question_ids
