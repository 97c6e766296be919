import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pqrlka.qrefine import build_relation_graph, refine_qmatrix

from conftest import make_qmatrix


def test_two_skill_hand_case():
    O = make_qmatrix([[1, 0], [0, 1]])
    out = refine_qmatrix(O, np.array([[1, 1], [0, 1]]))
    np.testing.assert_array_equal(out.entries, [[1, 0], [1, 1]])


def test_identity_is_exact():
    O = make_qmatrix([[1, 0, 1], [0, 1, 0]])
    assert refine_qmatrix(O, np.eye(3, dtype=np.uint8)) == O


def test_chain_closure_adds_all_ancestors():
    O = make_qmatrix(np.eye(3, dtype=np.uint8))
    closure = np.triu(np.ones((3, 3), dtype=np.uint8))
    np.testing.assert_array_equal(refine_qmatrix(O, closure).entries, [[1, 0, 0], [1, 1, 0], [1, 1, 1]])


def test_iterations_reach_further_levels():
    O = make_qmatrix(np.eye(3, dtype=np.uint8))
    chain = np.eye(3, dtype=np.uint8)
    chain[0, 1] = chain[1, 2] = 1
    once = refine_qmatrix(O, chain)
    twice = refine_qmatrix(O, chain, iterations=2)
    assert once.entries[2, 0] == 0 and twice.entries[2, 0] == 1
    assert (twice.entries >= once.entries).all()


@pytest.mark.parametrize(
    "R, match",
    [
        (np.eye(3), "3x3"),
        (np.array([[1, 2], [0, 1]]), "binary"),
        (np.array([[0, 1], [0, 1]]), "diagonal"),
    ],
)
def test_invalid_relations(R, match):
    with pytest.raises(ValueError, match=match):
        refine_qmatrix(make_qmatrix([[1, 0]]), R)


def pairs(max_q=8, max_s=6):
    return st.tuples(st.integers(1, max_q), st.integers(1, max_s)).flatmap(
        lambda shape: st.tuples(
            arrays(np.uint8, shape, elements=st.integers(0, 1)),
            arrays(np.uint8, (shape[1], shape[1]), elements=st.integers(0, 1)),
        )
    )


@settings(max_examples=200, deadline=None)
@given(pairs())
def test_monotone_and_grows_with_iterations(args):
    O_entries, R = args
    np.fill_diagonal(R, 1)
    O = make_qmatrix(O_entries)
    once = refine_qmatrix(O, R)
    assert (once.entries >= O.entries).all()
    assert (refine_qmatrix(once, R).entries >= once.entries).all()


def test_graph_transcription():
    g = build_relation_graph(make_qmatrix([[1, 1]]))
    assert (g.n_questions, g.n_skills, g.n_edges) == (1, 2, 2)
    assert set(g.neighbors(0)) == {1, 2}
    assert list(g.neighbors(1)) == [0] and list(g.neighbors(2)) == [0]


@settings(max_examples=50, deadline=None)
@given(pairs())
def test_graph_edges_match_qmatrix(args):
    O = make_qmatrix(args[0])
    g = build_relation_graph(O)
    assert g.n_edges == O.nnz
    assert g.indptr[-1] == 2 * O.nnz
    for qi in range(O.n_questions):
        assert sorted(g.neighbors(qi) - O.n_questions) == list(np.flatnonzero(O.entries[qi]))
    assert g.question_ids == O.question_ids and g.skill_ids == O.skill_ids
