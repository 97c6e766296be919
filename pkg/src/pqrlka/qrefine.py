"""Q-matrix refinement with a prerequisite matrix, and its bipartite graph view."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import QMatrix
from .prereq import SkillRelation

__all__ = ["HeteroGraph", "build_relation_graph", "refine_qmatrix"]


def refine_qmatrix(O: QMatrix, R, iterations: int = 1) -> QMatrix:
    """Add every direct prerequisite of a question's skills to that question.

    ``R[i, j] = 1`` means s_i is a prerequisite of s_j, so a question needing
    s_j also receives s_i: ``O_hat = [O @ R.T >= 1]``. Each extra iteration
    reaches one more prerequisite level.
    """
    R = np.asarray(R.values if isinstance(R, SkillRelation) else R)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValueError("skill relation matrix must be square")
    if R.shape[0] != O.n_skills:
        raise ValueError(f"Q-matrix has {O.n_skills} skills but relation matrix is {R.shape[0]}x{R.shape[1]}")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not np.isin(R, (0, 1)).all():
        raise ValueError("relation matrix must be binary")
    if not np.all(np.diag(R) == 1):
        raise ValueError("relation matrix must have a unit diagonal")
    Rt = R.astype(np.int64).T
    entries = O.entries.astype(np.int64)
    for _ in range(iterations):
        entries = (entries @ Rt >= 1).astype(np.int64)
    return O.with_entries(entries.astype(np.uint8))


@dataclass(frozen=True)
class HeteroGraph:
    """Question-skill bipartite graph in CSR form.

    Nodes use one global index space: questions ``0..Q-1``, then skills
    ``Q..Q+S-1``. ``indptr``/``indices`` list each node's neighbours.
    """

    question_ids: tuple[str, ...]
    skill_ids: tuple[str, ...]
    qs_edges: frozenset[tuple[int, int]]
    indptr: np.ndarray
    indices: np.ndarray

    @property
    def n_questions(self) -> int:
        return len(self.question_ids)

    @property
    def n_skills(self) -> int:
        return len(self.skill_ids)

    @property
    def n_nodes(self) -> int:
        return self.n_questions + self.n_skills

    @property
    def n_edges(self) -> int:
        return len(self.qs_edges)

    def is_question(self, node: int) -> bool:
        return node < self.n_questions

    def neighbors(self, node: int) -> np.ndarray:
        return self.indices[self.indptr[node] : self.indptr[node + 1]]

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)


def build_relation_graph(Q: QMatrix) -> HeteroGraph:
    """One question-skill edge per nonzero Q-matrix entry."""
    n_q, n_s = Q.entries.shape
    qi, si = np.nonzero(Q.entries)
    src = np.concatenate([qi, si + n_q])
    dst = np.concatenate([si + n_q, qi])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(n_q + n_s + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    indptr = np.cumsum(indptr)
    return HeteroGraph(
        tuple(Q.question_ids),
        tuple(Q.skill_ids),
        frozenset(zip(qi.tolist(), si.tolist())),
        indptr,
        dst.astype(np.int64),
    )
