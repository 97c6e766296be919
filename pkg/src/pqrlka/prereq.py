"""Infer a skill prerequisite graph from response sequences.

Two families of evidence are supported: adjacent skill transitions (``sk``)
and association coefficients over per-pair 2x2 contingency tables built from
the latest ordered occurrence of each skill pair in every learner sequence.
The raw relation matrix is made one-directional and thresholded into a binary
matrix with a unit diagonal.
"""
from __future__ import annotations

import csv
import enum
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ._io import DataFormatError, atomic_write
from .dataio import InteractionDataset, QMatrix

__all__ = [
    "ContingencyTable",
    "ContingencyCounts",
    "KGMethod",
    "SkillRelation",
    "binarize_threshold",
    "build_contingency_tables",
    "coefficient",
    "coefficient_matrix",
    "directionalize",
    "export_dot",
    "infer_kg",
    "load_kg_pairs",
    "read_dot",
    "relation_matrix",
    "save_kg_pairs",
    "skill_transition_matrix",
    "threshold_sweep",
]


class KGMethod(str, enum.Enum):
    SK = "sk"
    KAPPA = "kappa"
    KAPPA_ADJ = "kappa_adj"
    PHI = "phi"
    YULE = "yule"
    OCHIAI = "ochiai"
    SOKAL = "sokal"
    JACCARD = "jaccard"

    @classmethod
    def parse(cls, value) -> "KGMethod":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown KG method {value!r}; expected one of {names}") from None


@dataclass(frozen=True)
class ContingencyTable:
    a: int  # s_i mastered, s_j mastered
    b: int  # s_i mastered, s_j not
    c: int  # s_i not, s_j mastered
    d: int  # neither

    def __post_init__(self):
        if min(self.a, self.b, self.c, self.d) < 0:
            raise ValueError("contingency counts must be non-negative")

    @property
    def total(self) -> int:
        return self.a + self.b + self.c + self.d


@dataclass(frozen=True)
class ContingencyCounts:
    """Cell counts for every ordered skill pair, each an |S| x |S| array."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.a + self.b + self.c + self.d

    def __getitem__(self, pair: tuple[int, int]) -> ContingencyTable:
        i, j = pair
        return ContingencyTable(int(self.a[i, j]), int(self.b[i, j]), int(self.c[i, j]), int(self.d[i, j]))

    def as_dict(self) -> dict[tuple[int, int], ContingencyTable]:
        """Tables for every pair with at least one contributing learner."""
        return {(int(i), int(j)): self[i, j] for i, j in zip(*np.nonzero(self.total))}


@dataclass(frozen=True)
class SkillRelation:
    """Skill-by-skill relation; ``values[i, j]`` scores s_i as prerequisite of s_j."""

    values: np.ndarray
    method: KGMethod
    threshold: float | None = None

    @property
    def is_binary(self) -> bool:
        return self.threshold is not None

    @property
    def n_edges(self) -> int:
        v = np.asarray(self.values)
        return int(np.count_nonzero(v) - np.count_nonzero(np.diag(v)))

    def edges(self) -> list[tuple[int, int]]:
        v = np.asarray(self.values)
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(v)) if i != j]


def _skill_rows(q: QMatrix) -> list[np.ndarray]:
    return [np.flatnonzero(row) for row in q.entries]


def skill_transition_matrix(ds: InteractionDataset, q: QMatrix) -> np.ndarray:
    """Row-normalised counts of skill s_j practised right after skill s_i."""
    n_skills = q.n_skills
    counts = np.zeros((n_skills, n_skills), dtype=np.int64)
    rows = _skill_rows(q)
    for seq in ds.sequences.values():
        for prev, nxt in zip(seq, seq[1:]):
            counts[np.ix_(rows[prev.question_id], rows[nxt.question_id])] += 1
    totals = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, totals, out=np.zeros((n_skills, n_skills)), where=totals > 0)


def build_contingency_tables(ds: InteractionDataset, q: QMatrix) -> ContingencyCounts:
    """Count one vote per learner per ordered skill pair.

    For pair (i, j) the vote comes from the latest index pair p < r where the
    question at p requires s_i and the question at r requires s_j: r is the
    last occurrence of s_j and p the last occurrence of s_i before it.
    Correctness at p and r stands in for mastery of s_i and s_j. Diagonal
    pairs are not counted.
    """
    n_skills = q.n_skills
    a = np.zeros((n_skills, n_skills), dtype=np.int64)
    b = np.zeros_like(a)
    c = np.zeros_like(a)
    d = np.zeros_like(a)
    entries = q.entries.astype(bool)
    for seq in ds.sequences.values():
        if len(seq) < 2:
            continue
        qids = np.fromiter((it.question_id for it in seq), dtype=np.int64, count=len(seq))
        correct = np.fromiter((it.correct for it in seq), dtype=bool, count=len(seq))
        has = entries[qids]  # T x S
        t_len = len(seq)
        # before[t, s]: last index < t whose question requires s, or -1
        idx = np.where(has, np.arange(t_len)[:, None], -1)
        running = np.maximum.accumulate(idx, axis=0)
        before = np.vstack([np.full((1, n_skills), -1), running[:-1]])
        last = running[-1]
        for j in np.flatnonzero(last >= 0):
            r = last[j]
            p = before[r]
            src = np.flatnonzero(p >= 0)
            src = src[src != j]
            if src.size == 0:
                continue
            mi = correct[p[src]]
            mj = correct[r]
            if mj:
                a[src[mi], j] += 1
                c[src[~mi], j] += 1
            else:
                b[src[mi], j] += 1
                d[src[~mi], j] += 1
    return ContingencyCounts(a, b, c, d)


def _coefficient_arrays(a, b, c, d, method: KGMethod) -> np.ndarray:
    a, b, c, d = (np.asarray(x, dtype=np.float64) for x in (a, b, c, d))
    if method is KGMethod.KAPPA:
        num = 2.0 * (a * d - b * c)
        den = (a + b) * (b + d) + (a + c) * (c + d)
    elif method is KGMethod.KAPPA_ADJ:
        num = 2.0 * (a * d - b * c)
        den = (a + c) * (c + d)
    elif method is KGMethod.PHI:
        num = a * d - b * c
        den = np.sqrt((a + b) * (b + d) * (a + c) * (c + d))
    elif method is KGMethod.YULE:
        num = a * d - b * c
        den = a * d + b * c
    elif method is KGMethod.OCHIAI:
        num = a
        den = np.sqrt((a + b) * (a + c))
    elif method is KGMethod.SOKAL:
        num = a + d
        den = a + b + c + d
    elif method is KGMethod.JACCARD:
        num = a
        den = a + b + c
    else:
        raise ValueError(f"{method.value} is not a contingency-table coefficient")
    # zero denominator means no evidence of a relation
    return np.divide(num, den, out=np.zeros(np.broadcast(num, den).shape), where=den != 0)


def coefficient(t: ContingencyTable, method) -> float:
    """Evaluate one association coefficient on a single table."""
    method = KGMethod.parse(method)
    if t.total == 0:
        raise ValueError("coefficient of an all-zero contingency table is undefined")
    return float(_coefficient_arrays(t.a, t.b, t.c, t.d, method))


def coefficient_matrix(counts: ContingencyCounts, method, min_support: int = 5) -> np.ndarray:
    """Coefficient for every ordered pair; pairs with fewer than ``min_support`` votes are 0."""
    method = KGMethod.parse(method)
    values = _coefficient_arrays(counts.a, counts.b, counts.c, counts.d, method)
    values[counts.total < max(min_support, 1)] = 0.0
    np.fill_diagonal(values, 0.0)
    return values


def directionalize(values: np.ndarray) -> np.ndarray:
    """Keep only the stronger direction of every skill pair.

    Exact ties keep (i, j) with i < j. The diagonal is left as is.
    """
    values = np.array(values, dtype=np.float64, copy=True)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError("relation matrix must be square")
    upper = np.triu(np.ones(values.shape, dtype=bool), k=1)
    keep_upper = values >= values.T  # compared at (i, j) with i < j
    drop_lower = upper & keep_upper  # zero (j, i)
    drop_upper = upper & ~keep_upper  # zero (i, j)
    values[drop_lower.T] = 0.0
    values[drop_upper] = 0.0
    return values


def binarize_threshold(values: np.ndarray, threshold: float) -> np.ndarray:
    """Entries ``>= threshold`` become 1, the rest 0; diagonal forced to 1.

    Only the dominant direction of each pair (same rule as ``directionalize``)
    is eligible, so a threshold at or below zero cannot create 2-cycles.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError("relation matrix must be square")
    upper = np.triu(np.ones(values.shape, dtype=bool), k=1)
    dominant = upper & (values >= values.T)
    dominant |= (upper & ~dominant).T
    out = ((values >= threshold) & dominant).astype(np.uint8)
    np.fill_diagonal(out, 1)
    return out


def relation_matrix(ds: InteractionDataset, q: QMatrix, method, min_support: int = 5) -> np.ndarray:
    """Real-valued relation matrix before directionalising and thresholding."""
    method = KGMethod.parse(method)
    if method is KGMethod.SK:
        values = skill_transition_matrix(ds, q)
        np.fill_diagonal(values, 0.0)
        return values
    return coefficient_matrix(build_contingency_tables(ds, q), method, min_support)


def infer_kg(
    ds: InteractionDataset,
    q: QMatrix,
    method="kappa_adj",
    threshold: float = 0.3,
    min_support: int = 5,
) -> SkillRelation:
    method = KGMethod.parse(method)
    values = directionalize(relation_matrix(ds, q, method, min_support))
    return SkillRelation(binarize_threshold(values, threshold), method, float(threshold))


def threshold_sweep(values: np.ndarray, thresholds: Sequence[float]) -> list[tuple[float, int]]:
    """Number of KG edges left at each threshold."""
    out = []
    for t in thresholds:
        binary = binarize_threshold(values, t)
        out.append((float(t), int(binary.sum() - np.trace(binary))))
    return out


def _labels(n: int, labels: Sequence[str] | None) -> list[str]:
    return list(labels) if labels is not None else [f"s{i + 1}" for i in range(n)]


def export_dot(R, path, labels: Sequence[str] | None = None, name: str = "kg") -> None:
    """Write the KG as a DOT digraph; self-loops are omitted."""
    values = np.asarray(R.values if isinstance(R, SkillRelation) else R)
    names = _labels(values.shape[0], labels)
    lines = [f"digraph {name} {{"]
    lines += [f'  "{n}";' for n in names]
    for i, j in zip(*np.nonzero(values)):
        if i != j:
            lines.append(f'  "{names[i]}" -> "{names[j]}";')
    lines.append("}")
    with atomic_write(path, encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


_DOT_NODE = re.compile(r'^\s*"([^"]*)"\s*;\s*$')
_DOT_EDGE = re.compile(r'^\s*"([^"]*)"\s*->\s*"([^"]*)"\s*;\s*$')


def read_dot(path) -> tuple[list[str], set[tuple[str, str]]]:
    """Parse a file written by :func:`export_dot` into (nodes, edges)."""
    nodes: list[str] = []
    edges: set[tuple[str, str]] = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if m := _DOT_EDGE.match(line):
            edges.add((m.group(1), m.group(2)))
        elif m := _DOT_NODE.match(line):
            nodes.append(m.group(1))
    return nodes, edges


def save_kg_pairs(R, path, labels: Sequence[str] | None = None) -> None:
    values = np.asarray(R.values if isinstance(R, SkillRelation) else R)
    names = _labels(values.shape[0], labels)
    with atomic_write(path, newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["src_skill", "dst_skill"])
        for i, j in zip(*np.nonzero(values)):
            if i != j:
                writer.writerow([names[i], names[j]])


def load_kg_pairs(path, labels: Sequence[str]) -> np.ndarray:
    """Read a ``src_skill, dst_skill`` list into a binary matrix with unit diagonal."""
    index = {s: i for i, s in enumerate(labels)}
    out = np.eye(len(labels), dtype=np.uint8)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["src_skill", "dst_skill"]:
            raise DataFormatError(f"{path}: expected header 'src_skill,dst_skill'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                out[index[row[0].strip()], index[row[1].strip()]] = 1
            except KeyError as exc:
                raise DataFormatError(f"{path} line {lineno}: unknown skill {exc.args[0]!r}") from None
    return out
