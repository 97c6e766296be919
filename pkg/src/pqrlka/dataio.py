"""Interaction logs and Q-matrices: loading, filtering, splitting, writing.

Learner logs are delimited text with a header row. The Q-matrix is either a
``question_id, skill_id`` pair list or a dense 0/1 table whose first column
holds question labels and whose remaining header cells are skill labels.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._io import DataFormatError, atomic_write

__all__ = [
    "DataFormatError",
    "Interaction",
    "InteractionDataset",
    "LogColumns",
    "QMatrix",
    "filter_dataset",
    "load_interactions",
    "load_qmatrix",
    "save_interactions",
    "save_qmatrix",
    "split_sequences",
]


@dataclass(frozen=True)
class Interaction:
    learner_id: str
    question_id: int
    correct: bool
    timestamp: int
    elapsed_time: float = 0.0

    def __post_init__(self):
        if self.elapsed_time < 0:
            raise ValueError(f"elapsed_time must be >= 0, got {self.elapsed_time}")


@dataclass(frozen=True)
class InteractionDataset:
    """Per-learner, time-ordered interaction sequences.

    ``question_labels`` maps the integer ``question_id`` of each interaction
    back to the label used in the source file.
    """

    sequences: Mapping[str, tuple[Interaction, ...]]
    question_count: int
    skill_count: int
    question_labels: tuple[str, ...] = ()
    elapsed_missing: bool = False

    @property
    def learners(self) -> list[str]:
        return list(self.sequences)

    @property
    def n_learners(self) -> int:
        return len(self.sequences)

    @property
    def n_interactions(self) -> int:
        return sum(len(s) for s in self.sequences.values())

    def subset(self, learners: Iterable[str]) -> "InteractionDataset":
        return replace(self, sequences={l: self.sequences[l] for l in learners})


@dataclass(frozen=True, eq=False)
class QMatrix:
    """Binary question-by-skill matrix with ordered labels."""

    entries: np.ndarray
    question_ids: tuple[str, ...]
    skill_ids: tuple[str, ...]

    def __post_init__(self):
        entries = np.asarray(self.entries)
        if entries.ndim != 2:
            raise ValueError("Q-matrix entries must be two-dimensional")
        if entries.shape != (len(self.question_ids), len(self.skill_ids)):
            raise ValueError(
                f"entries shape {entries.shape} does not match "
                f"{len(self.question_ids)} questions x {len(self.skill_ids)} skills"
            )
        if entries.size and not np.isin(entries, (0, 1)).all():
            raise DataFormatError("Q-matrix entries must be 0 or 1")
        entries = entries.astype(np.uint8)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    def __eq__(self, other):
        if not isinstance(other, QMatrix):
            return NotImplemented
        return (
            self.question_ids == other.question_ids
            and self.skill_ids == other.skill_ids
            and np.array_equal(self.entries, other.entries)
        )

    __hash__ = None

    @property
    def n_questions(self) -> int:
        return self.entries.shape[0]

    @property
    def n_skills(self) -> int:
        return self.entries.shape[1]

    @property
    def nnz(self) -> int:
        return int(self.entries.sum())

    @property
    def question_index(self) -> dict[str, int]:
        return {label: i for i, label in enumerate(self.question_ids)}

    def skills_of(self, question: int) -> np.ndarray:
        return np.flatnonzero(self.entries[question])

    def with_entries(self, entries: np.ndarray) -> "QMatrix":
        return QMatrix(entries, self.question_ids, self.skill_ids)


@dataclass(frozen=True)
class LogColumns:
    """Column names of an interaction log; all configurable."""

    learner: str = "learner_id"
    question: str = "question_id"
    correct: str = "correct"
    timestamp: str = "timestamp"
    elapsed: str = "elapsed_time"
    timestamp_unit: str = "s"  # "s" or "ms"
    delimiter: str = ","

    def required(self) -> tuple[str, ...]:
        return (self.learner, self.question, self.correct, self.timestamp, self.elapsed)


def _parse_correct(raw: str, lineno: int) -> bool:
    try:
        value = float(raw)
    except ValueError:
        raise DataFormatError(f"line {lineno}: correctness {raw!r} is not 0/1") from None
    if value not in (0.0, 1.0):
        raise DataFormatError(f"line {lineno}: correctness {raw!r} is not 0/1")
    return value == 1.0


def _parse_timestamp(raw: str, unit: str, lineno: int) -> int:
    try:
        value = float(raw)
    except ValueError:
        raise DataFormatError(f"line {lineno}: timestamp {raw!r} is not numeric") from None
    if not math.isfinite(value):
        raise DataFormatError(f"line {lineno}: timestamp {raw!r} is not finite")
    if unit == "ms":
        return int(value // 1000)
    return int(math.floor(value))


def load_interactions(
    path,
    columns: LogColumns | None = None,
    qmatrix: QMatrix | None = None,
) -> InteractionDataset:
    """Read an interaction log and group it into per-learner sequences.

    With ``qmatrix`` given, question labels are resolved against its rows and
    interactions on unknown questions are dropped (with a warning). Without it
    question indices are assigned in order of first appearance.

    Sequences are stably sorted by timestamp, so equal timestamps keep file
    order. Empty elapsed-time cells are stored as 0 and flag the dataset.
    """
    columns = columns or LogColumns()
    path = Path(path)
    known = qmatrix.question_index if qmatrix is not None else None
    labels: list[str] = list(qmatrix.question_ids) if qmatrix is not None else []
    label_index: dict[str, int] = dict(known) if known is not None else {}
    rows: dict[str, list[Interaction]] = {}
    elapsed_missing = False
    unknown = 0

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=columns.delimiter)
        header = next(reader, None)
        if header is None:
            warnings.warn(f"{path}: empty interaction file, dataset has 0 learners")
            return InteractionDataset(
                {}, len(labels), qmatrix.n_skills if qmatrix is not None else 0, tuple(labels)
            )
        header = [h.strip() for h in header]
        missing = [c for c in columns.required() if c not in header]
        if missing:
            raise DataFormatError(f"{path}: missing column(s) {', '.join(missing)}")
        pos = {name: header.index(name) for name in columns.required()}

        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise DataFormatError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            learner = row[pos[columns.learner]].strip()
            qlabel = row[pos[columns.question]].strip()
            correct = _parse_correct(row[pos[columns.correct]].strip(), lineno)
            timestamp = _parse_timestamp(row[pos[columns.timestamp]].strip(), columns.timestamp_unit, lineno)
            raw_elapsed = row[pos[columns.elapsed]].strip()
            if raw_elapsed == "" or raw_elapsed.lower() == "nan":
                elapsed = 0.0
                elapsed_missing = True
            else:
                try:
                    elapsed = float(raw_elapsed)
                except ValueError:
                    raise DataFormatError(f"line {lineno}: elapsed time {raw_elapsed!r} is not numeric") from None
                if elapsed < 0:
                    raise DataFormatError(f"line {lineno}: negative elapsed time {elapsed}")

            if qlabel not in label_index:
                if known is not None:
                    unknown += 1
                    continue
                label_index[qlabel] = len(labels)
                labels.append(qlabel)
            rows.setdefault(learner, []).append(
                Interaction(learner, label_index[qlabel], correct, timestamp, elapsed)
            )

    if unknown:
        warnings.warn(f"{path}: dropped {unknown} interaction(s) on questions absent from the Q-matrix")
    if not rows:
        warnings.warn(f"{path}: no interactions, dataset has 0 learners")
    sequences = {
        learner: tuple(sorted(seq, key=lambda it: it.timestamp)) for learner, seq in rows.items()
    }
    skill_count = qmatrix.n_skills if qmatrix is not None else 0
    return InteractionDataset(sequences, len(labels), skill_count, tuple(labels), elapsed_missing)


def save_interactions(ds: InteractionDataset, path, columns: LogColumns | None = None) -> None:
    columns = columns or LogColumns()
    labels = ds.question_labels
    with atomic_write(path, newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=columns.delimiter, lineterminator="\n")
        writer.writerow(columns.required())
        for learner, seq in ds.sequences.items():
            for it in seq:
                qlabel = labels[it.question_id] if labels else str(it.question_id)
                ts = it.timestamp * 1000 if columns.timestamp_unit == "ms" else it.timestamp
                writer.writerow([learner, qlabel, int(it.correct), ts, repr(float(it.elapsed_time))])


def filter_dataset(ds: InteractionDataset, q: QMatrix, min_interactions: int = 10) -> InteractionDataset:
    """Drop interactions on questions without skills, then short sequences.

    Question removal happens first, so a learner is judged on what remains.
    """
    has_skill = q.entries.sum(axis=1) > 0
    kept: dict[str, tuple[Interaction, ...]] = {}
    for learner, seq in ds.sequences.items():
        seq = tuple(it for it in seq if 0 <= it.question_id < q.n_questions and has_skill[it.question_id])
        if len(seq) >= min_interactions:
            kept[learner] = seq
    return InteractionDataset(
        kept,
        q.n_questions,
        q.n_skills,
        tuple(q.question_ids),
        ds.elapsed_missing,
    )


def split_sequences(
    ds: InteractionDataset, test_fraction: float = 0.2, seed: int = 0
) -> tuple[InteractionDataset, InteractionDataset]:
    """Partition learners (not interactions) into train and test sets.

    The test set holds ``floor(test_fraction * n + 0.5)`` learners (round half
    up), clamped so that both sides are non-empty.
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    learners = sorted(ds.sequences)
    n = len(learners)
    if n < 2:
        raise ValueError(f"need at least 2 learners to split, got {n}")
    n_test = min(max(int(math.floor(test_fraction * n + 0.5)), 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    test = {learners[i] for i in order[:n_test]}
    train_ids = [l for l in ds.sequences if l not in test]
    test_ids = [l for l in ds.sequences if l in test]
    return ds.subset(train_ids), ds.subset(test_ids)


def _is_missing(cell: str) -> bool:
    return cell == "" or cell.lower() in ("nan", "na", "none", "null")


def load_qmatrix(
    path,
    skill_ids: Sequence[str] | None = None,
    question_col: str = "question_id",
    skill_col: str = "skill_id",
    delimiter: str = ",",
) -> QMatrix:
    """Load a Q-matrix from a pair list or a dense 0/1 table.

    A header of exactly ``question_col, skill_col`` selects the pair-list
    reading; anything else is read as dense. When ``skill_ids`` is given,
    columns follow that order and unknown skills are appended (with a
    warning). Questions left with no valid skill are dropped.
    """
    path = Path(path)
    skills: list[str] = list(skill_ids) if skill_ids is not None else []
    skill_pos = {s: i for i, s in enumerate(skills)}
    questions: list[str] = []
    qpos: dict[str, int] = {}
    pairs: set[tuple[int, int]] = set()

    def skill_index(label: str) -> int:
        if label not in skill_pos:
            if skill_ids is not None:
                warnings.warn(f"{path}: unknown skill {label!r}, appending a new column")
            skill_pos[label] = len(skills)
            skills.append(label)
        return skill_pos[label]

    def question_index(label: str) -> int:
        if label not in qpos:
            qpos[label] = len(questions)
            questions.append(label)
        return qpos[label]

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = [h.strip() for h in next(reader, [])]
        if not header:
            warnings.warn(f"{path}: empty Q-matrix file")
            return QMatrix(np.zeros((0, len(skills)), np.uint8), (), tuple(skills))
        if header == [question_col, skill_col]:
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) < 2:
                    raise DataFormatError(f"line {lineno}: expected question and skill")
                qlabel, slabel = row[0].strip(), row[1].strip()
                if not qlabel:
                    continue
                qi = question_index(qlabel)
                if _is_missing(slabel):
                    continue
                pairs.add((qi, skill_index(slabel)))
        else:
            col_skills = [skill_index(s) for s in header[1:]]
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise DataFormatError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
                qi = question_index(row[0].strip())
                for si, cell in zip(col_skills, row[1:]):
                    cell = cell.strip()
                    if cell not in ("0", "1"):
                        raise DataFormatError(f"line {lineno}: Q-matrix entry {cell!r} is not 0 or 1")
                    if cell == "1":
                        pairs.add((qi, si))

    entries = np.zeros((len(questions), len(skills)), dtype=np.uint8)
    for qi, si in pairs:
        entries[qi, si] = 1
    keep = entries.sum(axis=1) > 0
    if not keep.all():
        warnings.warn(f"{path}: dropped {int((~keep).sum())} question(s) with no valid skill")
    return QMatrix(entries[keep], tuple(l for l, k in zip(questions, keep) if k), tuple(skills))


def save_qmatrix(
    q: QMatrix, path, question_col: str = "question_id", skill_col: str = "skill_id", dense: bool = True
) -> None:
    """Write ``q`` as a dense 0/1 table, or as a pair list with ``dense=False``.

    Only the dense form keeps skill columns that no question uses and the
    skill order independent of the question order.
    """
    with atomic_write(path, newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if dense:
            writer.writerow([question_col, *q.skill_ids])
            for label, row in zip(q.question_ids, q.entries):
                writer.writerow([label, *map(int, row)])
            return
        writer.writerow([question_col, skill_col])
        for qi, si in zip(*np.nonzero(q.entries)):
            writer.writerow([q.question_ids[qi], q.skill_ids[si]])
