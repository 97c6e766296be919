"""Synthetic learner logs with a planted prerequisite DAG.

Mastery is conjunctive: a response is correct with probability ``1 - slip``
when every required skill is mastered, and ``guess`` otherwise. A skill can
only become mastered once all its prerequisites are, so the planted DAG is
visible in the order in which learners acquire skills.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import Interaction, InteractionDataset, QMatrix

__all__ = ["SynthConfig", "generate_synthetic", "kg_recovery_metrics", "planted_dag"]


@dataclass(frozen=True)
class SynthConfig:
    n_skills: int = 8
    n_questions: int = 100
    n_learners: int = 500
    seq_len_range: tuple[int, int] = (50, 50)
    dag_kind: str = "chain"  # chain | tree | random-dag
    slip: float = 0.1
    guess: float = 0.2
    learning_rate_per_practice: float = 0.3
    init_mastery: float = 0.3
    frontier_bias: float = 0.3
    practice_spread: int | None = 2  # off-frontier picks stay this close; None = any skill
    max_skills_per_question: int = 1
    mean_gap: float = 90.0  # seconds between attempts within a session
    session_break_prob: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        if not (0 <= self.slip < 0.5 and 0 <= self.guess < 0.5):
            raise ValueError("slip and guess must lie in [0, 0.5)")
        for name in ("learning_rate_per_practice", "init_mastery", "frontier_bias", "session_break_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be a probability")
        lo, hi = self.seq_len_range
        if lo < 10 or hi < lo:
            raise ValueError("seq_len_range must satisfy 10 <= min <= max")
        if self.n_skills < 1 or self.n_questions < self.n_skills or self.n_learners < 1:
            raise ValueError("need n_questions >= n_skills >= 1 and at least one learner")
        if self.dag_kind not in ("chain", "tree", "random-dag"):
            raise ValueError(f"unknown dag_kind {self.dag_kind!r}")
        if self.max_skills_per_question < 1:
            raise ValueError("max_skills_per_question must be >= 1")


def planted_dag(n_skills: int, kind: str, rng: np.random.Generator) -> np.ndarray:
    """Binary prerequisite matrix (unit diagonal); edges always go from lower to higher index."""
    kg = np.eye(n_skills, dtype=np.uint8)
    if kind == "chain":
        for i in range(n_skills - 1):
            kg[i, i + 1] = 1
    elif kind == "tree":
        for j in range(1, n_skills):
            kg[rng.integers(0, j), j] = 1
    elif kind == "random-dag":
        p = min(1.0, 2.0 / max(n_skills - 1, 1))
        for j in range(1, n_skills):
            parents = np.flatnonzero(rng.random(j) < p)
            if parents.size == 0:
                parents = [rng.integers(0, j)]
            kg[parents, j] = 1
    else:
        raise ValueError(f"unknown dag_kind {kind!r}")
    return kg


def _question_skills(cfg: SynthConfig, kg: np.ndarray, rng) -> np.ndarray:
    n_q, n_s = cfg.n_questions, cfg.n_skills
    primary = np.concatenate([np.arange(n_s), rng.integers(0, n_s, n_q - n_s)])
    rng.shuffle(primary)
    q = np.zeros((n_q, n_s), dtype=np.uint8)
    q[np.arange(n_q), primary] = 1
    for qi in range(n_q):
        extra = rng.integers(0, cfg.max_skills_per_question)
        if extra:
            others = np.setdiff1d(np.arange(n_s), [primary[qi]])
            q[qi, rng.choice(others, size=min(extra, others.size), replace=False)] = 1
    return q


def generate_synthetic(cfg: SynthConfig, return_mastery: bool = False):
    """Return ``(dataset, true Q-matrix, true KG)``; with ``return_mastery`` also
    a dict mapping each learner to a (T, S) boolean array of mastery before
    every response.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n_s = cfg.n_skills
    kg = planted_dag(n_s, cfg.dag_kind, rng)
    prereqs = [np.flatnonzero(kg[:, j] * (np.arange(n_s) != j)) for j in range(n_s)]
    entries = _question_skills(cfg, kg, rng)
    by_skill = [np.flatnonzero(entries[:, s]) for s in range(n_s)]

    sequences = {}
    traces = {}
    width = len(str(cfg.n_learners))
    for li in range(cfg.n_learners):
        learner = f"u{li + 1:0{width}d}"
        mastered = np.zeros(n_s, dtype=bool)
        for s in range(n_s):  # index order is a topological order
            if mastered[prereqs[s]].all() and rng.random() < cfg.init_mastery:
                mastered[s] = True
        length = int(rng.integers(cfg.seq_len_range[0], cfg.seq_len_range[1] + 1))
        t = int(1_600_000_000 + rng.integers(0, 30 * 86400))
        seq, trace = [], []
        for _ in range(length):
            ready = np.flatnonzero(~mastered & np.array([mastered[p].all() for p in prereqs]))
            frontier = int(ready.min()) if ready.size else n_s - 1
            if ready.size and rng.random() < cfg.frontier_bias:
                skill = frontier
            elif cfg.practice_spread is None:
                skill = rng.integers(0, n_s)
            else:
                lo = max(frontier - cfg.practice_spread, 0)
                hi = min(frontier + cfg.practice_spread, n_s - 1)
                skill = rng.integers(lo, hi + 1)
            qi = int(rng.choice(by_skill[skill]))
            req = np.flatnonzero(entries[qi])
            p_correct = 1.0 - cfg.slip if mastered[req].all() else cfg.guess
            correct = bool(rng.random() < p_correct)
            trace.append(mastered.copy())
            elapsed = float(np.round(rng.lognormal(np.log(20.0 if correct else 35.0), 0.6), 3))
            seq.append(Interaction(learner, qi, correct, t, elapsed))
            for s in req:
                if not mastered[s] and mastered[prereqs[s]].all() and rng.random() < cfg.learning_rate_per_practice:
                    mastered[s] = True
            if rng.random() < cfg.session_break_prob:
                t += int(rng.exponential(86400.0)) + 3600
            else:
                t += int(rng.exponential(cfg.mean_gap)) + int(np.ceil(elapsed)) + 1
        sequences[learner] = tuple(seq)
        traces[learner] = np.array(trace)

    q = QMatrix(
        entries,
        tuple(f"q{i + 1}" for i in range(cfg.n_questions)),
        tuple(f"s{i + 1}" for i in range(n_s)),
    )
    ds = InteractionDataset(sequences, cfg.n_questions, n_s, q.question_ids)
    if return_mastery:
        return ds, q, kg, traces
    return ds, q, kg


def kg_recovery_metrics(inferred, truth) -> tuple[float, float, float]:
    """Directed-edge precision, recall and F1, ignoring the diagonal.

    An empty inferred edge set has precision 0 by convention.
    """
    inferred = np.asarray(getattr(inferred, "values", inferred))
    truth = np.asarray(getattr(truth, "values", truth))
    if inferred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {inferred.shape} vs {truth.shape}")
    off = ~np.eye(inferred.shape[0], dtype=bool)
    pred = (inferred != 0) & off
    true = (truth != 0) & off
    tp = int((pred & true).sum())
    precision = tp / pred.sum() if pred.sum() else 0.0
    recall = tp / true.sum() if true.sum() else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return float(precision), float(recall), float(f1)
