"""Question representations fused from graph embeddings and difficulty levels.

Each question contributes four d-dimensional rows: its own embedding, the mean
embedding of its skills, and two difficulty embeddings (question level and
skill level). The rows (linear part) and their Gram matrix (quadratic part)
go through 2x2 convolutions with eight kernels, a max over the row axis, and
a final linear map to the d'-dimensional representation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import torch
from torch import nn

from ._io import atomic_write
from .dataio import InteractionDataset, QMatrix
from .graphembed import EmbeddingTable

__all__ = [
    "ConvFusion",
    "DifficultyIndex",
    "QuestionEncoder",
    "build_feature_matrices",
    "compute_difficulty",
    "conv_fuse",
    "load_difficulty",
    "question_representation",
    "save_difficulty",
]

N_KERNELS = 8


@dataclass(frozen=True)
class DifficultyIndex:
    """Per-question difficulty levels in ``0..c``; level ``c`` means too little data."""

    question_level: np.ndarray
    skill_level: np.ndarray
    c: int


def compute_difficulty(
    train: InteractionDataset, q: QMatrix, c: int = 100, min_attempts: int = 5
) -> DifficultyIndex:
    """Bucket empirical error rates from the training split into ``c`` levels.

    Question level is ``floor(c * error_rate)`` capped at ``c - 1``. The skill
    level of a question buckets the mean error rate of its skills, where a
    skill pools every attempt on questions requiring it. Questions with fewer
    than ``min_attempts`` attempts, or with any skill below that count, get
    level ``c``.
    """
    if c <= 0:
        raise ValueError("level count c must be positive")
    attempts = np.zeros(q.n_questions, dtype=np.int64)
    wrong = np.zeros(q.n_questions, dtype=np.int64)
    for seq in train.sequences.values():
        for it in seq:
            attempts[it.question_id] += 1
            wrong[it.question_id] += not it.correct
    entries = q.entries.astype(np.int64)
    skill_attempts = attempts @ entries
    skill_wrong = wrong @ entries

    q_level = np.full(q.n_questions, c, dtype=np.int64)
    ok = attempts >= min_attempts
    q_level[ok] = np.minimum((c * wrong[ok]) // attempts[ok], c - 1)

    s_level = np.full(q.n_questions, c, dtype=np.int64)
    for qi in range(q.n_questions):
        skills = np.flatnonzero(entries[qi])
        if skills.size == 0 or (skill_attempts[skills] < min_attempts).any():
            continue
        mean = sum(Fraction(int(skill_wrong[s]), int(skill_attempts[s])) for s in skills) / len(skills)
        s_level[qi] = min(math.floor(c * mean), c - 1)
    return DifficultyIndex(q_level, s_level, c)


def save_difficulty(diff: DifficultyIndex, path, question_ids) -> None:
    with atomic_write(path, encoding="utf-8") as fh:
        fh.write(f"question_id,question_level,skill_level,c={diff.c}\n")
        for label, ql, sl in zip(question_ids, diff.question_level, diff.skill_level):
            fh.write(f"{label},{int(ql)},{int(sl)}\n")


def load_difficulty(path) -> DifficultyIndex:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        c = int(header[-1].split("=")[1])
        ql, sl = [], []
        for line in fh:
            if line.strip():
                _, a, b = line.strip().rsplit(",", 2)
                ql.append(int(a))
                sl.append(int(b))
    return DifficultyIndex(np.asarray(ql, dtype=np.int64), np.asarray(sl, dtype=np.int64), c)


def build_feature_matrices(q, s_mean, d_q, d_s) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack the four feature rows into M (..., 4, d) and their Gram matrix N (..., 4, 4)."""
    shapes = {t.shape for t in (q, s_mean, d_q, d_s)}
    if len(shapes) != 1:
        raise ValueError(f"feature vectors differ in shape: {sorted(map(tuple, shapes))}")
    M = torch.stack([q, s_mean, d_q, d_s], dim=-2)
    N = M @ M.transpose(-1, -2)
    return M, N


class ConvFusion(nn.Module):
    """Eight 2x2 kernels on M and on N, row-axis max pooling, then W_O."""

    def __init__(self, dim: int, out_dim: int = 256):
        super().__init__()
        self.dim = dim
        self.out_dim = out_dim
        self.conv_m = nn.Conv2d(1, N_KERNELS, kernel_size=2)
        self.conv_n = nn.Conv2d(1, N_KERNELS, kernel_size=2)
        self.w_o = nn.Linear((dim + 2) * N_KERNELS, out_dim, bias=False)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        for conv in (self.conv_m, self.conv_n):
            bound = 1.0 / math.sqrt(4)  # fan_in of a 1x2x2 kernel
            nn.init.uniform_(conv.weight, -bound, bound)
            nn.init.uniform_(conv.bias, -bound, bound)
        bound = 1.0 / math.sqrt(self.w_o.in_features)
        nn.init.uniform_(self.w_o.weight, -bound, bound)

    def forward(self, M: torch.Tensor, N: torch.Tensor) -> torch.Tensor:
        if M.shape[-2:] != (4, self.dim) or N.shape[-2:] != (4, 4):
            raise ValueError(f"expected M (..., 4, {self.dim}) and N (..., 4, 4), got {tuple(M.shape)}, {tuple(N.shape)}")
        lead = M.shape[:-2]
        M = M.reshape(-1, 1, 4, self.dim)
        N = N.reshape(-1, 1, 4, 4)
        l_m = self.conv_m(M).amax(dim=2)  # (B, 8, d-1)
        l_n = self.conv_n(N).amax(dim=2)  # (B, 8, 3)
        l_mn = torch.cat([l_m, l_n], dim=-1)  # (B, 8, d+2)
        out = self.w_o(l_mn.flatten(start_dim=1))
        return out.reshape(*lead, self.out_dim)


def conv_fuse(M: torch.Tensor, N: torch.Tensor, params: ConvFusion) -> torch.Tensor:
    return params(M, N)


class QuestionEncoder(nn.Module):
    """Maps question indices to fused representations.

    Graph embeddings are frozen buffers unless ``fine_tune`` is set; the
    difficulty table ``D`` and the fusion layers are always trainable.
    """

    def __init__(
        self,
        embeddings: EmbeddingTable,
        q_matrix: QMatrix,
        difficulty: DifficultyIndex,
        out_dim: int = 256,
        fine_tune: bool = False,
    ):
        super().__init__()
        n_q, n_s = q_matrix.entries.shape
        if embeddings.question_vectors.shape[0] != n_q or embeddings.skill_vectors.shape[0] != n_s:
            raise ValueError("embedding table does not match the Q-matrix")
        if len(difficulty.question_level) != n_q:
            raise ValueError("difficulty index does not match the Q-matrix")
        dim = embeddings.dim
        self.dim = dim
        self.out_dim = out_dim
        self.c = difficulty.c
        q_vec = torch.as_tensor(embeddings.question_vectors, dtype=torch.get_default_dtype())
        s_vec = torch.as_tensor(embeddings.skill_vectors, dtype=torch.get_default_dtype())
        if fine_tune:
            self.q_emb = nn.Parameter(q_vec.clone())
            self.s_emb = nn.Parameter(s_vec.clone())
        else:
            self.register_buffer("q_emb", q_vec.clone())
            self.register_buffer("s_emb", s_vec.clone())
        skills = torch.as_tensor(q_matrix.entries.astype(np.float64), dtype=torch.get_default_dtype())
        self.register_buffer("skills", skills)
        self.register_buffer("q_level", torch.as_tensor(difficulty.question_level, dtype=torch.long))
        self.register_buffer("s_level", torch.as_tensor(difficulty.skill_level, dtype=torch.long))
        self.difficulty = nn.Embedding(difficulty.c + 1, dim)
        nn.init.normal_(self.difficulty.weight, std=1.0 / math.sqrt(dim))
        self.fusion = ConvFusion(dim, out_dim)

    def features(self, qids: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        rows = self.skills[qids]
        s_mean = (rows @ self.s_emb) / rows.sum(dim=-1, keepdim=True).clamp_min(1.0)
        return build_feature_matrices(
            self.q_emb[qids],
            s_mean,
            self.difficulty(self.q_level[qids]),
            self.difficulty(self.s_level[qids]),
        )

    def forward(self, qids: torch.Tensor) -> torch.Tensor:
        uniq, inverse = torch.unique(qids, return_inverse=True)
        M, N = self.features(uniq)
        return self.fusion(M, N)[inverse]


def question_representation(question_id: int, encoder: QuestionEncoder) -> torch.Tensor:
    return encoder(torch.tensor([question_id]))[0]
