"""Question-skill-question metapath walks and heterogeneous skip-gram embeddings."""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from ._io import DataFormatError, atomic_write
from .qrefine import HeteroGraph

__all__ = [
    "EmbeddingTable",
    "SkipGramConfig",
    "embedding_of",
    "generate_metapaths",
    "load_embeddings",
    "load_walks",
    "save_embeddings",
    "save_walks",
    "skipgram_pairs",
    "to_metapaths",
    "train_skipgram",
]

QUESTION = "question"
SKILL = "skill"


def generate_metapaths(
    g: HeteroGraph, length: int = 7, walks_per_node: int = 100, seed: int = 0
) -> np.ndarray:
    """Uniform QSQ walks, ``walks_per_node`` starting from every question.

    Returns an int array of shape (n_walks, length) in global node indices,
    grouped by start question. A walk stuck on a node without neighbours is
    truncated and padded with -1; walks shorter than 3 nodes are discarded.
    In a bipartite graph every neighbour already has the required kind.
    """
    if g.n_questions == 0 or g.n_edges == 0:
        raise ValueError("cannot generate walks on an empty graph")
    if length < 1 or walks_per_node < 1:
        raise ValueError("length and walks_per_node must be positive")
    rng = np.random.default_rng(seed)
    deg = g.degree()
    n = g.n_questions * walks_per_node
    walks = np.full((n, length), -1, dtype=np.int64)
    cur = np.repeat(np.arange(g.n_questions, dtype=np.int64), walks_per_node)
    walks[:, 0] = cur
    alive = np.ones(n, dtype=bool)
    for step in range(1, length):
        d = deg[cur]
        alive &= d > 0
        pick = g.indptr[cur] + (rng.random(n) * d).astype(np.int64)
        pick = np.minimum(pick, len(g.indices) - 1)
        nxt = np.where(alive, g.indices[pick], -1)
        walks[:, step] = nxt
        cur = np.where(alive, nxt, 0)
    lengths = (walks >= 0).sum(axis=1)
    return walks[lengths >= min(3, length)]


def to_metapaths(walks: np.ndarray, g: HeteroGraph) -> list[list[tuple[str, int]]]:
    """Readable form: lists of ``(kind, index)`` with per-kind indices."""
    out = []
    for row in walks:
        path = []
        for node in row[row >= 0]:
            node = int(node)
            if node < g.n_questions:
                path.append((QUESTION, node))
            else:
                path.append((SKILL, node - g.n_questions))
        out.append(path)
    return out


def save_walks(walks: np.ndarray, g: HeteroGraph, path) -> None:
    with atomic_write(path, encoding="utf-8") as fh:
        fh.write(f"# questions={g.n_questions} skills={g.n_skills} length={walks.shape[1]}\n")
        for row in walks:
            fh.write(" ".join(str(int(x)) for x in row[row >= 0]) + "\n")


def load_walks(path) -> tuple[np.ndarray, int, int]:
    """Return (walks, n_questions, n_skills) from a file written by :func:`save_walks`."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        try:
            meta = dict(tok.split("=") for tok in header[1:])
            n_q, n_s, length = int(meta["questions"]), int(meta["skills"]), int(meta["length"])
        except (KeyError, ValueError):
            raise DataFormatError(f"{path}: bad walk file header") from None
        rows = [line.split() for line in fh if line.strip()]
    walks = np.full((len(rows), length), -1, dtype=np.int64)
    for i, row in enumerate(rows):
        walks[i, : len(row)] = [int(x) for x in row]
    return walks, n_q, n_s


@dataclass(frozen=True)
class SkipGramConfig:
    dim: int = 128
    window: int = 1
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025
    min_lr_ratio: float = 1e-3
    unigram_power: float = 0.75
    seed: int = 0
    parallel: bool = False


@dataclass(frozen=True)
class EmbeddingTable:
    question_vectors: np.ndarray
    skill_vectors: np.ndarray
    question_ids: tuple[str, ...] = ()
    skill_ids: tuple[str, ...] = ()
    loss_history: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.question_vectors.shape[1] != self.skill_vectors.shape[1]:
            raise ValueError("question and skill vectors must share one dimension")

    @property
    def dim(self) -> int:
        return self.question_vectors.shape[1]


def embedding_of(t: EmbeddingTable, node: tuple[str, int]) -> np.ndarray:
    """Copy of the vector stored for ``(kind, index)``; unknown nodes raise KeyError."""
    kind, idx = node
    kind = {"q": QUESTION, "s": SKILL}.get(kind, kind)
    table = {QUESTION: t.question_vectors, SKILL: t.skill_vectors}.get(kind)
    if table is None or not isinstance(idx, (int, np.integer)) or not 0 <= idx < len(table):
        raise KeyError(node)
    return table[idx].copy()


def skipgram_pairs(walks: np.ndarray, window: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """(center, context) index pairs for every in-walk neighbour within ``window``."""
    centers, contexts = [], []
    for off in range(1, window + 1):
        left, right = walks[:, :-off], walks[:, off:]
        ok = (left >= 0) & (right >= 0)
        centers += [left[ok], right[ok]]
        contexts += [right[ok], left[ok]]
    if not centers:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


@numba.njit(cache=True)
def _sgd_pass(w_in, w_out, centers, contexts, negs, lr0, lr1, update):
    n, dim = centers.shape[0], w_in.shape[1]
    total = 0.0
    grad = np.empty(dim)
    for p in range(n):
        lr = lr0 + (lr1 - lr0) * p / max(n, 1)
        c = centers[p]
        grad[:] = 0.0
        for k in range(negs.shape[1] + 1):
            if k == 0:
                o = contexts[p]
                label = 1.0
            else:
                o = negs[p, k - 1]
                if o < 0:
                    continue
                label = 0.0
            score = 0.0
            for i in range(dim):
                score += w_in[c, i] * w_out[o, i]
            # -log sigma(+-score), numerically stable
            z = score if label == 1.0 else -score
            if z > 0:
                total += np.log1p(np.exp(-z))
                sig = 1.0 / (1.0 + np.exp(-score))
            else:
                total += -z + np.log1p(np.exp(z))
                e = np.exp(score)
                sig = e / (1.0 + e)
            if update:
                g = lr * (label - sig)
                for i in range(dim):
                    grad[i] += g * w_out[o, i]
                    w_out[o, i] += g * w_in[c, i]
        if update:
            for i in range(dim):
                w_in[c, i] += grad[i]
    return total


@numba.njit(cache=True, parallel=True)
def _sgd_pass_parallel(w_in, w_out, centers, contexts, negs, lr0, lr1):
    # lock-free updates; results depend on thread scheduling
    n, dim = centers.shape[0], w_in.shape[1]
    partial = np.zeros(n)
    for p in numba.prange(n):
        lr = lr0 + (lr1 - lr0) * p / max(n, 1)
        c = centers[p]
        grad = np.zeros(dim)
        for k in range(negs.shape[1] + 1):
            if k == 0:
                o = contexts[p]
                label = 1.0
            else:
                o = negs[p, k - 1]
                if o < 0:
                    continue
                label = 0.0
            score = 0.0
            for i in range(dim):
                score += w_in[c, i] * w_out[o, i]
            sig = 1.0 / (1.0 + np.exp(-score))
            z = score if label == 1.0 else -score
            partial[p] += np.log1p(np.exp(-abs(z))) + max(-z, 0.0)
            g = lr * (label - sig)
            for i in range(dim):
                grad[i] += g * w_out[o, i]
                w_out[o, i] += g * w_in[c, i]
        for i in range(dim):
            w_in[c, i] += grad[i]
    return partial.sum()


def _negative_sampler(walks: np.ndarray, n_questions: int, n_nodes: int, power: float):
    counts = np.bincount(walks[walks >= 0], minlength=n_nodes).astype(np.float64)
    weights = counts**power
    kinds = []
    for lo, hi in ((0, n_questions), (n_questions, n_nodes)):
        w = weights[lo:hi]
        total = w.sum()
        kinds.append((lo, w / total if total > 0 else None))
    return kinds


def _draw_negatives(rng, contexts, k, n_questions, kinds) -> np.ndarray:
    negs = np.full((len(contexts), k), -1, dtype=np.int64)
    is_skill = contexts >= n_questions
    for mask, (lo, probs) in zip((~is_skill, is_skill), kinds):
        m = int(mask.sum())
        if m == 0 or probs is None:
            continue
        negs[mask] = lo + rng.choice(len(probs), size=(m, k), p=probs)
    negs[negs == contexts[:, None]] = -1
    return negs


def train_skipgram(
    walks: np.ndarray,
    n_questions: int,
    n_skills: int,
    config: SkipGramConfig | None = None,
    question_ids=(),
    skill_ids=(),
) -> EmbeddingTable:
    """Skip-gram with negative sampling over metapath walks.

    Negatives are drawn from the smoothed unigram distribution of nodes of
    the same kind as the context node. The learning rate decays linearly over
    all epochs. ``loss_history[0]`` is the mean loss at initialisation; each
    later entry is the running mean over one epoch.
    """
    cfg = config or SkipGramConfig()
    if cfg.dim <= 0:
        raise ValueError("embedding dimension must be positive")
    if cfg.negatives <= 0:
        raise ValueError("negative sample count must be positive")
    if cfg.window < 1 or cfg.epochs < 1:
        raise ValueError("window and epochs must be >= 1")
    walks = np.asarray(walks, dtype=np.int64)
    if walks.size == 0 or (walks >= 0).sum() == 0:
        raise ValueError("no walks to train on")
    n_nodes = n_questions + n_skills
    rng = np.random.default_rng(cfg.seed)
    w_in = (rng.random((n_nodes, cfg.dim)) - 0.5) / cfg.dim
    w_out = np.zeros((n_nodes, cfg.dim))

    centers, contexts = skipgram_pairs(walks, cfg.window)
    if len(centers) == 0:
        raise ValueError("walks yield no skip-gram pairs")
    kinds = _negative_sampler(walks, n_questions, n_nodes, cfg.unigram_power)
    n_pairs = len(centers)

    def draw(order):
        return _draw_negatives(rng, contexts[order], cfg.negatives, n_questions, kinds)

    order = rng.permutation(n_pairs)
    init = _sgd_pass(w_in, w_out, centers[order], contexts[order], draw(order), 0.0, 0.0, False)
    history = [init / n_pairs]
    lr_end = cfg.lr * cfg.min_lr_ratio
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_pairs)
        negs = draw(order)
        lr0 = cfg.lr + (lr_end - cfg.lr) * epoch / cfg.epochs
        lr1 = cfg.lr + (lr_end - cfg.lr) * (epoch + 1) / cfg.epochs
        if cfg.parallel:
            total = _sgd_pass_parallel(w_in, w_out, centers[order], contexts[order], negs, lr0, lr1)
        else:
            total = _sgd_pass(w_in, w_out, centers[order], contexts[order], negs, lr0, lr1, True)
        history.append(total / n_pairs)
    return EmbeddingTable(
        w_in[:n_questions].copy(),
        w_in[n_questions:].copy(),
        tuple(question_ids),
        tuple(skill_ids),
        tuple(float(h) for h in history),
    )


def save_embeddings(t: EmbeddingTable, path) -> None:
    """Text export: ``node_kind node_id <d>`` header, then one node per line."""
    q_ids = t.question_ids or tuple(str(i) for i in range(len(t.question_vectors)))
    s_ids = t.skill_ids or tuple(str(i) for i in range(len(t.skill_vectors)))
    with atomic_write(path, encoding="utf-8") as fh:
        fh.write(f"node_kind node_id {t.dim}\n")
        for kind, ids, table in ((QUESTION, q_ids, t.question_vectors), (SKILL, s_ids, t.skill_vectors)):
            for label, vec in zip(ids, table):
                fh.write(f"{kind} {label} " + " ".join(f"{x:.17g}" for x in vec) + "\n")


def load_embeddings(path) -> EmbeddingTable:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[:2] != ["node_kind", "node_id"]:
            raise DataFormatError(f"{path}: expected header 'node_kind node_id <d>'")
        dim = int(header[2])
        rows = {QUESTION: ([], []), SKILL: ([], [])}
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if parts[0] not in rows or len(parts) != dim + 2:
                raise DataFormatError(f"{path} line {lineno}: malformed embedding row")
            rows[parts[0]][0].append(parts[1])
            rows[parts[0]][1].append([float(x) for x in parts[2:]])
    q_ids, q_vecs = rows[QUESTION]
    s_ids, s_vecs = rows[SKILL]
    return EmbeddingTable(
        np.asarray(q_vecs, dtype=np.float64).reshape(-1, dim),
        np.asarray(s_vecs, dtype=np.float64).reshape(-1, dim),
        tuple(q_ids),
        tuple(s_ids),
    )
