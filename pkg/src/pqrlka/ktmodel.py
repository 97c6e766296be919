"""Attentive recurrent knowledge tracing over fused question representations.

Each interaction is embedded as ``[q_tilde, t, r]`` (question representation,
elapsed-time projection, response embedding) and fed to an LSTM cell. To
predict step k the hidden states of steps ``< k`` are averaged with softmax
weights over ``exp(-decay * |dt|) * g``, where ``g`` mixes the shared-skill
ratio with the cosine similarity of question representations. The
aggregate and ``q_tilde_k`` go through a tanh layer and a sigmoid output.
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from scipy.stats import rankdata
from torch import nn

from ._io import DataFormatError, atomic_write
from .dataio import InteractionDataset, QMatrix
from .graphembed import EmbeddingTable
from .qrepr import DifficultyIndex, QuestionEncoder

__all__ = [
    "KnowledgeState",
    "ModelConfig",
    "PQRLKA",
    "TrainConfig",
    "attention_aggregate",
    "attention_weights",
    "auc_score",
    "chunk_sequence",
    "correlation",
    "evaluate",
    "evaluate_auc",
    "interaction_embedding",
    "load_checkpoint",
    "loss",
    "make_batches",
    "predict",
    "recurrent_step",
    "save_checkpoint",
    "train",
]

log = logging.getLogger(__name__)

EPS = 1e-7
CHECKPOINT_MAGIC = b"PQRL"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    out_dim: int = 256  # d', size of q_tilde
    hidden: int = 256
    et_cap: float = 500.0
    lam: float = 0.5
    time_unit: float = 3600.0  # seconds per decay time unit
    init_decay: float = 0.1
    bias_inside_tanh: bool = False
    fine_tune_embeddings: bool = False


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 20
    batch_size: int = 64
    clip_norm: float = 10.0
    seq_len: int = 200
    seed: int = 0
    early_stop: bool = False
    val_fraction: float = 0.1
    patience: int = 3
    dtype: str = "float32"


class LSTMCell(nn.Module):
    def __init__(self, in_dim: int, hidden: int):
        super().__init__()
        self.hidden = hidden
        self.w_x = nn.Linear(in_dim, 4 * hidden)
        self.w_h = nn.Linear(hidden, 4 * hidden, bias=False)
        bound = 1.0 / math.sqrt(hidden)
        for p in self.parameters():
            nn.init.uniform_(p, -bound, bound)

    def forward(self, x, h, c):
        i, f, g, o = (self.w_x(x) + self.w_h(h)).chunk(4, dim=-1)
        c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        return h, c


class PQRLKA(nn.Module):
    def __init__(self, encoder: QuestionEncoder, config: ModelConfig | None = None):
        super().__init__()
        cfg = config or ModelConfig()
        if encoder.out_dim != cfg.out_dim:
            raise ValueError("encoder output size differs from model out_dim")
        self.config = cfg
        self.encoder = encoder
        d = cfg.out_dim
        self.w_et = nn.Parameter(torch.empty(d).uniform_(-1.0 / cfg.et_cap, 1.0 / cfg.et_cap))
        self.b_et = nn.Parameter(torch.empty(d).uniform_(-1.0, 1.0))
        self.e_r = nn.Embedding(2, d)
        nn.init.normal_(self.e_r.weight, std=1.0 / math.sqrt(d))
        self.cell = LSTMCell(3 * d, cfg.hidden)
        self.log_decay = nn.Parameter(torch.tensor(math.log(cfg.init_decay)))
        self.w_s = nn.Linear(d + cfg.hidden, cfg.hidden, bias=False)
        self.b_s = nn.Parameter(torch.zeros(cfg.hidden))
        self.w_p = nn.Linear(cfg.hidden, 1)
        bound = 1.0 / math.sqrt(d + cfg.hidden)
        nn.init.uniform_(self.w_s.weight, -bound, bound)

    @property
    def decay_rate(self) -> torch.Tensor:
        return self.log_decay.exp()

    def forward(self, batch: "Batch") -> torch.Tensor:
        """Probabilities for every step of a padded batch, shape (B, T).

        Column 0 has no history and is returned as 0.5; callers score steps
        ``1..T-1`` through ``batch.target_mask``.
        """
        q_t = self.encoder(batch.qids)
        x = interaction_embedding(q_t, batch.elapsed, batch.correct, self)
        B, T, _ = x.shape
        h = x.new_zeros(B, self.config.hidden)
        c = x.new_zeros(B, self.config.hidden)
        states = []
        for t in range(T):
            h, c = self.cell(x[:, t], h, c)
            states.append(h)
        H = torch.stack(states, dim=1)
        rows = self.encoder.skills[batch.qids]
        alpha = attention_weights(q_t, rows, batch.times, self.decay_rate, self.config.lam)
        h_agg = alpha @ H  # (B, T, hidden); row t aggregates states < t
        return predict(q_t, h_agg, self)


def interaction_embedding(q_tilde, elapsed, correct, model: PQRLKA) -> torch.Tensor:
    """``[q_tilde, min(et, cap) * W_et + b_et, E_r[correct]]``."""
    elapsed = torch.as_tensor(elapsed, dtype=q_tilde.dtype)
    correct = torch.as_tensor(correct).long()
    et = elapsed.clamp(max=model.config.et_cap).unsqueeze(-1)
    t = et * model.w_et + model.b_et
    r = model.e_r(correct)
    return torch.cat([q_tilde, t.expand_as(q_tilde), r.expand_as(q_tilde)], dim=-1)


@dataclass
class KnowledgeState:
    """Recurrent state of one sequence plus the history used for attention.

    Each history entry is ``(h_i, q_tilde_i, timestamp_i, skills_i)``.
    """

    h: torch.Tensor
    cell: torch.Tensor
    history: list = field(default_factory=list)

    @classmethod
    def initial(cls, hidden: int, dtype=None) -> "KnowledgeState":
        dtype = dtype or torch.get_default_dtype()
        return cls(torch.zeros(hidden, dtype=dtype), torch.zeros(hidden, dtype=dtype), [])


def recurrent_step(x, state: KnowledgeState, model: PQRLKA, timestamp=0, skills=frozenset()) -> KnowledgeState:
    h, c = model.cell(x, state.h, state.cell)
    q_tilde = x[..., : model.config.out_dim]
    return KnowledgeState(h, c, state.history + [(h, q_tilde, timestamp, frozenset(skills))])


def _cosine(u, v):
    denom = u.norm(dim=-1) * v.norm(dim=-1)
    dot = (u * v).sum(dim=-1)
    return torch.where(denom > 0, dot / torch.where(denom > 0, denom, torch.ones_like(denom)), torch.zeros_like(dot))


def correlation(q_i, q_next, skills_i, skills_next, lam: float = 0.5):
    """``lam * |shared skills| / |skills_next| + (1 - lam) * cos(q_i, q_next)``."""
    skills_i, skills_next = set(skills_i), set(skills_next)
    if not skills_next:
        raise ValueError("the predicted question has no skills")
    shared = len(skills_i & skills_next) / len(skills_next)
    q_i = torch.as_tensor(q_i)
    q_next = torch.as_tensor(q_next)
    return lam * shared + (1.0 - lam) * _cosine(q_i, q_next)


def attention_aggregate(state: KnowledgeState, q_next, t_next, skills_next, model: PQRLKA):
    """Softmax-weighted mean of past hidden states; zero vector for an empty history."""
    if not state.history:
        return torch.zeros(model.config.hidden, dtype=q_next.dtype)
    rate = model.decay_rate
    corre = []
    for _, q_i, t_i, s_i in state.history:
        dt = abs(float(t_next) - float(t_i)) / model.config.time_unit
        g = correlation(q_i, q_next, s_i, skills_next, model.config.lam)
        corre.append(torch.exp(-rate * dt) * g)
    alpha = torch.softmax(torch.stack(corre), dim=0)
    H = torch.stack([h for h, *_ in state.history])
    return alpha @ H


def attention_weights(q_tilde, skill_rows, times, decay_rate, lam: float) -> torch.Tensor:
    """Batched weights (B, T, T): row k is a softmax over steps ``i < k``.

    ``times`` are already in decay units. Row 0 is all zero.
    """
    n_next = skill_rows.sum(dim=-1).clamp_min(1.0)
    g1 = (skill_rows @ skill_rows.transpose(-1, -2)) / n_next.unsqueeze(-1)  # [b, k, i]
    norm = q_tilde.norm(dim=-1, keepdim=True)
    unit = q_tilde / torch.where(norm > 0, norm, torch.ones_like(norm))
    g2 = unit @ unit.transpose(-1, -2)
    g = lam * g1 + (1.0 - lam) * g2
    dt = (times.unsqueeze(-1) - times.unsqueeze(-2)).abs()
    corre = torch.exp(-decay_rate * dt) * g
    T = q_tilde.shape[-2]
    past = torch.ones(T, T, dtype=torch.bool, device=q_tilde.device).tril(diagonal=-1)
    corre = corre.masked_fill(~past, float("-inf"))
    alpha = torch.softmax(corre, dim=-1)
    return torch.nan_to_num(alpha, nan=0.0)


def predict(q_next, h_agg, model: PQRLKA) -> torch.Tensor:
    z = model.w_s(torch.cat([q_next, h_agg], dim=-1))
    if model.config.bias_inside_tanh:
        s = torch.tanh(z + model.b_s)
    else:
        s = torch.tanh(z) + model.b_s
    return torch.sigmoid(model.w_p(s)).squeeze(-1)


def loss(predictions, labels) -> torch.Tensor:
    """Summed binary cross-entropy with predictions clamped to ``[EPS, 1 - EPS]``."""
    p = torch.as_tensor(predictions)
    r = torch.as_tensor(labels, dtype=p.dtype if p.is_floating_point() else torch.float64)
    if p.shape != r.shape:
        raise ValueError(f"{p.numel()} predictions vs {r.numel()} labels")
    p = p.clamp(EPS, 1.0 - EPS)
    return -(r * torch.log(p) + (1.0 - r) * torch.log(1.0 - p)).sum()


def auc_score(labels, scores) -> float:
    """Mann-Whitney form of ROC AUC; tied scores count 1/2."""
    labels = np.asarray(labels, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined with a single label class")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


# ---------------------------------------------------------------- batching


@dataclass
class Batch:
    qids: torch.Tensor  # (B, T) long
    correct: torch.Tensor  # (B, T) long
    elapsed: torch.Tensor  # (B, T) float
    times: torch.Tensor  # (B, T) float, decay units since sequence start
    mask: torch.Tensor  # (B, T) bool, real steps

    @property
    def target_mask(self) -> torch.Tensor:
        m = self.mask.clone()
        m[:, 0] = False
        return m

    @property
    def labels(self) -> torch.Tensor:
        return self.correct


def chunk_sequence(seq: Sequence, max_len: int = 200) -> list:
    """Consecutive pieces of at most ``max_len`` steps."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    return [seq[i : i + max_len] for i in range(0, len(seq), max_len)]


def _collate(chunks: list, time_unit: float, dtype) -> Batch:
    T = max(len(c) for c in chunks)
    B = len(chunks)
    qids = np.zeros((B, T), dtype=np.int64)
    correct = np.zeros((B, T), dtype=np.int64)
    elapsed = np.zeros((B, T), dtype=np.float64)
    times = np.zeros((B, T), dtype=np.float64)
    mask = np.zeros((B, T), dtype=bool)
    for b, chunk in enumerate(chunks):
        n = len(chunk)
        qids[b, :n] = [it.question_id for it in chunk]
        correct[b, :n] = [it.correct for it in chunk]
        elapsed[b, :n] = [it.elapsed_time for it in chunk]
        ts = np.array([it.timestamp for it in chunk], dtype=np.int64)
        times[b, :n] = (ts - ts[0]) / time_unit
        mask[b, :n] = True
    return Batch(
        torch.from_numpy(qids),
        torch.from_numpy(correct),
        torch.as_tensor(elapsed, dtype=dtype),
        torch.as_tensor(times, dtype=dtype),
        torch.from_numpy(mask),
    )


def make_batches(
    ds: InteractionDataset,
    batch_size: int = 64,
    seq_len: int = 200,
    time_unit: float = 3600.0,
    rng: np.random.Generator | None = None,
    dtype=None,
) -> list[Batch]:
    """Chunk every sequence, drop single-step chunks, and group into batches.

    Without ``rng`` the chunk order is the dataset order.
    """
    dtype = dtype or torch.get_default_dtype()
    chunks = [c for seq in ds.sequences.values() for c in chunk_sequence(seq, seq_len) if len(c) >= 2]
    if rng is not None:
        chunks = [chunks[i] for i in rng.permutation(len(chunks))]
    return [_collate(chunks[i : i + batch_size], time_unit, dtype) for i in range(0, len(chunks), batch_size)]


# ---------------------------------------------------------------- training


def _batch_objective(model: PQRLKA, batch: Batch) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    probs = model(batch)
    m = batch.target_mask
    p, r = probs[m], batch.labels[m]
    return loss(p, r), p, r


def evaluate(model: PQRLKA, ds: InteractionDataset, batch_size: int = 64, seq_len: int = 200) -> tuple[float, float]:
    """Mean per-step loss and pooled AUC over every predicted step of ``ds``."""
    dtype = next(model.parameters()).dtype
    total, n = 0.0, 0
    preds, labels = [], []
    model.eval()
    with torch.no_grad():
        for batch in make_batches(ds, batch_size, seq_len, model.config.time_unit, dtype=dtype):
            l, p, r = _batch_objective(model, batch)
            total += float(l)
            n += int(r.numel())
            preds.append(p.double().numpy())
            labels.append(r.numpy())
    if n == 0:
        raise ValueError("dataset has no predicted steps")
    return total / n, auc_score(np.concatenate(labels), np.concatenate(preds))


def evaluate_auc(model: PQRLKA, ds: InteractionDataset, batch_size: int = 64, seq_len: int = 200) -> float:
    return evaluate(model, ds, batch_size, seq_len)[1]


@dataclass
class TrainResult:
    model: PQRLKA
    history: list[tuple[int, str, float, float]]


def _dtype(name: str):
    return {"float32": torch.float32, "float64": torch.float64}[name]


def build_model(
    embeddings: EmbeddingTable,
    q_matrix: QMatrix,
    difficulty: DifficultyIndex,
    model_config: ModelConfig | None = None,
    seed: int = 0,
    dtype: str = "float32",
) -> PQRLKA:
    cfg = model_config or ModelConfig()
    torch.manual_seed(seed)
    prev = torch.get_default_dtype()
    torch.set_default_dtype(_dtype(dtype))
    try:
        encoder = QuestionEncoder(embeddings, q_matrix, difficulty, cfg.out_dim, cfg.fine_tune_embeddings)
        model = PQRLKA(encoder, cfg)
    finally:
        torch.set_default_dtype(prev)
    return model


def train(
    train_ds: InteractionDataset,
    embeddings: EmbeddingTable,
    q_matrix: QMatrix,
    difficulty: DifficultyIndex,
    model_config: ModelConfig | None = None,
    config: TrainConfig | None = None,
    metrics_callback=None,
) -> TrainResult:
    """Adam on the mean per-step cross-entropy with global norm clipping.

    With ``early_stop`` a fraction of training learners is held out and the
    parameters with the best held-out AUC are kept.
    """
    cfg = config or TrainConfig()
    mcfg = model_config or ModelConfig()
    if train_ds.n_learners == 0:
        raise ValueError("empty training set")
    model = build_model(embeddings, q_matrix, difficulty, mcfg, cfg.seed, cfg.dtype)
    dtype = _dtype(cfg.dtype)
    rng = np.random.default_rng(cfg.seed)

    fit_ds, val_ds = train_ds, None
    if cfg.early_stop:
        learners = list(train_ds.sequences)
        n_val = max(1, int(round(cfg.val_fraction * len(learners))))
        held = set(learners[i] for i in rng.permutation(len(learners))[:n_val])
        fit_ds = train_ds.subset([l for l in learners if l not in held])
        val_ds = train_ds.subset([l for l in learners if l in held])

    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    history = []
    best = (-math.inf, None)
    bad_epochs = 0
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        for batch in make_batches(fit_ds, cfg.batch_size, cfg.seq_len, mcfg.time_unit, rng=rng, dtype=dtype):
            l, _, r = _batch_objective(model, batch)
            if r.numel() == 0:
                continue
            opt.zero_grad()
            (l / r.numel()).backward()
            nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
            opt.step()
        tr_loss, tr_auc = evaluate(model, fit_ds, cfg.batch_size, cfg.seq_len)
        rows = [(epoch, "train", tr_loss, tr_auc)]
        if val_ds is not None:
            va_loss, va_auc = evaluate(model, val_ds, cfg.batch_size, cfg.seq_len)
            rows.append((epoch, "val", va_loss, va_auc))
        history += rows
        for row in rows:
            log.info("epoch %d %s loss=%.4f auc=%.4f", *row)
            if metrics_callback is not None:
                metrics_callback(row)
        if val_ds is not None:
            if va_auc > best[0]:
                best = (va_auc, {k: v.clone() for k, v in model.state_dict().items()})
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= cfg.patience:
                    break
    if best[1] is not None:
        model.load_state_dict(best[1])
    return TrainResult(model, history)


def format_metrics(rows: Iterable[tuple[int, str, float, float]]) -> str:
    lines = ["epoch,split,loss,auc"]
    lines += [f"{e},{s},{l:.10f},{a:.10f}" for e, s, l, a in rows]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(model: PQRLKA, path) -> None:
    """``PQRL`` magic, u32 version, then named float64 tensors until EOF."""
    with atomic_write(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name, tensor in model.state_dict().items():
            arr = tensor.detach().cpu().double().numpy()
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    pos = 8
    tensors = {}
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", data, pos)
            pos += 8 * rank
            count = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape)
            pos += 8 * count
            tensors[name] = arr.copy()
    except (struct.error, ValueError) as exc:
        raise DataFormatError(f"{path}: truncated checkpoint") from exc
    return tensors


def model_from_checkpoint(tensors: dict[str, np.ndarray], model_config: ModelConfig | None = None, dtype: str = "float32") -> PQRLKA:
    """Rebuild a model from checkpoint tensors alone (buffers carry the inputs)."""
    cfg = model_config or ModelConfig()
    skills = tensors["encoder.skills"].astype(np.uint8)
    n_q, n_s = skills.shape
    q = QMatrix(skills, tuple(map(str, range(n_q))), tuple(map(str, range(n_s))))
    emb = EmbeddingTable(tensors["encoder.q_emb"], tensors["encoder.s_emb"])
    c = tensors["encoder.difficulty.weight"].shape[0] - 1
    diff = DifficultyIndex(
        tensors["encoder.q_level"].astype(np.int64), tensors["encoder.s_level"].astype(np.int64), c
    )
    model = build_model(emb, q, diff, cfg, 0, dtype)
    state = model.state_dict()
    model.load_state_dict({k: torch.as_tensor(v, dtype=state[k].dtype) for k, v in tensors.items()})
    return model
