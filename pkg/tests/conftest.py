import numpy as np
import pytest
import torch

from pqrlka.dataio import Interaction, InteractionDataset, QMatrix

torch.set_num_threads(1)


def make_dataset(sequences, n_questions, n_skills=0, start=1000, gap=60):
    """Build a dataset from ``{learner: [(question, correct), ...]}`` with evenly spaced timestamps."""
    seqs = {}
    for learner, steps in sequences.items():
        seqs[learner] = tuple(
            Interaction(learner, int(qi), bool(r), start + k * gap, 10.0) for k, (qi, r) in enumerate(steps)
        )
    labels = tuple(f"q{i + 1}" for i in range(n_questions))
    return InteractionDataset(seqs, n_questions, n_skills, labels)


def make_qmatrix(rows):
    rows = np.asarray(rows, dtype=np.uint8)
    return QMatrix(
        rows,
        tuple(f"q{i + 1}" for i in range(rows.shape[0])),
        tuple(f"s{j + 1}" for j in range(rows.shape[1])),
    )


@pytest.fixture
def identity_q():
    return make_qmatrix(np.eye(4, dtype=np.uint8))


def finite_difference_error(fn, tensors, eps=6e-6):
    """Largest relative gap between autograd and central differences.

    ``fn`` maps nothing to a scalar and reads ``tensors`` (float64 leaves with
    ``requires_grad``), which are perturbed in place one element at a time.
    The default step is near the cube root of float64 machine epsilon, which
    balances truncation against round-off for central differences.
    """
    for t in tensors:
        t.grad = None
    fn().backward()
    worst = 0.0
    for t in tensors:
        analytic = t.grad.detach().clone().reshape(-1)
        flat = t.data.reshape(-1)
        numeric = torch.empty_like(analytic)
        with torch.no_grad():
            for k in range(flat.numel()):
                old = flat[k].item()
                flat[k] = old + eps
                up = fn().item()
                flat[k] = old - eps
                down = fn().item()
                flat[k] = old
                numeric[k] = (up - down) / (2 * eps)
        scale = torch.maximum(analytic.abs(), numeric.abs()).clamp_min(1e-6)
        worst = max(worst, float(((analytic - numeric).abs() / scale).max()))
    return worst
