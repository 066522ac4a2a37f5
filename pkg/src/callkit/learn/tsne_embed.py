"""Exact t-SNE from a precomputed distance matrix."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence

import numpy as np
import pandas as pd

from callkit.common.errors import TsneError
from callkit.common.models import DistanceMatrix, Embedding

logger = logging.getLogger(__name__)

PERPLEXITY_TOL = 1e-5
MAX_SEARCH_STEPS = 200
MIN_GAIN = 0.01
MOMENTUM_SWITCH = 250


def row_entropy(distances: np.ndarray, beta: float) -> tuple[float, np.ndarray]:
    """Shannon entropy (nats) and probabilities of exp(−beta·d) over one row of distances."""
    shifted = distances - distances.min()
    weights = np.exp(-beta * shifted)
    total = weights.sum()
    probabilities = weights / total
    return float(math.log(total) + beta * np.sum(shifted * probabilities)), probabilities


def conditional_probabilities(distances: np.ndarray, perplexity: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-row bisection on the precision so each row's entropy equals log(perplexity).

    Returns the row-stochastic conditional matrix (zero diagonal) and the precision found per row.
    """
    n = distances.shape[0]
    target = math.log(perplexity)
    conditional = np.zeros((n, n))
    betas = np.empty(n)
    index = np.arange(n)
    for i in range(n):
        row = distances[i, index != i]
        spread = float(np.mean(row - row.min()))
        beta, lo, hi = (1.0 / spread if spread > 0 else 1.0), 0.0, math.inf
        for _ in range(MAX_SEARCH_STEPS):
            entropy, probabilities = row_entropy(row, beta)
            gap = entropy - target
            if abs(gap) < PERPLEXITY_TOL:
                break
            if gap > 0:
                lo = beta
                beta = beta * 2.0 if math.isinf(hi) else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (beta + lo) / 2.0
        else:
            raise TsneError(f"Perplexity {perplexity!r} is infeasible for point {i}: entropy gap {gap:.3g}")
        conditional[i, index != i] = probabilities
        betas[i] = beta
    return conditional, betas


def tsne(
    dm: DistanceMatrix,
    perplexity: float = 30.0,
    iters: int = 1000,
    seed: int = 1,
    learning_rate: float = 200.0,
    exaggeration: float = 12.0,
    exaggeration_iters: int = 250,
) -> Embedding:
    """2-D embedding of the calls in ``dm``; euclidean distances are squared before calibration.

    Points are processed in call-id order, so the output is seed-deterministic and permuting
    the input matrix permutes the output rows identically.
    """
    n = dm.n
    if not n > 3 * perplexity:
        raise TsneError(f"t-SNE needs more than 3·perplexity = {3 * perplexity:g} points, got {n}")
    order = np.argsort(np.asarray(dm.call_ids), kind="stable")
    distances = dm.values[np.ix_(order, order)]
    if dm.metric == "euclidean":
        distances = distances**2

    conditional, _ = conditional_probabilities(distances, perplexity)
    P = (conditional + conditional.T) / (2.0 * n)
    support = P > 0

    rng = np.random.default_rng(seed)
    Y = 1e-4 * rng.standard_normal((n, 2))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    kl_history: list[float] = []
    for iteration in range(iters):
        boost = exaggeration if iteration < exaggeration_iters else 1.0
        momentum = 0.5 if iteration < MOMENTUM_SWITCH else 0.8

        sq = np.sum(Y * Y, axis=1)
        kernel = 1.0 / (1.0 + np.maximum(sq[:, None] + sq[None, :] - 2.0 * Y @ Y.T, 0.0))
        np.fill_diagonal(kernel, 0.0)
        Q = kernel / kernel.sum()
        kl_history.append(float(np.sum(P[support] * np.log(P[support] / Q[support]))))

        forces = (boost * P - Q) * kernel
        gradient = 4.0 * (np.diag(forces.sum(axis=1)) - forces) @ Y
        flipped = update * gradient < 0
        gains = np.maximum(np.where(flipped, gains + 0.2, gains * 0.8), MIN_GAIN)
        update = momentum * update - learning_rate * gains * gradient
        Y = Y + update

    if not np.all(np.isfinite(Y)):
        raise TsneError("t-SNE diverged: non-finite coordinates")
    coords = np.empty_like(Y)
    coords[order] = Y
    logger.info("t-SNE on %d calls: KL %.4f after %d iterations", n, kl_history[-1] if kl_history else 0.0, iters)
    return Embedding(
        coords=coords,
        call_ids=list(dm.call_ids),
        kl_history=kl_history,
        perplexity=perplexity,
        seed=seed,
        exaggeration_iters=exaggeration_iters,
    )


def embedding_frame(embedding: Embedding, labels: Sequence[str] | None = None) -> pd.DataFrame:
    """Table of call_id, x, y and (when given) label, ready for plotting."""
    frame = pd.DataFrame({"call_id": embedding.call_ids, "x": embedding.coords[:, 0], "y": embedding.coords[:, 1]})
    if labels is not None:
        frame["label"] = list(labels)
    return frame
