"""Classification and contrastive objectives over graph embeddings."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass
class ContrastBatch:
    """``2B`` unit-norm embeddings, their labels and the view pairing ``i <-> j(i)``."""

    R: T.Value
    labels: np.ndarray
    pairing: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.pairing = np.asarray(self.pairing, dtype=np.int64)
        m = self.R.rows
        if self.labels.shape != (m,) or self.pairing.shape != (m,):
            raise ValueError("labels and pairing need one entry per embedding row")
        if np.any(self.pairing[self.pairing] != np.arange(m)) or np.any(self.pairing == np.arange(m)):
            raise ValueError("pairing must be a fixed-point-free involution")
        if np.any(self.labels[self.pairing] != self.labels):
            raise ValueError("paired views must share a label")
        norms = np.linalg.norm(self.R.data, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-9)
        if bad.size:
            raise ValueError(f"contrast embedding row {bad[0]} has norm {norms[bad[0]]:.3g}, expected 1")

    @classmethod
    def from_views(cls, first, second, labels):
        """Normalise and stack two ``B x d`` view embeddings; view ``i`` pairs with ``i + B``."""
        tape = first.tape if isinstance(first, T.Value) else second.tape if isinstance(second, T.Value) else T.Tape()
        first = first if isinstance(first, T.Value) else tape.const(first)
        second = second if isinstance(second, T.Value) else tape.const(second)
        B = first.rows
        R = T.row_l2_normalize(T.vstack([first, second]))
        labels = np.concatenate([np.asarray(labels), np.asarray(labels)])
        pairing = np.concatenate([np.arange(B, 2 * B), np.arange(B)])
        return cls(R, labels, pairing)

    def positives(self) -> np.ndarray:
        """Boolean mask of ``Phi(i)``: same label, different index."""
        same = self.labels[:, None] == self.labels[None, :]
        np.fill_diagonal(same, False)
        return same


def _check_tau(tau):
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")


def _log_denominators(batch, tau):
    """Similarity logits and ``log sum_{k != i} exp(r_i . r_k / tau)`` per row."""
    m = batch.R.rows
    logits = T.scale(T.matmul(batch.R, T.transpose(batch.R)), 1.0 / tau)
    off_diag = 1.0 - np.eye(m)
    # per-row max over k != i, held constant; a one-pair batch then cancels exactly
    masked = np.where(off_diag > 0, logits.data, -np.inf)
    shift = masked.max(axis=1, keepdims=True) if m > 1 else np.zeros((m, 1))
    denom = T.row_sum(T.mul(T.exp(logits - shift), off_diag))
    return logits, T.log(denom) + shift


def self_con_loss(batch: ContrastBatch, tau: float) -> T.Value:
    _check_tau(tau)
    m = batch.R.rows
    logits, log_den = _log_denominators(batch, tau)
    pair = np.zeros((m, m))
    pair[np.arange(m), batch.pairing] = 1.0
    pos = T.row_sum(T.mul(logits, pair))
    return T.sum_all(log_den - pos)


def sup_gcon_loss(batch: ContrastBatch, tau: float) -> T.Value:
    _check_tau(tau)
    positives = batch.positives()
    counts = positives.sum(axis=1)
    if np.any(counts == 0):
        raise ValueError(f"anchor {int(np.argmin(counts))} has no positive sample")
    logits, log_den = _log_denominators(batch, tau)
    weights = positives / counts[:, None]
    pos = T.row_sum(T.mul(logits, weights))
    return T.sum_all(log_den - pos)


def cross_entropy(P, Y) -> T.Value:
    """Mean of ``-log P[i, Y_i]``; probabilities below 1e-12 are clamped with a warning."""
    P = P if isinstance(P, T.Value) else T.Tape().const(P)
    Y = np.asarray(Y, dtype=np.int64)
    if Y.shape != (P.rows,):
        raise ValueError(f"need {P.rows} labels, got shape {Y.shape}")
    onehot = np.zeros(P.shape)
    onehot[np.arange(P.rows), Y] = 1.0
    picked = T.row_sum(T.mul(P, onehot))
    short = np.maximum(PROB_FLOOR - picked.data, 0.0)
    if np.any(short > 0):
        log.warning("cross_entropy: true-class probability below %.0e clamped", PROB_FLOOR)
        picked = picked + short
    return T.scale(T.mean_all(T.log(picked)), -1.0)


def total_loss(gc, sc, lam):
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    if lam == 0:
        return gc
    if isinstance(sc, T.Value):
        return gc + T.scale(sc, lam)
    return gc + lam * sc
