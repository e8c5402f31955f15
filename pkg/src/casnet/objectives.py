"""Separation and channel-identification losses.

All functions are pure and differentiable through the tensor engine; the
permutation search backpropagates only through the selected assignment.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .tensor import Tensor, _ensure_tensor

SI_SNR_EPS = 1e-8
SI_SNR_CAP_DB = 60.0


def si_snr(estimate, target, eps=SI_SNR_EPS, cap_db=SI_SNR_CAP_DB):
    """Scale-invariant signal-to-distortion ratio in dB, capped to ±cap_db.

    Both signals are zero-meaned, the estimate is projected onto the target,
    and the ratio of projection to residual energy is returned on a log
    scale.  Invariant to rescaling of the estimate.
    """
    est = _ensure_tensor(estimate)
    tgt = _ensure_tensor(target)
    if est.shape != tgt.shape:
        raise ValueError(f"si_snr: length mismatch {est.shape} vs {tgt.shape}")
    est = est - est.mean()
    tgt = tgt - tgt.mean()
    target_energy = (tgt * tgt).sum()
    if target_energy.item() == 0.0:
        raise ValueError("si_snr: zero-energy target")
    scale = (est * tgt).sum() / target_energy
    s_target = scale * tgt
    e_noise = est - s_target
    ratio = (s_target * s_target).sum() / ((e_noise * e_noise).sum() + eps)
    return (10.0 * ratio.log10()).clip(-cap_db, cap_db)


def pit_loss(estimates, targets):
    """Negative best mean SI-SNR over all source assignments.

    ``estimates`` and ``targets`` are sequences (or [n, time] tensors) of the
    same source count.  Returns ``(loss, permutation)`` where ``permutation``
    maps estimate index -> target index; gradients flow only through the
    winning assignment.
    """
    est_list = _rows(estimates)
    tgt_list = _rows(targets)
    n = len(est_list)
    if n != len(tgt_list):
        raise ValueError(f"pit_loss: {n} estimates vs {len(tgt_list)} targets")
    scores = [[si_snr(e, t) for t in tgt_list] for e in est_list]
    best_perm, best_mean = None, None
    for perm in permutations(range(n)):
        mean = scores[0][perm[0]]
        for i in range(1, n):
            mean = mean + scores[i][perm[i]]
        mean = mean / float(n)
        if best_mean is None or mean.item() > best_mean.item():
            best_perm, best_mean = perm, mean
    return -best_mean, best_perm


def channel_id_loss(logits, labels):
    """Softmax cross-entropy in nats, averaged over the batch."""
    logits = _ensure_tensor(logits)
    m, n_classes = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (m,):
        raise ValueError(f"channel_id_loss: expected {m} labels, got {labels.shape}")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(
            f"channel_id_loss: label out of range for {n_classes} classes: {labels}"
        )
    # Detached per-row max keeps exp() in range without changing the gradient.
    shift = Tensor(np.max(logits.data, axis=1, keepdims=True))
    z = logits - shift
    log_norm = z.exp().sum(axis=1, keepdims=True).log()
    log_probs = z - log_norm
    onehot = np.zeros((m, n_classes))
    onehot[np.arange(m), labels] = 1.0
    return -(log_probs * Tensor(onehot)).sum() / float(m)


@dataclass
class LossBreakdown:
    """Logged step losses; ``l_total == l_rc + gamma * l_ci`` exactly."""

    l_rc: float
    l_ci: float
    gamma: float
    l_total: float
    chosen_permutation: object = None


def total_loss(l_rc, l_ci, gamma, chosen_permutation=None):
    """Combine reconstruction and channel-identification losses."""
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    l_rc = float(l_rc)
    l_ci = float(l_ci)
    return LossBreakdown(
        l_rc=l_rc,
        l_ci=l_ci,
        gamma=gamma,
        l_total=l_rc + gamma * l_ci,
        chosen_permutation=chosen_permutation,
    )


def _rows(signals):
    if isinstance(signals, Tensor):
        return [signals[i] for i in range(signals.shape[0])]
    return [_ensure_tensor(s) for s in signals]
