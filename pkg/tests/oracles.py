"""Independent reference implementations the tests check the library against.

Everything here is deliberately written the slow, obvious way (loops, finite
differences, pairwise counts) and never calls the code paths it verifies.
"""

from __future__ import annotations

import numpy as np


def central_difference_grad(f, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Gradient of scalar f at x by central differences, one entry at a time.

    Perturbations and evaluation happen in the function's own dtype; the
    difference quotient is formed in float64 to avoid extra rounding.
    """
    x = np.asarray(x)
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(f())
        flat[i] = orig - h
        f_minus = float(f())
        flat[i] = orig
        grad.reshape(-1)[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative disagreement between two gradient vectors."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def pairwise_auc(scores, labels) -> float:
    """P(score of a random positive > score of a random negative), ties half.

    The O(n^2) Mann-Whitney estimator; exact arithmetic in float64.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("both classes required")
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def loop_confusion(stopped, background):
    """Count the four gate-confusion cells one sample at a time."""
    tp = fp = tn = fn = 0
    for s, b in zip(stopped, background):
        if s and b:
            tp += 1
        elif s and not b:
            fp += 1
        elif not s and not b:
            tn += 1
        else:
            fn += 1
    return tp, fp, tn, fn


def loop_stop_rate(stopped) -> float:
    n = 0
    total = 0
    for s in stopped:
        total += 1
        if s:
            n += 1
    return n / total


def loop_negative_pass_through(stopped, background) -> float:
    passed_bg = 0
    bg = 0
    for s, b in zip(stopped, background):
        if b:
            bg += 1
            if not s:
                passed_bg += 1
    return passed_bg / bg


def loop_positive_lost(stopped, background) -> float:
    stopped_pos = 0
    pos = 0
    for s, b in zip(stopped, background):
        if not b:
            pos += 1
            if s:
                stopped_pos += 1
    return stopped_pos / pos


def loop_dropout_rate(phi) -> float:
    zeros = 0
    for v in phi:
        clamped = min(1.0, max(0.0, float(v)))
        if not clamped > 0.5:
            zeros += 1
    return zeros / len(phi)


def loop_negative_correction(stopped, background, full_pred_background) -> float:
    """Per-sample loop for the correction rate.

    full_pred_background[i] is True when the ungated model classifies sample
    i as background.
    """
    corrected = 0
    bg = 0
    for s, b, pb in zip(stopped, background, full_pred_background):
        if b:
            bg += 1
            if s and not pb:
                corrected += 1
    return corrected / bg


def softmax_ce_scalar(logits_row, label) -> float:
    """One-sample cross entropy in float64, the textbook way."""
    row = np.asarray(logits_row, dtype=np.float64)
    shifted = row - row.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[label])
