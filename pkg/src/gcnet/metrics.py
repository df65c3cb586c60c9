"""Gate and compression metrics.

Confusion convention, pinned once for the whole package: the gate's
positive event is STOPPING a sample, and a sample is actually positive for
the gate when it is background (it should be stopped).  So:

    TP  stopped background        FP  stopped interesting
    FN  passed background         TN  passed interesting

Under this convention the negative pass-through rate (background samples
mistakenly passed) is FN/(FN+TP) and the positive lost rate (interesting
samples mistakenly stopped) is FP/(FP+TN).  Rates with a zero denominator
are errors to be reported as absent values, never as 0 or NaN.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UndefinedMetricError
from .network import Network, binary_mask, predict
from .inference import InferenceTrace, gate_scores
from .tensor import Tensor


@dataclass(frozen=True)
class GateConfusion:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise UndefinedMetricError(f"negative count {name}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_decisions(cls, stopped, background) -> "GateConfusion":
        """Build counts from per-sample stop decisions and background flags."""
        stopped = np.asarray(stopped, dtype=bool)
        background = np.asarray(background, dtype=bool)
        if stopped.shape != background.shape:
            raise UndefinedMetricError("decision and label arrays differ in length")
        return cls(
            tp=int((stopped & background).sum()),
            fp=int((stopped & ~background).sum()),
            tn=int((~stopped & ~background).sum()),
            fn=int((~stopped & background).sum()),
        )


def stop_rate(c: GateConfusion) -> float:
    """Fraction of all samples the gate stopped."""
    if c.total == 0:
        raise UndefinedMetricError("stop rate of an empty confusion")
    return (c.tp + c.fp) / c.total


def negative_pass_through_rate(c: GateConfusion) -> float:
    """Fraction of background samples mistakenly allowed through."""
    if c.fn + c.tp == 0:
        raise UndefinedMetricError("no background samples; pass-through rate undefined")
    return c.fn / (c.fn + c.tp)


def positive_lost_rate(c: GateConfusion) -> float:
    """Fraction of interesting samples mistakenly stopped."""
    if c.fp + c.tn == 0:
        raise UndefinedMetricError("no interesting samples; lost rate undefined")
    return c.fp / (c.fp + c.tn)


def dropout_rate(phi) -> float:
    """Fraction of mask dimensions the compression layer zeroes out."""
    arr = phi.data if isinstance(phi, Tensor) else np.asarray(phi)
    if arr.size == 0:
        raise UndefinedMetricError("dropout rate of an empty mask")
    mask = binary_mask(arr.astype(np.float32))
    return 1.0 - float(mask.sum()) / mask.size


def transmission_ratio(stop_rate_value: float, dropout_rate_value: float) -> float:
    """Fraction of boundary data still transmitted after gating and masking."""
    for v in (stop_rate_value, dropout_rate_value):
        if not 0.0 <= v <= 1.0:
            raise UndefinedMetricError(f"rate {v} outside [0,1]")
    return (1.0 - stop_rate_value) * (1.0 - dropout_rate_value)


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise UndefinedMetricError("prediction/label length mismatch")
    if predictions.size == 0:
        raise UndefinedMetricError("accuracy of an empty set")
    return float((predictions == labels).mean())


def stop_decisions(
    net: Network, x: np.ndarray, gate_index: int, threshold: float = 0.5
) -> np.ndarray:
    """Would this gate, acting alone, stop each sample?"""
    scores = gate_scores(net, x, gate_index)
    return scores < threshold


def negative_correction_rate(
    net: Network,
    x: np.ndarray,
    y: np.ndarray,
    gate_index: int,
    threshold: float = 0.5,
    background: int = 0,
) -> float:
    """Background samples the gate stops that the ungated model would have
    misclassified as non-background, relative to all background samples.

    The ungated forward runs the same network with every gate disabled, so
    the comparison model is exactly the deployed trunk.
    """
    y = np.asarray(y)
    is_background = y == background
    n_background = int(is_background.sum())
    if n_background == 0:
        raise UndefinedMetricError("no background samples; correction rate undefined")
    stopped = stop_decisions(net, x, gate_index, threshold)
    full_pred = predict(net, x)
    corrected = int((is_background & stopped & (full_pred != background)).sum())
    return corrected / n_background


def confusion_at_gate(
    net: Network,
    x: np.ndarray,
    y: np.ndarray,
    gate_index: int,
    threshold: float = 0.5,
    background: int = 0,
) -> GateConfusion:
    stopped = stop_decisions(net, x, gate_index, threshold)
    return GateConfusion.from_decisions(stopped, np.asarray(y) == background)


def early_stopping_fraction(traces: list[InferenceTrace], background_flags) -> float:
    """Fraction of background samples stopped before the head (any gate)."""
    background_flags = np.asarray(background_flags, dtype=bool)
    if len(traces) != len(background_flags):
        raise UndefinedMetricError("trace/label length mismatch")
    n_neg = int(background_flags.sum())
    if n_neg == 0:
        raise UndefinedMetricError("no background samples; early stopping undefined")
    stopped = np.asarray([t.exit_gate is not None for t in traces])
    return float((stopped & background_flags).sum()) / n_neg
