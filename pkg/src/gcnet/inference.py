"""Early-exit evaluation: gating policies, transmission accounting, ROC.

A sample walks the split network part by part.  At each boundary whose gate
is active under the policy, the gate head's softmax probability of the
sample being interesting is compared against the threshold: strictly below
stops the sample (ties pass through).  Stopped samples incur no transmission
or compute past their exit boundary.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError
from .network import Network, NetworkPart, split_at_gc
from .objective import ClassMapping
from .tensor import DTYPE

POLICY_MODES = ("independent", "incremental", "one_gate_only")

# Bits per transmitted value in the reference storage format.
DEFAULT_WORD_BITS = 32


@dataclass(frozen=True)
class GatePolicy:
    """Which gates are active during inference and how they decide.

    ``position`` is the index of a gate in GC-layer order (0-based).  In
    independent and one_gate_only modes only that gate is active; in
    incremental mode every gate up to and including it is active, and gates
    after it are disabled.
    """

    mode: str = "incremental"
    position: Optional[int] = None
    threshold: float = 0.5

    def __post_init__(self):
        if self.mode not in POLICY_MODES:
            raise ConfigError(f"unknown gating mode {self.mode!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must be in [0,1], got {self.threshold}")

    def active_gates(self, num_gates: int) -> set[int]:
        if num_gates == 0:
            return set()
        pos = self.position if self.position is not None else num_gates - 1
        if not 0 <= pos < num_gates:
            raise ConfigError(f"gate position {pos} out of range (have {num_gates})")
        if self.mode == "incremental":
            return set(range(pos + 1))
        return {pos}


@dataclass
class InferenceTrace:
    """Per-sample record: exit point, boundary traffic, prediction, scores."""

    exit_gate: Optional[int]
    transmitted_elements: list[int]
    transmitted_bits: list[float]
    prediction: Optional[int]
    gate_scores: dict[int, float] = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        return {
            "exit_gate": self.exit_gate,
            "transmitted_elements": self.transmitted_elements,
            "transmitted_bits": self.transmitted_bits,
            "prediction": self.prediction,
            "gate_scores": {str(k): v for k, v in self.gate_scores.items()},
        }


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def interesting_probability(gate_logits: np.ndarray) -> np.ndarray:
    """P(sample is interesting) = 1 - P(background class 0)."""
    return 1.0 - softmax_rows(gate_logits)[:, 0]


def sparse_encoded_bits(m: int, p: float, n_bits: int = DEFAULT_WORD_BITS) -> float:
    """Bits to index-encode the nonzero dims of an m-vector with density p.

    ``n_bits`` (the dense word width) cancels out of the encoded size; it is
    accepted so the signature matches compression_rate.
    """
    if m < 2:
        raise ConfigError(f"sparse encoding needs m >= 2, got {m}")
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"density must be in [0,1], got {p}")
    return p * m * math.ceil(math.log2(m))


def compression_rate(m: int, p: float, n_bits: int = DEFAULT_WORD_BITS) -> float:
    """Dense bits over sparse-encoded bits: n_bits / (p * ceil(log2 m))."""
    if m < 2:
        raise ConfigError(f"sparse encoding needs m >= 2, got {m}")
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"density must be in [0,1], got {p}")
    if p == 0.0:
        return math.inf
    return n_bits / (p * math.ceil(math.log2(m)))


def _boundary_traffic(parts: list[NetworkPart]) -> tuple[list[int], list[float]]:
    """Per-boundary (elements, sparse bits) for one crossing sample."""
    elements, bits = [], []
    for part in parts[:-1]:
        nz = part.gc.nonzero_dims()
        m = part.gc.m
        index_bits = math.ceil(math.log2(m)) if m >= 2 else 1
        elements.append(nz)
        bits.append(float(nz * index_bits))
    return elements, bits


def infer_batch(
    net: Network, x: np.ndarray, policy: GatePolicy,
    parts: Optional[list[NetworkPart]] = None,
) -> list[InferenceTrace]:
    """Run early-exit inference; traces are returned in sample order."""
    parts = parts if parts is not None else split_at_gc(net)
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim == 1:
        x = x[None, :]
    num_gates = len(parts) - 1
    active = policy.active_gates(num_gates)
    elems_full, bits_full = _boundary_traffic(parts)

    n = x.shape[0]
    traces: list[Optional[InferenceTrace]] = [None] * n
    alive = np.arange(n)
    h = x
    scores_acc: dict[int, dict[int, float]] = {i: {} for i in range(n)}
    for gate_idx, part in enumerate(parts[:-1]):
        h, gate_logits = part.forward_np(h)
        if gate_idx in active:
            probs = interesting_probability(gate_logits)
            stop = probs < policy.threshold
        else:
            probs = None
            stop = np.zeros(len(alive), dtype=bool)
        if probs is not None:
            for row, sample in enumerate(alive):
                scores_acc[int(sample)][gate_idx] = float(probs[row])
        if stop.any():
            for sample in alive[stop]:
                traces[int(sample)] = InferenceTrace(
                    exit_gate=gate_idx,
                    transmitted_elements=elems_full[:gate_idx] + [0] * (num_gates - gate_idx),
                    transmitted_bits=bits_full[:gate_idx] + [0.0] * (num_gates - gate_idx),
                    prediction=None,
                    gate_scores=scores_acc[int(sample)],
                )
            h = h[~stop]
            alive = alive[~stop]
    logits, _ = parts[-1].forward_np(h)
    preds = logits.argmax(axis=1)
    for row, sample in enumerate(alive):
        traces[int(sample)] = InferenceTrace(
            exit_gate=None,
            transmitted_elements=list(elems_full),
            transmitted_bits=list(bits_full),
            prediction=int(preds[row]),
            gate_scores=scores_acc[int(sample)],
        )
    assert all(t is not None for t in traces)
    return traces


def infer(net: Network, x_row: np.ndarray, policy: GatePolicy) -> InferenceTrace:
    return infer_batch(net, np.asarray(x_row)[None, :], policy)[0]


def gated_predictions(traces: list[InferenceTrace], background: int = 0) -> np.ndarray:
    """Predictions with early-stopped samples classified as background."""
    return np.asarray(
        [background if t.prediction is None else t.prediction for t in traces],
        dtype=np.int64,
    )


def traces_to_jsonl(traces: list[InferenceTrace]) -> str:
    return "\n".join(json.dumps(t.to_json_obj(), sort_keys=True) for t in traces) + "\n"


# -- ROC ------------------------------------------------------------------------


@dataclass
class RocResult:
    points: list[tuple[float, float]]  # (FPR, TPR), monotone in threshold
    auc: float
    thresholds: list[float]

    def to_csv(self) -> str:
        lines = ["threshold,fpr,tpr"]
        for t, (fpr, tpr) in zip(self.thresholds, self.points):
            lines.append(f"{t!r},{fpr!r},{tpr!r}")
        return "\n".join(lines) + "\n"


def gate_scores(net: Network, x: np.ndarray, gate_index: int) -> np.ndarray:
    """Interesting-probability of every sample at one gate (no early exit)."""
    parts = split_at_gc(net)
    if not 0 <= gate_index < len(parts) - 1:
        raise ConfigError(f"gate index {gate_index} out of range")
    h = np.asarray(x, dtype=DTYPE)
    for part in parts[: gate_index + 1]:
        h, logits = part.forward_np(h)
    return interesting_probability(logits).astype(np.float64)


def roc_sweep(
    net: Network,
    x: np.ndarray,
    y: np.ndarray,
    gate_index: int,
    thresholds: Optional[list[float]] = None,
    omega: Optional[ClassMapping] = None,
) -> RocResult:
    """ROC of one gate as a detector of interesting samples.

    With ``thresholds=None`` every distinct score is a threshold, which makes
    the trapezoid AUC exactly the pairwise-comparison probability (ties get
    half credit).
    """
    omega = omega or ClassMapping.binary_background(net.num_classes)
    labels = omega.apply(y)
    positive = labels > 0
    n_pos, n_neg = int(positive.sum()), int((~positive).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC undefined: dataset contains a single gate class")
    scores = gate_scores(net, x, gate_index)

    if thresholds is None:
        cut = np.unique(scores)[::-1]
    else:
        cut = np.asarray(sorted(thresholds, reverse=True), dtype=np.float64)
    points = []
    used = []
    for t in cut:
        sel = scores >= t
        tpr = float((sel & positive).sum() / n_pos)
        fpr = float((sel & ~positive).sum() / n_neg)
        points.append((fpr, tpr))
        used.append(float(t))
    # close the curve at both ends for the trapezoid integral
    xs = np.array([0.0] + [p[0] for p in points] + [1.0])
    ys = np.array([0.0] + [p[1] for p in points] + [1.0])
    auc = float(np.trapezoid(ys, xs))
    return RocResult(points=points, auc=auc, thresholds=used)
