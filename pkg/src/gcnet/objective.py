"""The composite training objective: gate terms, mask sparsity pressure,
final prediction loss, and a global parameter penalty.

The classification weights are normalized: each gate carries a weight
``alpha_i`` and the final prediction loss carries ``eta = 1 - sum(alpha_i)``,
so the classification weights always sum to exactly 1.  The sparsity and
penalty weights (``beta_i``, ``xi``) are unconstrained regularizers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor

DEFAULT_XI = 1e-4


@dataclass(frozen=True)
class LossWeights:
    alphas: tuple[float, ...]
    betas: tuple[float, ...]
    xi: float = DEFAULT_XI

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if len(self.alphas) != len(self.betas):
            raise ConfigError(
                f"{len(self.alphas)} alphas vs {len(self.betas)} betas"
            )
        for a in self.alphas:
            if not 0.0 <= a < 1.0:
                raise ConfigError(f"alpha must be in [0,1), got {a}")
        for b in self.betas:
            if b < 0.0:
                raise ConfigError(f"beta must be >= 0, got {b}")
        if self.xi < 0.0:
            raise ConfigError(f"xi must be >= 0, got {self.xi}")
        if self.eta <= 0.0:
            raise ConfigError(
                f"sum of alphas is {sum(self.alphas)}; the final-loss weight would be <= 0"
            )

    @property
    def eta(self) -> float:
        return 1.0 - sum(self.alphas)

    @classmethod
    def for_network(cls, net, xi: float = DEFAULT_XI) -> "LossWeights":
        """Pick up per-gate alpha/beta from the network's GC configs."""
        return cls(
            alphas=tuple(gc.alpha for gc in net.gc_layers),
            betas=tuple(gc.beta for gc in net.gc_layers),
            xi=xi,
        )


class ClassMapping:
    """Total mapping from dataset labels to coarser labels.

    Used in two places: remapping raw dataset labels for the always-on
    protocol, and collapsing head labels to the gate's stop/propagate
    classes (background is class 0 everywhere).
    """

    def __init__(self, table: dict[int, int]):
        if not table:
            raise ConfigError("class mapping table is empty")
        self.table = {int(k): int(v) for k, v in table.items()}
        image = sorted(set(self.table.values()))
        if image != list(range(len(image))):
            raise ConfigError(f"mapping image must be contiguous from 0, got {image}")
        self._lookup = np.full(max(self.table) + 1, -1, dtype=np.int64)
        for k, v in self.table.items():
            self._lookup[k] = v

    @property
    def image_size(self) -> int:
        return int(self._lookup.max()) + 1

    @classmethod
    def binary_background(cls, num_classes: int) -> "ClassMapping":
        """Label 0 stays background (0); every other label is interesting (1)."""
        if num_classes < 2:
            raise ConfigError("binary mapping needs at least 2 classes")
        return cls({0: 0, **{k: 1 for k in range(1, num_classes)}})

    @classmethod
    def identity(cls, num_classes: int) -> "ClassMapping":
        return cls({k: k for k in range(num_classes)})

    def apply(self, labels) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= len(self._lookup)):
            raise ConfigError(
                f"label {labels.max()} outside mapping domain [0,{len(self._lookup)})"
            )
        mapped = self._lookup[labels]
        if labels.size and (mapped < 0).any():
            missing = int(labels[mapped < 0][0])
            raise ConfigError(f"label {missing} missing from class mapping")
        return mapped

    def to_dict(self) -> dict:
        return {str(k): v for k, v in sorted(self.table.items())}

    def __eq__(self, other):
        return isinstance(other, ClassMapping) and self.table == other.table


def gate_loss(gate_logits: Tensor, labels, omega: ClassMapping) -> Tensor:
    """Cross entropy of the gate head against the collapsed labels."""
    targets = omega.apply(labels)
    if gate_logits.data.shape[1] != omega.image_size:
        raise ConfigError(
            f"gate head emits {gate_logits.data.shape[1]} logits but the "
            f"mapping image has {omega.image_size} classes"
        )
    return T.softmax_cross_entropy(gate_logits, targets)


def trans_cost(phi: Tensor) -> Tensor:
    """Mean squared clamped mask weight; width-independent sparsity pressure."""
    clipped = T.relu1(phi)
    return T.scale(T.l2_norm_sq(clipped), 1.0 / phi.data.size)


def parameter_penalty(params: list[Tensor]) -> Tensor:
    """Mean squared value over all trainable parameter entries."""
    if not params:
        raise ConfigError("penalty over an empty parameter list")
    total = sum(p.data.size for p in params)
    return T.scale(T.add_n([T.l2_norm_sq(p) for p in params]), 1.0 / total)


@dataclass
class ObjectiveTerms:
    """The assembled objective plus its logged components (plain floats)."""

    total: Tensor
    gate_losses: list[float] = field(default_factory=list)
    trans_costs: list[float] = field(default_factory=list)
    final_loss: float = 0.0
    penalty: float = 0.0


def total_objective(
    gate_losses: list[Tensor],
    trans_costs: list[Tensor],
    final_loss: Tensor,
    params: list[Tensor],
    w: LossWeights,
) -> ObjectiveTerms:
    """Weighted sum of all objective terms.

    Zero-weighted terms are left out of the graph entirely, so they
    contribute neither gradients nor wasted backward work; their values are
    still reported for the history log.
    """
    if len(gate_losses) != len(w.alphas) or len(trans_costs) != len(w.betas):
        raise ConfigError(
            f"{len(gate_losses)} gate terms / {len(trans_costs)} trans terms "
            f"vs weights for {len(w.alphas)} gates"
        )
    pieces = []
    for a, g in zip(w.alphas, gate_losses):
        if a != 0.0:
            pieces.append(T.scale(g, a))
    for b, t in zip(w.betas, trans_costs):
        if b != 0.0:
            pieces.append(T.scale(t, b))
    pieces.append(T.scale(final_loss, w.eta))
    penalty = None
    if w.xi != 0.0:
        penalty = parameter_penalty(params)
        pieces.append(T.scale(penalty, w.xi))
    total = T.add_n(pieces)
    return ObjectiveTerms(
        total=total,
        gate_losses=[g.item() for g in gate_losses],
        trans_costs=[t.item() for t in trans_costs],
        final_loss=final_loss.item(),
        penalty=penalty.item() if penalty is not None else 0.0,
    )
