"""Optimization loop: Adam, the training modes, and the two-stage schedule.

Desk-scale defaults are 60 epochs, batch 128, fixed learning rate 0.01.
The reference full-scale settings (batch 512, 200 epochs) are kept as a
documented preset.  Training is deterministic given (config, seed, data):
shuffling and initialization draw from seed-derived substreams, and batches
run single-threaded.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import network as N
from . import objective as O
from . import tensor as T
from .errors import ConfigError, NumericError
from .network import Network, forward_train
from .tensor import DTYPE, Tensor

TRAIN_MODES = ("end_to_end", "two_stage", "gate_only", "compression_only")

# Abort threshold for the divergence guard.
DIVERGENCE_LIMIT = 1e4


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 128
    learning_rate: float = 0.01
    seed: int = 0
    mode: str = "end_to_end"
    two_stage_epochs: int = 1  # N epochs per switch in two_stage mode
    xi: float = O.DEFAULT_XI
    loss_weights: Optional[O.LossWeights] = None  # default: from the net's GC configs

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.mode not in TRAIN_MODES:
            raise ConfigError(f"unknown training mode {self.mode!r}")
        if self.mode == "two_stage":
            if self.two_stage_epochs < 1:
                raise ConfigError("two_stage_epochs must be >= 1")
            if self.epochs % self.two_stage_epochs != 0:
                raise ConfigError(
                    f"two_stage_epochs ({self.two_stage_epochs}) must divide "
                    f"epochs ({self.epochs})"
                )


# Reference settings used by the full-scale experiments.
FULL_SCALE_PRESET = TrainConfig(epochs=200, batch_size=512, learning_rate=0.01)


class Adam:
    """Adam over a fixed parameter list; first/second moments in float32."""

    def __init__(self, params: list[Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-7):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / DTYPE(bc1)
            v_hat = self.v[i] / DTYPE(bc2)
            p.data = p.data - DTYPE(self.lr) * m_hat / (np.sqrt(v_hat) + DTYPE(self.eps))

    def zero_grad(self):
        for p in self.params:
            p.grad = None


@dataclass
class TrainResult:
    net: Network
    history: list[dict] = field(default_factory=list)

    def history_columns(self) -> list[str]:
        positions = [gc.position for gc in self.net.gc_layers]
        cols = ["epoch", "total"]
        cols += [f"gate_loss_{p}" for p in positions]
        cols += [f"trans_cost_{p}" for p in positions]
        cols += ["final_loss", "penalty", "train_acc", "val_acc"]
        return cols

    def history_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.history_columns(), lineterminator="\n")
        writer.writeheader()
        for row in self.history:
            writer.writerow({k: row[k] for k in self.history_columns()})
        return buf.getvalue()

    def save_history(self, path) -> None:
        Path(path).write_text(self.history_csv())


def _accuracy(net: Network, x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return 0.0
    pred = N.predict(net, x)
    return float((pred == y).mean())


def _epoch_batches(n: int, batch_size: int, seed: int, epoch: int):
    order = np.random.default_rng(np.random.SeedSequence([seed, 2, epoch])).permutation(n)
    for start in range(0, n, batch_size):
        yield order[start: start + batch_size]


def _phase_params(net: Network, phase: str) -> list[Tensor]:
    gate_side = [t for gc in net.gc_layers for t in (gc.phi, gc.gate_w, gc.gate_b)]
    if phase == "gate":
        return gate_side
    trunk = [t for pair in net.block_params for t in pair]
    return trunk


def train(
    net: Network,
    train_x: np.ndarray,
    train_y: np.ndarray,
    cfg: TrainConfig,
    val_x: Optional[np.ndarray] = None,
    val_y: Optional[np.ndarray] = None,
    omega: Optional[O.ClassMapping] = None,
) -> TrainResult:
    """Train ``net`` in place and return it with a per-epoch history.

    Modes:
      end_to_end        all terms, all parameters.
      gate_only         mask weights forced to all-ones and frozen.
      compression_only  gate weights zeroed out of the loss, gate heads frozen.
      two_stage         alternate N epochs of gate-side training (with a
                        stop-gradient at each GC boundary) and N epochs of
                        trunk/head training.
    """
    if cfg.mode != "end_to_end" and not net.gc_layers:
        raise ConfigError(f"mode {cfg.mode!r} requires at least one GC layer")
    train_x = np.asarray(train_x, dtype=DTYPE)
    train_y = np.asarray(train_y, dtype=np.int64)
    omega = omega or O.ClassMapping.binary_background(net.num_classes)
    weights = cfg.loss_weights or O.LossWeights.for_network(net, cfg.xi)
    if len(weights.alphas) != len(net.gc_layers):
        raise ConfigError(
            f"loss weights cover {len(weights.alphas)} gates, net has {len(net.gc_layers)}"
        )

    if cfg.mode == "gate_only":
        for gc in net.gc_layers:
            gc.phi.data = np.ones_like(gc.phi.data)
    if cfg.mode == "compression_only":
        weights = O.LossWeights(
            alphas=tuple(0.0 for _ in weights.alphas), betas=weights.betas, xi=weights.xi
        )

    all_params = [t for _, t in net.trainable_params()]
    if cfg.mode == "gate_only":
        phis = {id(gc.phi) for gc in net.gc_layers}
        opt_params = [p for p in all_params if id(p) not in phis]
    elif cfg.mode == "compression_only":
        gate_heads = {id(t) for gc in net.gc_layers for t in (gc.gate_w, gc.gate_b)}
        opt_params = [p for p in all_params if id(p) not in gate_heads]
    else:
        opt_params = all_params

    if cfg.mode == "two_stage":
        optimizers = {
            "gate": Adam(_phase_params(net, "gate"), cfg.learning_rate),
            "trunk": Adam(_phase_params(net, "trunk"), cfg.learning_rate),
        }
    else:
        optimizers = {"all": Adam(opt_params, cfg.learning_rate)}

    result = TrainResult(net=net)
    positions = net.gate_positions()
    n = len(train_x)
    for epoch in range(cfg.epochs):
        if cfg.mode == "two_stage":
            phase = "gate" if (epoch // cfg.two_stage_epochs) % 2 == 0 else "trunk"
        else:
            phase = "all"
        opt = optimizers[phase]
        sums = {"total": 0.0, "final_loss": 0.0, "penalty": 0.0}
        gate_sums = {p: 0.0 for p in positions}
        trans_sums = {p: 0.0 for p in positions}
        batches = 0
        for idx in _epoch_batches(n, cfg.batch_size, cfg.seed, epoch):
            xb, yb = train_x[idx], train_y[idx]
            fwd = forward_train(net, xb, detach_trunk_at_gates=(phase == "gate"))
            gate_terms = [
                O.gate_loss(fwd.gate_logits[p], yb, omega) for p in positions
            ]
            trans_terms = [O.trans_cost(fwd.phi[p]) for p in positions]
            final = T.softmax_cross_entropy(fwd.final_logits, yb)
            terms = _phase_objective(
                phase, gate_terms, trans_terms, final, opt_params, weights
            )
            total = terms.total.item()
            if not np.isfinite(total) or total > DIVERGENCE_LIMIT:
                raise NumericError(f"training diverged at epoch {epoch} (loss={total})")
            opt.zero_grad()
            terms.total.backward()
            opt.step()
            sums["total"] += total
            sums["final_loss"] += terms.final_loss
            sums["penalty"] += terms.penalty
            for p, g, t in zip(positions, terms.gate_losses, terms.trans_costs):
                gate_sums[p] += g
                trans_sums[p] += t
            batches += 1
        row = {
            "epoch": epoch,
            "total": sums["total"] / batches,
            "final_loss": sums["final_loss"] / batches,
            "penalty": sums["penalty"] / batches,
            "train_acc": _accuracy(net, train_x, train_y),
            "val_acc": _accuracy(net, val_x, val_y) if val_x is not None else "",
        }
        for p in positions:
            row[f"gate_loss_{p}"] = gate_sums[p] / batches
            row[f"trans_cost_{p}"] = trans_sums[p] / batches
        result.history.append(row)
    return result


def _phase_objective(phase, gate_terms, trans_terms, final, params, weights):
    """Assemble the objective, detaching the terms the phase must not train.

    Two-stage phases keep the real weights so logged totals stay comparable;
    the detached terms contribute their values but no gradients.  The
    parameter penalty applies only in the trunk phase.
    """
    if phase == "gate":
        w = O.LossWeights(alphas=weights.alphas, betas=weights.betas, xi=0.0)
        return O.total_objective(gate_terms, trans_terms, final.detach(), params, w)
    if phase == "trunk":
        return O.total_objective(
            [g.detach() for g in gate_terms],
            [t.detach() for t in trans_terms],
            final,
            params,
            weights,
        )
    return O.total_objective(gate_terms, trans_terms, final, params, weights)
