"""Block-based networks with gate/compression layers at block boundaries.

A network is a chain of dense or residual-dense blocks ending in a single
classifier head.  A GC layer inserted after trunk block ``p`` multiplies the
block output by a learned binary mask and feeds a small gate head that
scores whether the sample is worth propagating.  Splitting the network at
its GC boundaries yields parts whose sequential composition reproduces the
monolithic forward pass bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, NumericError
from .tensor import DTYPE, Tensor

BLOCK_KINDS = ("dense", "residual_dense", "classifier_head")
ACTIVATIONS = ("relu", "none")
GATE_TAPS = ("pre_compression", "post_compression")

MODEL_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class BlockSpec:
    """One network block: a dense layer, optionally residual, or the head."""

    kind: str
    width: int
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ConfigError(f"unknown block kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.width < 1:
            raise ConfigError(f"block width must be positive, got {self.width}")


@dataclass(frozen=True)
class GCConfig:
    """Per-layer gate/compression settings supplied at insertion time."""

    alpha: float = 0.5
    beta: float = 0.1
    gate_tap: str = "post_compression"
    gate_pool: int = 4
    gate_classes: int = 2
    phi_init: str = "near_half"  # near_half | all_pass

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError(f"alpha must be in [0,1), got {self.alpha}")
        if self.beta < 0.0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.gate_tap not in GATE_TAPS:
            raise ConfigError(f"unknown gate_tap {self.gate_tap!r}")
        if self.phi_init not in ("near_half", "all_pass"):
            raise ConfigError(f"unknown phi_init {self.phi_init!r}")
        if self.gate_classes < 2:
            raise ConfigError("gate head needs at least 2 classes")


@dataclass
class GCLayerState:
    """Trainable state of one GC layer: mask weights plus the gate head."""

    position: int  # sits after this many trunk blocks (1-based)
    fraction: float
    config: GCConfig
    phi: Tensor
    gate_w: Tensor
    gate_b: Tensor

    @property
    def m(self) -> int:
        return self.phi.data.shape[0]

    @property
    def alpha(self) -> float:
        return self.config.alpha

    @property
    def beta(self) -> float:
        return self.config.beta

    def mask_array(self) -> np.ndarray:
        """Binarized mask as a plain array (no graph)."""
        return binary_mask(self.phi.data)

    def nonzero_dims(self) -> int:
        return int(self.mask_array().sum())


def binary_mask(phi: np.ndarray) -> np.ndarray:
    """Clamp to [0,1] then threshold strictly above 1/2; exactly {0,1} valued."""
    clipped = np.clip(phi, DTYPE(0), DTYPE(1))
    return (clipped > DTYPE(T.BINARIZE_THRESHOLD)).astype(DTYPE)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def _init_dense(seed: int, *key: int, fan_in: int, fan_out: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return _rng(seed, *key).uniform(-bound, bound, size=(fan_in, fan_out)).astype(DTYPE)


@dataclass
class Network:
    """A concrete network: block specs, their parameters, and GC layers.

    The architecture is fixed after construction; training mutates parameter
    values in place but never the structure.
    """

    input_width: int
    num_classes: int
    seed: int
    blocks: list[BlockSpec]
    block_params: list[tuple[Tensor, Tensor]]
    gc_layers: list[GCLayerState] = field(default_factory=list)

    @property
    def trunk_blocks(self) -> list[BlockSpec]:
        return self.blocks[:-1]

    @property
    def num_trunk_blocks(self) -> int:
        return len(self.blocks) - 1

    def gc_at(self, position: int) -> Optional[GCLayerState]:
        for gc in self.gc_layers:
            if gc.position == position:
                return gc
        return None

    def gate_positions(self) -> list[int]:
        return [gc.position for gc in self.gc_layers]

    def width_after_block(self, position: int) -> int:
        return self.blocks[position - 1].width

    def trainable_params(self) -> list[tuple[str, Tensor]]:
        named = []
        for i, (w, b) in enumerate(self.block_params):
            named.append((f"block{i}.w", w))
            named.append((f"block{i}.b", b))
        for gc in self.gc_layers:
            named.append((f"gc{gc.position}.phi", gc.phi))
            named.append((f"gc{gc.position}.gate_w", gc.gate_w))
            named.append((f"gc{gc.position}.gate_b", gc.gate_b))
        return named

    def clone(self) -> "Network":
        """Deep copy: independent parameter storage, same architecture."""
        params = [
            (Tensor(w.data.copy(), requires_grad=True), Tensor(b.data.copy(), requires_grad=True))
            for w, b in self.block_params
        ]
        gcs = [
            GCLayerState(
                position=gc.position,
                fraction=gc.fraction,
                config=gc.config,
                phi=Tensor(gc.phi.data.copy(), requires_grad=True),
                gate_w=Tensor(gc.gate_w.data.copy(), requires_grad=True),
                gate_b=Tensor(gc.gate_b.data.copy(), requires_grad=True),
            )
            for gc in self.gc_layers
        ]
        return Network(
            input_width=self.input_width,
            num_classes=self.num_classes,
            seed=self.seed,
            blocks=list(self.blocks),
            block_params=params,
            gc_layers=gcs,
        )

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "kind": "gcnet-model",
            "input_width": self.input_width,
            "num_classes": self.num_classes,
            "seed": self.seed,
            "blocks": [
                {"kind": b.kind, "width": b.width, "activation": b.activation}
                for b in self.blocks
            ],
            "block_params": [
                {"w": w.data.tolist(), "b": b.data.tolist()}
                for w, b in self.block_params
            ],
            "gc_layers": [
                {
                    "position": gc.position,
                    "fraction": gc.fraction,
                    "alpha": gc.config.alpha,
                    "beta": gc.config.beta,
                    "gate_tap": gc.config.gate_tap,
                    "gate_pool": gc.config.gate_pool,
                    "gate_classes": gc.config.gate_classes,
                    "phi_init": gc.config.phi_init,
                    "phi": gc.phi.data.tolist(),
                    "gate_w": gc.gate_w.data.tolist(),
                    "gate_b": gc.gate_b.data.tolist(),
                }
                for gc in self.gc_layers
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Network":
        if doc.get("kind") != "gcnet-model":
            raise ConfigError("not a model document (missing kind=gcnet-model)")
        blocks = [
            BlockSpec(kind=b["kind"], width=b["width"], activation=b["activation"])
            for b in doc["blocks"]
        ]
        params = [
            (
                Tensor(np.asarray(p["w"], dtype=DTYPE), requires_grad=True),
                Tensor(np.asarray(p["b"], dtype=DTYPE), requires_grad=True),
            )
            for p in doc["block_params"]
        ]
        gcs = []
        for g in doc["gc_layers"]:
            cfg = GCConfig(
                alpha=g["alpha"],
                beta=g["beta"],
                gate_tap=g["gate_tap"],
                gate_pool=g["gate_pool"],
                gate_classes=g["gate_classes"],
                phi_init=g.get("phi_init", "near_half"),
            )
            gcs.append(
                GCLayerState(
                    position=g["position"],
                    fraction=g["fraction"],
                    config=cfg,
                    phi=Tensor(np.asarray(g["phi"], dtype=DTYPE), requires_grad=True),
                    gate_w=Tensor(np.asarray(g["gate_w"], dtype=DTYPE), requires_grad=True),
                    gate_b=Tensor(np.asarray(g["gate_b"], dtype=DTYPE), requires_grad=True),
                )
            )
        return cls(
            input_width=doc["input_width"],
            num_classes=doc["num_classes"],
            seed=doc["seed"],
            blocks=blocks,
            block_params=params,
            gc_layers=gcs,
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "Network":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_network(
    input_width: int,
    widths: list[int],
    num_classes: int,
    seed: int = 0,
    kind: str = "dense",
    activation: str = "relu",
) -> Network:
    """Construct a trunk of ``widths`` blocks plus a classifier head.

    Parameter init streams are keyed by (seed, block index), so two networks
    built from the same seed share trunk weights regardless of which GC
    layers are later inserted.
    """
    if not widths:
        raise ConfigError("network needs at least one trunk block")
    if kind == "residual_dense":
        prev = input_width
        for w in widths:
            if w != prev:
                raise ConfigError(
                    f"residual block requires input width == output width ({prev} != {w})"
                )
            prev = w
    blocks = [BlockSpec(kind=kind, width=w, activation=activation) for w in widths]
    blocks.append(BlockSpec(kind="classifier_head", width=num_classes, activation="none"))
    params = []
    fan_in = input_width
    for i, spec in enumerate(blocks):
        w = Tensor(
            _init_dense(seed, 0, i, 0, fan_in=fan_in, fan_out=spec.width),
            requires_grad=True,
        )
        b = Tensor(np.zeros(spec.width, dtype=DTYPE), requires_grad=True)
        params.append((w, b))
        fan_in = spec.width
    return Network(
        input_width=input_width,
        num_classes=num_classes,
        seed=seed,
        blocks=blocks,
        block_params=params,
        gc_layers=[],
    )


def gc_position_for_fraction(fraction: float, num_trunk_blocks: int) -> int:
    """Nearest block boundary to a fractional depth, clamped away from the ends."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"GC fraction must be in (0,1), got {fraction}")
    pos = int(math.floor(fraction * num_trunk_blocks + 0.5))
    return max(1, min(num_trunk_blocks - 1, pos))


def insert_gc(net: Network, fraction: float, config: GCConfig = GCConfig()) -> Network:
    """Return a copy of ``net`` with a GC layer at the given fractional depth."""
    if net.num_trunk_blocks < 2:
        raise ConfigError("need at least 2 trunk blocks to place a GC layer")
    position = gc_position_for_fraction(fraction, net.num_trunk_blocks)
    if any(gc.position == position for gc in net.gc_layers):
        raise ConfigError(f"duplicate GC position {position}")
    out = net.clone()
    m = out.width_after_block(position)
    pool = config.gate_pool if config.gate_pool >= 1 and m % config.gate_pool == 0 else 1
    if pool != config.gate_pool:
        config = replace(config, gate_pool=pool)
    if config.phi_init == "all_pass":
        phi = np.ones(m, dtype=DTYPE)
    else:
        phi = _rng(net.seed, 1, position, 0).uniform(0.45, 0.55, size=m).astype(DTYPE)
    gate_w = _init_dense(
        net.seed, 1, position, 1, fan_in=m // pool, fan_out=config.gate_classes
    )
    gate_b = np.zeros(config.gate_classes, dtype=DTYPE)
    state = GCLayerState(
        position=position,
        fraction=fraction,
        config=config,
        phi=Tensor(phi, requires_grad=True),
        gate_w=Tensor(gate_w, requires_grad=True),
        gate_b=Tensor(gate_b, requires_grad=True),
    )
    out.gc_layers = sorted(out.gc_layers + [state], key=lambda g: g.position)
    return out


# -- forward passes -------------------------------------------------------------


@dataclass
class ForwardResult:
    """Everything the objective needs from one training forward pass."""

    gate_logits: dict[int, Tensor]  # keyed by GC position
    final_logits: Tensor
    phi: dict[int, Tensor]
    masks: dict[int, np.ndarray]


def _apply_block(spec: BlockSpec, w: Tensor, b: Tensor, x: Tensor) -> Tensor:
    z = T.add(T.matmul(x, w), b)
    h = T.relu(z) if spec.activation == "relu" else z
    if spec.kind == "residual_dense":
        h = T.add(h, x)
    return h


def _gate_head(gc: GCLayerState, gate_in: Tensor) -> Tensor:
    pooled = T.mean_pool(gate_in, gc.config.gate_pool)
    return T.add(T.matmul(pooled, gc.gate_w), gc.gate_b)


def forward_train(
    net: Network, x_batch, detach_trunk_at_gates: bool = False
) -> ForwardResult:
    """Full forward pass; every sample propagates end to end (no early exit).

    ``detach_trunk_at_gates`` cuts the graph at each GC boundary so gate-side
    gradients cannot reach earlier trunk blocks (two-stage training barrier).
    """
    x = x_batch if isinstance(x_batch, Tensor) else Tensor(x_batch)
    if x.data.ndim != 2 or x.data.shape[1] != net.input_width:
        raise DimensionError(
            f"input shape {x.data.shape} incompatible with input width {net.input_width}"
        )
    gate_logits: dict[int, Tensor] = {}
    phi: dict[int, Tensor] = {}
    masks: dict[int, np.ndarray] = {}
    h = x
    for i, spec in enumerate(net.trunk_blocks):
        w, b = net.block_params[i]
        try:
            h = _apply_block(spec, w, b, h)
        except NumericError as exc:
            raise NumericError(f"block {i}: {exc}") from exc
        gc = net.gc_at(i + 1)
        if gc is not None:
            trunk_out = h.detach() if detach_trunk_at_gates else h
            mask = T.binarize_ste(T.relu1(gc.phi))
            a = T.mul(trunk_out, mask)
            gate_in = a if gc.config.gate_tap == "post_compression" else trunk_out
            gate_logits[gc.position] = _gate_head(gc, gate_in)
            phi[gc.position] = gc.phi
            masks[gc.position] = mask.data
            # the trunk continues through the compressed activation built
            # from the un-detached output, so the final loss trains everything
            if detach_trunk_at_gates:
                a = T.mul(h, mask)
            h = a
    head_w, head_b = net.block_params[-1]
    try:
        final_logits = _apply_block(net.blocks[-1], head_w, head_b, h)
    except NumericError as exc:
        raise NumericError(f"block {len(net.blocks) - 1} (head): {exc}") from exc
    return ForwardResult(
        gate_logits=gate_logits, final_logits=final_logits, phi=phi, masks=masks
    )


def forward_logits(net: Network, x_batch: np.ndarray) -> np.ndarray:
    """Ungated end-to-end logits without building a graph (all gates ignored)."""
    res = forward_train(net, Tensor(np.asarray(x_batch, dtype=DTYPE)))
    return res.final_logits.data


def predict(net: Network, x_batch: np.ndarray) -> np.ndarray:
    return forward_logits(net, x_batch).argmax(axis=1)


# -- splitting -------------------------------------------------------------------


@dataclass
class NetworkPart:
    """A contiguous run of blocks, optionally closed by a GC layer."""

    index: int
    block_specs: list[BlockSpec]
    block_params: list[tuple[Tensor, Tensor]]
    gc: Optional[GCLayerState]

    def forward_np(self, x: np.ndarray) -> tuple[np.ndarray, Optional[np.ndarray]]:
        """Run this part on a plain array; returns (output, gate logits or None).

        Mirrors the op order of the graph-based forward exactly, so composed
        parts reproduce the monolithic output bit for bit.
        """
        h = np.asarray(x, dtype=DTYPE)
        for spec, (w, b) in zip(self.block_specs, self.block_params):
            z = h @ w.data + b.data
            out = np.maximum(z, DTYPE(0)) if spec.activation == "relu" else z
            h = out + h if spec.kind == "residual_dense" else out
        if self.gc is None:
            return h, None
        mask = binary_mask(self.gc.phi.data)
        a = h * mask
        gate_in = a if self.gc.config.gate_tap == "post_compression" else h
        pool = self.gc.config.gate_pool
        pooled = gate_in.reshape(gate_in.shape[0], gate_in.shape[1] // pool, pool).mean(
            axis=2
        )
        logits = pooled @ self.gc.gate_w.data + self.gc.gate_b.data
        return a, logits

    def macs_per_sample(self) -> int:
        """Multiply-accumulate count for one sample through this part."""
        total = 0
        for w, _ in self.block_params:
            total += w.data.shape[0] * w.data.shape[1]
        if self.gc is not None:
            total += self.gc.m  # mask multiply
            total += (self.gc.m // self.gc.config.gate_pool) * self.gc.config.gate_classes
        return total


def split_at_gc(net: Network) -> list[NetworkPart]:
    """Split into parts at GC boundaries; composition replays the forward pass."""
    if not net.gc_layers:
        raise ConfigError("cannot split a network with no GC layers")
    parts = []
    start = 0
    for idx, gc in enumerate(net.gc_layers):
        parts.append(
            NetworkPart(
                index=idx,
                block_specs=net.blocks[start: gc.position],
                block_params=net.block_params[start: gc.position],
                gc=gc,
            )
        )
        start = gc.position
    parts.append(
        NetworkPart(
            index=len(net.gc_layers),
            block_specs=net.blocks[start:],
            block_params=net.block_params[start:],
            gc=None,
        )
    )
    return parts


def run_parts(parts: list[NetworkPart], x: np.ndarray) -> np.ndarray:
    """Invoke the parts sequentially and return the final logits."""
    h = np.asarray(x, dtype=DTYPE)
    for part in parts:
        h, _ = part.forward_np(h)
    return h
