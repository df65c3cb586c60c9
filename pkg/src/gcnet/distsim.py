"""Compute-island simulation: deploy split networks over a chain of
heterogeneous processors and account transmission and compute cost for a
sample stream.

Costs are abstract energy units with user-supplied coefficients.  An
early-stopped sample incurs no cost on any island or link past its exit
boundary.  Simulation is deterministic given (seed, plan, net, stream).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, synthetic_gaussians
from .errors import ConfigError, EquivalenceError
from .inference import DEFAULT_WORD_BITS, GatePolicy, infer_batch
from .network import Network, NetworkPart, forward_logits, run_parts, split_at_gc
from .tensor import DTYPE


@dataclass(frozen=True)
class Island:
    name: str
    per_mac_cost: float = 1.0
    active_power_weight: float = 0.0  # fixed cost per sample that wakes it


@dataclass(frozen=True)
class Link:
    per_element_cost: float = 10.0  # illustrative default: links dwarf compute
    per_bit_cost: float = 0.0


@dataclass
class IslandTopology:
    islands: list[Island]
    links: list[Link]

    def __post_init__(self):
        if len(self.links) != len(self.islands) - 1:
            raise ConfigError(
                f"{len(self.islands)} islands need {len(self.islands) - 1} links, "
                f"got {len(self.links)}"
            )

    @classmethod
    def uniform(cls, n: int, per_mac_cost=1.0, per_element_cost=10.0, per_bit_cost=0.0):
        return cls(
            islands=[Island(f"island{i}", per_mac_cost) for i in range(n)],
            links=[Link(per_element_cost, per_bit_cost) for _ in range(n - 1)],
        )

    def to_dict(self) -> dict:
        return {
            "islands": [
                {
                    "name": i.name,
                    "per_mac_cost": i.per_mac_cost,
                    "active_power_weight": i.active_power_weight,
                }
                for i in self.islands
            ],
            "links": [
                {"per_element_cost": l.per_element_cost, "per_bit_cost": l.per_bit_cost}
                for l in self.links
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "IslandTopology":
        return cls(
            islands=[
                Island(
                    name=i["name"],
                    per_mac_cost=i.get("per_mac_cost", 1.0),
                    active_power_weight=i.get("active_power_weight", 0.0),
                )
                for i in doc["islands"]
            ],
            links=[
                Link(
                    per_element_cost=l.get("per_element_cost", 10.0),
                    per_bit_cost=l.get("per_bit_cost", 0.0),
                )
                for l in doc["links"]
            ],
        )

    @classmethod
    def load(cls, path) -> "IslandTopology":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2))


@dataclass(frozen=True)
class StreamSpec:
    total: int
    ratio: tuple[int, int] = (1, 9)  # positive : negative
    source: str = "synthetic"

    def __post_init__(self):
        if self.total < 1:
            raise ConfigError(f"stream needs at least 1 sample, got {self.total}")
        pos, neg = self.ratio
        if pos < 0 or neg < 0 or pos + neg == 0:
            raise ConfigError(f"bad positive:negative ratio {self.ratio}")
        if self.source not in ("synthetic", "dataset"):
            raise ConfigError(f"unknown stream source {self.source!r}")


@dataclass
class DeploymentPlan:
    parts: list[NetworkPart]
    topology: IslandTopology

    @property
    def num_parts(self) -> int:
        return len(self.parts)


def assign(parts: list[NetworkPart], topology: IslandTopology) -> DeploymentPlan:
    """Map part i onto island i; counts must match exactly."""
    if len(parts) != len(topology.islands):
        raise ConfigError(
            f"{len(parts)} network parts cannot deploy on "
            f"{len(topology.islands)} islands"
        )
    return DeploymentPlan(parts=parts, topology=topology)


def stream_from_dataset(ds: Dataset, stream: StreamSpec, seed: int = 0) -> Dataset:
    """Label-stratified resample of ``ds`` hitting the requested ratio."""
    pos, neg = stream.ratio
    n_neg = round(stream.total * neg / (pos + neg))
    n_pos = stream.total - n_neg
    rng = np.random.default_rng(np.random.SeedSequence([seed, 5]))
    neg_pool = np.flatnonzero(ds.y == 0)
    pos_pool = np.flatnonzero(ds.y != 0)
    if n_neg > 0 and len(neg_pool) == 0:
        raise ConfigError("stream needs negatives but dataset has none")
    if n_pos > 0 and len(pos_pool) == 0:
        raise ConfigError("stream needs positives but dataset has none")
    picks = []
    if n_neg:
        picks.append(rng.choice(neg_pool, size=n_neg, replace=True))
    if n_pos:
        picks.append(rng.choice(pos_pool, size=n_pos, replace=True))
    order = rng.permutation(np.concatenate(picks))
    return ds.subset(order)


@dataclass
class BoundaryCost:
    samples_crossed: int
    elements: int
    sparse_bits: float
    dense_bits: float
    energy: float


@dataclass
class IslandCost:
    name: str
    samples: int
    macs: int
    energy: float


@dataclass
class CostReport:
    per_boundary: list[BoundaryCost]
    per_island: list[IslandCost]
    total_energy: float
    stream_size: int
    stopped: int = 0

    def to_dict(self) -> dict:
        return {
            "per_boundary": [
                {
                    "samples_crossed": b.samples_crossed,
                    "elements": b.elements,
                    "sparse_bits": b.sparse_bits,
                    "dense_bits": b.dense_bits,
                    "energy": b.energy,
                }
                for b in self.per_boundary
            ],
            "per_island": [
                {"name": i.name, "samples": i.samples, "macs": i.macs, "energy": i.energy}
                for i in self.per_island
            ],
            "total_energy": self.total_energy,
            "stream_size": self.stream_size,
            "stopped": self.stopped,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2))


def simulate_stream(
    plan: DeploymentPlan,
    net: Network,
    stream_x: np.ndarray,
    policy: GatePolicy,
) -> CostReport:
    """Run the stream through the deployed parts and tally energy.

    A sample that exits at gate i is processed by islands 0..i and crosses
    boundaries 0..i-1; everything downstream never sees it.
    """
    traces = infer_batch(net, stream_x, policy, parts=plan.parts)
    num_boundaries = len(plan.parts) - 1
    crossed = [0] * num_boundaries
    for t in traces:
        last = t.exit_gate if t.exit_gate is not None else num_boundaries
        for b in range(last):
            crossed[b] += 1
    per_boundary = []
    for b in range(num_boundaries):
        gc = plan.parts[b].gc
        elements_per = gc.nonzero_dims()
        m = gc.m
        elements = crossed[b] * elements_per
        sparse_bits = float(crossed[b] * elements_per * _index_bits(m))
        dense_bits = float(elements * DEFAULT_WORD_BITS)
        link = plan.topology.links[b]
        energy = link.per_element_cost * elements + link.per_bit_cost * sparse_bits
        per_boundary.append(
            BoundaryCost(
                samples_crossed=crossed[b],
                elements=elements,
                sparse_bits=sparse_bits,
                dense_bits=dense_bits,
                energy=energy,
            )
        )
    per_island = []
    for i, part in enumerate(plan.parts):
        samples = len(traces) if i == 0 else crossed[i - 1]
        macs = samples * part.macs_per_sample()
        island = plan.topology.islands[i]
        energy = island.per_mac_cost * macs + island.active_power_weight * samples
        per_island.append(
            IslandCost(name=island.name, samples=samples, macs=macs, energy=energy)
        )
    total = sum(b.energy for b in per_boundary) + sum(i.energy for i in per_island)
    return CostReport(
        per_boundary=per_boundary,
        per_island=per_island,
        total_energy=total,
        stream_size=len(traces),
        stopped=sum(1 for t in traces if t.exit_gate is not None),
    )


def _index_bits(m: int) -> int:
    return math.ceil(math.log2(m)) if m >= 2 else 1


@dataclass
class EquivalenceReport:
    samples: int
    max_abs_diff: float
    bitwise_identical: bool

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "max_abs_diff": self.max_abs_diff,
            "bitwise_identical": self.bitwise_identical,
        }


def equivalence_check(
    net: Network, parts: list[NetworkPart], samples: np.ndarray
) -> EquivalenceReport:
    """Monolithic vs part-composed forward must agree bit for bit."""
    samples = np.asarray(samples, dtype=DTYPE)
    mono = forward_logits(net, samples)
    split = run_parts(parts, samples)
    diff = np.abs(mono.astype(np.float64) - split.astype(np.float64))
    max_diff = float(diff.max()) if diff.size else 0.0
    identical = mono.shape == split.shape and bool((mono == split).all())
    if not identical:
        bad_rows = np.flatnonzero((mono != split).any(axis=1))
        first = int(bad_rows[0]) if bad_rows.size else -1
        raise EquivalenceError(
            f"distributed outputs diverge from monolithic at sample {first} "
            f"(max abs diff {max_diff})"
        )
    return EquivalenceReport(
        samples=len(samples), max_abs_diff=max_diff, bitwise_identical=identical
    )


def make_stream(
    stream: StreamSpec,
    width: int,
    num_classes: int = 2,
    seed: int = 0,
    dataset: Dataset | None = None,
) -> Dataset:
    """Materialize a sample stream from a dataset or the synthetic generator."""
    if stream.source == "dataset":
        if dataset is None:
            raise ConfigError("stream source 'dataset' requires a dataset")
        return stream_from_dataset(dataset, stream, seed)
    return synthetic_gaussians(
        samples=stream.total,
        width=width,
        num_classes=num_classes,
        ratio=stream.ratio,
        seed=seed,
    )
