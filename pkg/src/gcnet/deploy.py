"""One-bit mask export for deployment.

Mask weights are stored in float32 during research, but the forward pass
only ever sees their binarized values, so a deploy model stores each mask
as a packed bitmask (little-endian bit order within bytes) plus a sparse
index encoding (fixed-width indices of the pass-through dimensions, packed
little-endian).  Reloading reproduces forward outputs and gate decisions
bit for bit.
"""

from __future__ import annotations

import base64
import json
import math
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .inference import DEFAULT_WORD_BITS
from .network import Network, binary_mask
from .tensor import DTYPE

DEPLOY_SCHEMA_VERSION = 1


def pack_mask(mask: np.ndarray) -> bytes:
    """Pack a {0,1} vector into bytes, bit i at byte i//8, bit position i%8."""
    arr = np.asarray(mask)
    if not np.isin(arr, (0, 1)).all():
        raise ConfigError("mask must be exactly {0,1} valued")
    return np.packbits(arr.astype(np.uint8), bitorder="little").tobytes()


def unpack_mask(data: bytes, m: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=m, bitorder="little")
    return bits.astype(DTYPE)


def pack_uints(values, bit_width: int) -> bytes:
    """Pack fixed-width unsigned ints into a little-endian bit stream."""
    if bit_width < 1:
        raise ConfigError(f"bit width must be >= 1, got {bit_width}")
    acc = 0
    for i, v in enumerate(values):
        v = int(v)
        if not 0 <= v < (1 << bit_width):
            raise ConfigError(f"value {v} does not fit in {bit_width} bits")
        acc |= v << (i * bit_width)
    nbytes = (len(values) * bit_width + 7) // 8
    return acc.to_bytes(nbytes, "little")


def unpack_uints(data: bytes, count: int, bit_width: int) -> list[int]:
    acc = int.from_bytes(data, "little")
    mask = (1 << bit_width) - 1
    return [(acc >> (i * bit_width)) & mask for i in range(count)]


def index_bit_width(m: int) -> int:
    return math.ceil(math.log2(m)) if m >= 2 else 1


def export_deploy(net: Network) -> dict:
    """Deploy document: the model with each mask stored in 1-bit form."""
    doc = net.to_dict()
    doc["kind"] = "gcnet-deploy-model"
    doc["deploy_schema_version"] = DEPLOY_SCHEMA_VERSION
    doc["mask_bit_order"] = "little-endian within bytes"
    for g in doc["gc_layers"]:
        phi = np.asarray(g.pop("phi"), dtype=DTYPE)
        mask = binary_mask(phi)
        m = mask.size
        nonzero = np.flatnonzero(mask)
        bits = index_bit_width(m)
        g["deploy_mask"] = {
            "m": int(m),
            "nonzero": int(nonzero.size),
            "mask_b64": base64.b64encode(pack_mask(mask)).decode("ascii"),
            "index_bits": bits,
            "indices_b64": base64.b64encode(pack_uints(nonzero, bits)).decode("ascii"),
            "dense_bits": int(DEFAULT_WORD_BITS * m),
            "bitmask_bits": int(m),
            "sparse_bits": int(nonzero.size * bits),
        }
    return doc


def save_deploy(net: Network, path) -> dict:
    doc = export_deploy(net)
    Path(path).write_text(json.dumps(doc, sort_keys=True))
    return doc


def load_deploy(path) -> Network:
    """Rebuild a network whose mask weights are the exported {0,1} bits."""
    doc = json.loads(Path(path).read_text())
    if doc.get("kind") != "gcnet-deploy-model":
        raise DataError(f"{path}: not a deploy model document")
    for g in doc["gc_layers"]:
        dm = g.pop("deploy_mask")
        mask = unpack_mask(base64.b64decode(dm["mask_b64"]), dm["m"])
        indices = unpack_uints(
            base64.b64decode(dm["indices_b64"]), dm["nonzero"], dm["index_bits"]
        )
        if sorted(int(i) for i in indices) != [int(i) for i in np.flatnonzero(mask)]:
            raise DataError(f"{path}: bitmask and sparse indices disagree")
        g["phi"] = mask.tolist()
    doc["kind"] = "gcnet-model"
    return Network.from_dict(doc)


def deploy_size_report(doc: dict) -> dict:
    """Aggregate per-mask sizes from a deploy document."""
    layers = []
    for g in doc["gc_layers"]:
        dm = g["deploy_mask"]
        density = dm["nonzero"] / dm["m"] if dm["m"] else 0.0
        layers.append(
            {
                "position": g["position"],
                "m": dm["m"],
                "density": density,
                "dense_bits": dm["dense_bits"],
                "bitmask_bits": dm["bitmask_bits"],
                "sparse_bits": dm["sparse_bits"],
            }
        )
    return {
        "layers": layers,
        "total_dense_bits": sum(l["dense_bits"] for l in layers),
        "total_bitmask_bits": sum(l["bitmask_bits"] for l in layers),
        "total_sparse_bits": sum(l["sparse_bits"] for l in layers),
    }
