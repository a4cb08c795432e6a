"""Versioned binary checkpoints.

Byte layout (all integers little-endian)::

    magic        8 bytes   b"IBBRLCK\\x00"
    version      u32       currently 1
    config_len   u32       then config_len bytes of UTF-8 config text
    n_blocks     u32
    per block:
      name_len   u16       then name_len bytes of UTF-8 name
      ndim       u8        then ndim x u64 dimensions
      payload    prod(dims) x float64 (little-endian, row-major)
    sha256       32 bytes  digest of every preceding byte

Blocks are written in sorted name order so equal models give equal bytes.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .bbrl import ActorCritic, FeatureExtractor, ReactiveNetwork
from .introspection import VaeModel, WiringVariant
from .nn_core import DenseLayer
from .toy_env import Behaviour

MAGIC = b"IBBRLCK\x00"
FORMAT_VERSION = 1
_DIGEST = 32


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Checkpoint:
    version: int
    config_text: str
    blocks: dict[str, np.ndarray]


def encode_checkpoint(blocks: Mapping[str, np.ndarray], config_text: str = "") -> bytes:
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    config = config_text.encode("utf-8")
    parts += [struct.pack("<I", len(config)), config, struct.pack("<I", len(blocks))]
    for name in sorted(blocks):
        array = np.asarray(blocks[name], dtype=np.float64)
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF or array.ndim > 0xFF:
            raise CheckpointError(f"block {name!r} cannot be encoded")
        parts += [struct.pack("<H", len(encoded)), encoded, struct.pack("<B", array.ndim)]
        parts += [struct.pack("<Q", d) for d in array.shape]
        parts.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC) + 4 + _DIGEST or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch: file is truncated or corrupted")

    pos = len(MAGIC)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(body):
            raise CheckpointError("checkpoint body ends early")
        chunk = body[pos:pos + n]
        pos += n
        return chunk

    (version,) = struct.unpack("<I", take(4))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    (config_len,) = struct.unpack("<I", take(4))
    config_text = take(config_len).decode("utf-8")
    (count,) = struct.unpack("<I", take(4))
    blocks = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = tuple(struct.unpack("<Q", take(8))[0] for _ in range(ndim))
        n = int(np.prod(shape, dtype=np.int64))
        blocks[name] = np.frombuffer(take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
    if pos != len(body):
        raise CheckpointError("trailing bytes after the last block")
    return Checkpoint(version, config_text, blocks)


def save_checkpoint(blocks: Mapping[str, np.ndarray], path: str | Path, config_text: str = "") -> None:
    Path(path).write_bytes(encode_checkpoint(blocks, config_text))


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return decode_checkpoint(data)


# --------------------------------------------------------------------------
# model <-> blocks
# --------------------------------------------------------------------------

def _layer(blocks, prefix: str) -> DenseLayer:
    try:
        return DenseLayer(blocks[f"{prefix}.weights"].copy(), blocks[f"{prefix}.biases"].copy())
    except KeyError:
        raise CheckpointError(f"checkpoint has no block {prefix!r}") from None


def stack_blocks(fe: FeatureExtractor, rn: ReactiveNetwork) -> dict[str, np.ndarray]:
    blocks = {**fe.parameters(), **rn.parameters()}
    blocks["reactive.max_step"] = np.array([rn.max_step])
    blocks["reactive.completed_stages"] = np.array([int(b) for b in rn.completed_stages], dtype=np.float64)
    return blocks


def stack_from_blocks(blocks) -> tuple[FeatureExtractor, ReactiveNetwork]:
    fe = FeatureExtractor(_layer(blocks, "fe.layer1"), _layer(blocks, "fe.layer2"))
    heads = {b: (_layer(blocks, f"reactive.{b.label}.hidden"), _layer(blocks, f"reactive.{b.label}.out"))
             for b in Behaviour}
    max_step = float(blocks["reactive.max_step"][0]) if "reactive.max_step" in blocks else 0.05
    stages = [Behaviour(int(i)) for i in blocks.get("reactive.completed_stages", np.zeros(0))]
    return fe, ReactiveNetwork(heads, max_step, stages)


def vae_blocks(vae: VaeModel) -> dict[str, np.ndarray]:
    blocks = dict(vae.parameters())
    blocks["vae.input_shift"] = vae.input_shift
    blocks["vae.input_scale"] = vae.input_scale
    return blocks


def vae_from_blocks(blocks) -> VaeModel:
    try:
        return VaeModel.from_parameters(blocks)
    except KeyError as exc:
        raise CheckpointError(f"checkpoint has no block {exc.args[0]!r}") from None


def ac_blocks(ac: ActorCritic) -> dict[str, np.ndarray]:
    blocks = dict(ac.parameters())
    blocks["ac.input_shift"] = ac.input_shift
    blocks["ac.input_scale"] = ac.input_scale
    return blocks


def ac_from_blocks(blocks, variant: WiringVariant) -> ActorCritic:
    return ActorCritic(
        _layer(blocks, "ac.trunk"), _layer(blocks, "ac.actor"), _layer(blocks, "ac.critic"),
        WiringVariant(variant),
        blocks.get("ac.input_shift"), blocks.get("ac.input_scale"),
    )
