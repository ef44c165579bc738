"""Binary checkpoint format for :class:`MetaState`.

Layout (little-endian): magic ``MML1``; u32 array count; per array a u32
name length, UTF-8 name, u32 rank, u32 per dimension, then float64 values;
finally a u32 step count. Arrays appear as ``theta/*``, ``alpha/*``, then
``opt/*`` moments, then two ``meta/*`` scalars (head kind, dropout rate)
that the parameter shapes cannot encode.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .embedding import ArchConfig, ParamSet
from .heads import HEAD_KINDS
from .meta import MetaState

MAGIC = b"MML1"
_OPT = ("m_theta", "v_theta", "m_alpha", "v_alpha")


class CheckpointError(ValueError):
    pass


def _arrays(state: MetaState) -> list[tuple[str, np.ndarray]]:
    out = [(f"theta/{k}", v) for k, v in state.theta0.items()]
    out += [(f"alpha/{k}", v) for k, v in state.alpha.items()]
    for slot in _OPT:
        out += [(f"opt/{slot}/{k}", v) for k, v in getattr(state, slot).items()]
    out.append(("meta/head_kind", np.array([float(HEAD_KINDS.index(state.head_kind))])))
    out.append(("meta/dropout_rate", np.array([state.arch.dropout_rate])))
    return out


def dumps(state: MetaState) -> bytes:
    arrays = _arrays(state)
    parts = [MAGIC, struct.pack("<I", len(arrays))]
    for name, value in arrays:
        value = np.asarray(value, dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(value.tobytes(order="C"))
    parts.append(struct.pack("<I", state.step))
    return b"".join(parts)


def loads(data: bytes) -> MetaState:
    if data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError("truncated checkpoint")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", take(4))
        name = take(n).decode()
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(shape)) if rank else 1
        arrays[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    (step,) = struct.unpack("<I", take(4))
    if pos != len(data):
        raise CheckpointError("trailing bytes after step count")

    def group(prefix):
        return ParamSet({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})

    theta0 = group("theta/")
    if not len(theta0):
        raise CheckpointError("checkpoint has no theta arrays")
    layers = sorted({k.split("/")[0] for k in theta0})
    weights = [theta0[f"layer{i}/weight"].shape for i in range(len(layers))]
    arch = ArchConfig(
        input_dim=weights[0][0],
        hidden_dims=tuple(w[1] for w in weights[:-1]),
        embed_dim=weights[-1][1],
        dropout_rate=float(arrays["meta/dropout_rate"][0]),
    )
    head = HEAD_KINDS[int(arrays["meta/head_kind"][0])]
    return MetaState(theta0=theta0, alpha=group("alpha/"), head_kind=head, arch=arch,
                     **{slot: group(f"opt/{slot}/") for slot in _OPT}, step=step)


def save_checkpoint(state: MetaState, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(state))
    os.replace(tmp, path)


def load_checkpoint(path) -> MetaState:
    return loads(Path(path).read_bytes())
