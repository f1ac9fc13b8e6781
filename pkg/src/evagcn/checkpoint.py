"""Binary checkpoint container.

Layout (all little-endian)::

    b"AGCK"  u32 format_version
    u32 tensor_count, then per tensor:
        u16 name_len, name (utf-8), u8 ndim, u32 dims[ndim], f64 data[prod(dims)]
    u64 adam_step  u32 epoch
    u32 rng_len, rng state (JSON of the numpy bit generator state)
    u32 meta_len, meta (JSON: model layout and full run config)
    32-byte config digest

Tensor names: ``param/<name>``, ``buffer/<name>``, ``adam.m/<name>``, ``adam.v/<name>``.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .agcn import AgcnLayerParams, AgcnParams, GmmKernelParams
from .model import ModelParams

MAGIC = b"AGCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _pack_tensor(name, arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    nb = name.encode()
    out = struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
    out += struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.tobytes()
    return out


def save_checkpoint(path, model, optimizer, rng, epoch, config, digest):
    tensors = {}
    for k, v in model.named_parameters().items():
        tensors[f"param/{k}"] = v
    for k, v in model.named_buffers().items():
        tensors[f"buffer/{k}"] = v
    for k in model.named_parameters():
        if k in optimizer.m:
            tensors[f"adam.m/{k}"] = optimizer.m[k]
            tensors[f"adam.v/{k}"] = optimizer.v[k]
    meta = {
        "num_classes": model.num_classes,
        "dropout": model.dropout,
        "readout": model.readout,
        "activation": model.activation,
        "adam": {"beta1": optimizer.beta1, "beta2": optimizer.beta2, "eps": optimizer.eps,
                 "lr": optimizer.lr},
        "config": config.to_dict() if config is not None else None,
    }
    rng_state = json.dumps(rng.bit_generator.state, sort_keys=True).encode() if rng is not None else b""
    meta_b = json.dumps(meta, sort_keys=True).encode()
    if len(digest) != 32:
        raise CheckpointError("config digest must be 32 bytes")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(tensors))]
    parts += [_pack_tensor(k, v) for k, v in tensors.items()]
    parts += [struct.pack("<QI", optimizer.step_count, epoch),
              struct.pack("<I", len(rng_state)), rng_state,
              struct.pack("<I", len(meta_b)), meta_b, bytes(digest)]
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint at offset {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _agcn_from(tensors, prefix):
    blocks = []
    b = 0
    while f"{prefix}{b}.mu" in tensors:
        kernel = GmmKernelParams(tensors[f"{prefix}{b}.mu"], tensors[f"{prefix}{b}.log_var"],
                                 tensors[f"{prefix}{b}.alpha"])
        blocks.append(AgcnLayerParams(kernel, tensors[f"{prefix}{b}.theta"]))
        b += 1
    return AgcnParams(blocks).validate() if blocks else None


def load_checkpoint(path):
    """Returns a dict with model, adam state, rng, epoch, meta and digest."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        n = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
    step, epoch = r.unpack("<QI")
    (rlen,) = r.unpack("<I")
    rng_state = json.loads(r.take(rlen)) if rlen else None
    (mlen,) = r.unpack("<I")
    meta = json.loads(r.take(mlen))
    digest = r.take(32)
    if r.pos != len(r.data):
        raise CheckpointError(f"{path}: {len(r.data) - r.pos} trailing bytes")

    def group(prefix):
        return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}

    params, buffers = group("param/"), group("buffer/")
    head = {k[len("head."):]: v for k, v in params.items() if k.startswith("head.")}
    bufs = {k[len("head."):]: v for k, v in buffers.items()}
    model = ModelParams(_agcn_from(params, "point."), _agcn_from(params, "voxel."), head, bufs,
                        meta["num_classes"], meta["dropout"], meta["readout"], meta["activation"])
    rng = None
    if rng_state is not None:
        rng = np.random.Generator(getattr(np.random, rng_state["bit_generator"])())
        rng.bit_generator.state = rng_state
    return {"model": model, "adam_m": group("adam.m/"), "adam_v": group("adam.v/"),
            "adam_step": step, "epoch": epoch, "rng": rng, "meta": meta, "digest": digest}
