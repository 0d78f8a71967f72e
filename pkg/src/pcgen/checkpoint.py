"""Binary checkpoints.

Layout (little-endian)::

    b"PCGEN" | u32 version
    u32 n | n bytes UTF-8 "key=value" lines      (training config)
    u64 epoch | u64 batch | u64 step
    u32 count | parameter blocks                  (name, shape, f64 data)
    u32 count | optimizer blocks                  (name, u64 step, 4 x f64 hyper, m, v)
    u32 count | prior blocks                      (gmm means / stds / weights)
    u32 n | n bytes JSON                          (bit generator state)
    u32 crc32 of everything above
"""
from __future__ import annotations

import io
import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .priors import PriorSpec
from .tensor import AdamState
from .training import ModelBundle, build_bundle, config_from_items, config_items

MAGIC = b"PCGEN"
VERSION = 1


class CheckpointError(ValueError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


# ---------------------------------------------------------------------------
# primitive writers / readers
# ---------------------------------------------------------------------------

def _w_bytes(out, b: bytes):
    out.write(struct.pack("<I", len(b)))
    out.write(b)


def _w_array(out, name: str, a: np.ndarray):
    a = np.ascontiguousarray(a, dtype="<f8")
    _w_bytes(out, name.encode())
    out.write(struct.pack("<I", a.ndim))
    out.write(struct.pack(f"<{a.ndim}Q", *a.shape))
    out.write(a.tobytes())


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError("checkpoint is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def bytes_(self) -> bytes:
        (n,) = self.unpack("<I")
        return self.take(n)

    def array(self) -> tuple[str, np.ndarray]:
        name = self.bytes_().decode()
        (ndim,) = self.unpack("<I")
        shape = self.unpack(f"<{ndim}Q") if ndim else ()
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)
        return name, data.reshape(shape)


def _to_json(obj):
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": obj.tolist(), "dtype": str(obj.dtype)}
    if isinstance(obj, dict):
        return {k: _to_json(v) for k, v in obj.items()}
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _from_json(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            return np.array(obj["__ndarray__"], dtype=obj["dtype"])
        return {k: _from_json(v) for k, v in obj.items()}
    return obj


# ---------------------------------------------------------------------------
# save / load
# ---------------------------------------------------------------------------

def dumps(bundle: ModelBundle) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", VERSION))
    cfg_text = "".join(f"{k}={v}\n" for k, v in config_items(bundle.config))
    _w_bytes(out, cfg_text.encode("utf-8"))
    out.write(struct.pack("<3Q", bundle.epoch, bundle.batch, bundle.step))
    params = bundle.named_parameters()
    out.write(struct.pack("<I", len(params)))
    for name, p in params.items():
        _w_array(out, name, p.data)
    out.write(struct.pack("<I", len(bundle.optimizers)))
    for name, opt in bundle.optimizers.items():
        s = opt.state
        _w_bytes(out, name.encode())
        out.write(struct.pack("<Q4d", s.step, s.alpha, s.beta1, s.beta2, s.eps))
        _w_array(out, "m", s.m)
        _w_array(out, "v", s.v)
    prior = bundle.prior
    blocks = {} if prior.kind != "gmm" else {"means": prior.means, "stds": prior.stds, "weights": prior.weights}
    out.write(struct.pack("<I", len(blocks)))
    for name, a in blocks.items():
        _w_array(out, name, a)
    _w_bytes(out, json.dumps(_to_json(bundle.rng.bit_generator.state), sort_keys=True).encode())
    body = out.getvalue()
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save(bundle: ModelBundle, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(bundle))
    os.replace(tmp, path)


def loads(buf: bytes) -> ModelBundle:
    if len(buf) < len(MAGIC) + 8:
        raise TruncatedError("checkpoint is truncated")
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", buf[len(MAGIC):len(MAGIC) + 4])
    if version != VERSION:
        raise VersionError(f"checkpoint format version {version}, expected {VERSION}")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ChecksumError("checkpoint checksum mismatch (corrupt or truncated file)")
    r = _Reader(body)
    r.take(len(MAGIC) + 4)
    items = {}
    for line in r.bytes_().decode("utf-8").splitlines():
        k, _, v = line.partition("=")
        items[k] = v
    cfg = config_from_items(items)
    epoch, batch, step = r.unpack("<3Q")
    params = dict(r.array() for _ in range(r.unpack("<I")[0]))
    opts = {}
    for _ in range(r.unpack("<I")[0]):
        name = r.bytes_().decode()
        st, alpha, b1, b2, eps = r.unpack("<Q4d")
        _, m = r.array()
        _, v = r.array()
        opts[name] = AdamState(m, v, st, alpha, b1, b2, eps)
    prior_blocks = dict(r.array() for _ in range(r.unpack("<I")[0]))
    rng_state = _from_json(json.loads(r.bytes_().decode()))
    if r.pos != len(body):
        raise CheckpointError("trailing bytes in checkpoint")

    prior = None
    if prior_blocks:
        prior = PriorSpec("gmm", cfg.latent_dim, means=prior_blocks["means"],
                          stds=prior_blocks["stds"], weights=prior_blocks["weights"])
    bundle = build_bundle(cfg, prior)
    named = bundle.named_parameters()
    if set(named) != set(params):
        raise CheckpointError(f"parameter blocks do not match the config: {sorted(set(named) ^ set(params))[:4]}")
    for k, p in named.items():
        if params[k].shape != p.shape:
            raise CheckpointError(f"{k}: stored shape {params[k].shape}, expected {p.shape}")
        p.data = params[k]
    if set(opts) != set(bundle.optimizers):
        raise CheckpointError("optimizer blocks do not match the config")
    for k, o in bundle.optimizers.items():
        if opts[k].m.shape != o.state.m.shape:
            raise CheckpointError(f"optimizer {k}: state size mismatch")
        o.state = opts[k]
    bundle.rng.bit_generator.state = rng_state
    bundle.epoch, bundle.batch, bundle.step = epoch, batch, step
    return bundle


def load(path) -> ModelBundle:
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    return loads(buf)
