"""Binary weight files for the detector (magic NPMD) and embedder (NPFW).

Layout, little-endian throughout:
  magic: 4 bytes | version: u16 | meta_len: u32 | meta: UTF-8 JSON |
  n_tensors: u16 | per tensor:
    name_len: u16 | name | dtype: u8 (0 = f32, 1 = q8) |
    scale: f32 | zero: f32 | ndim: u8 | dims: u32 each | payload
"""

import json
import struct

import numpy as np

from .errors import WeightsFormatError

DETECTOR_MAGIC = b"NPMD"
EMBEDDER_MAGIC = b"NPFW"
VERSION = 1

DTYPE_F32 = 0
DTYPE_Q8 = 1


def save_tensors(magic: bytes, tensors: dict[str, np.ndarray], meta: dict,
                 quantize: bool = False) -> bytes:
    from .detector import quantize_tensor  # local import to avoid a cycle

    out = [magic, struct.pack("<H", VERSION)]
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    out.append(struct.pack("<I", len(meta_bytes)))
    out.append(meta_bytes)
    out.append(struct.pack("<H", len(tensors)))
    for name in sorted(tensors):
        x = np.asarray(tensors[name], dtype=np.float32)
        nb = name.encode()
        if quantize:
            q, scale, zero = quantize_tensor(x)
            dtype, payload = DTYPE_Q8, q.tobytes()
        else:
            dtype, scale, zero = DTYPE_F32, 1.0, 0.0
            payload = x.astype("<f4").tobytes()
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(struct.pack("<Bff B", dtype, scale, zero, x.ndim))
        out.append(struct.pack(f"<{x.ndim}I", *x.shape))
        out.append(payload)
    return b"".join(out)


def load_tensors(data: bytes, magic: bytes) -> tuple[dict[str, np.ndarray], dict, bool]:
    """Returns (tensors, meta, was_quantized)."""
    if len(data) < 12 or data[:4] != magic:
        raise WeightsFormatError(f"bad magic, expected {magic!r}")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VERSION:
        raise WeightsFormatError(f"unsupported version {version}")
    (meta_len,) = struct.unpack_from("<I", data, 6)
    pos = 10
    try:
        meta = json.loads(data[pos : pos + meta_len].decode())
        pos += meta_len
        (n_tensors,) = struct.unpack_from("<H", data, pos)
        pos += 2
        tensors = {}
        any_q8 = False
        for _ in range(n_tensors):
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + name_len].decode()
            pos += name_len
            dtype, scale, zero, ndim = struct.unpack_from("<Bff B", data, pos)
            pos += struct.calcsize("<Bff B")
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            if dtype == DTYPE_F32:
                raw = np.frombuffer(data, dtype="<f4", count=count, offset=pos)
                pos += 4 * count
                tensors[name] = raw.reshape(shape).astype(np.float32)
            elif dtype == DTYPE_Q8:
                any_q8 = True
                raw = np.frombuffer(data, dtype=np.uint8, count=count, offset=pos)
                pos += count
                tensors[name] = (raw.astype(np.float32) * scale + zero).reshape(shape)
            else:
                raise WeightsFormatError(f"unknown tensor dtype {dtype}")
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise WeightsFormatError(f"truncated or corrupt weight file: {e}") from e
    return tensors, meta, any_q8


def save_detector(w, quantize: bool = False) -> bytes:
    from dataclasses import asdict

    meta = {"topology": asdict(w.topology), "quantized": bool(quantize or w.quantized)}
    return save_tensors(DETECTOR_MAGIC, w.tensors, meta, quantize=quantize)


def load_detector(data: bytes):
    from .detector import DetectorTopology, DetectorWeights

    tensors, meta, any_q8 = load_tensors(data, DETECTOR_MAGIC)
    topo = DetectorTopology(**meta["topology"])
    return DetectorWeights(topology=topo, tensors=tensors, quantized=any_q8 or meta.get("quantized", False))


def save_embedder(w, quantize: bool = False) -> bytes:
    from dataclasses import asdict

    meta = {"topology": asdict(w.topology)}
    return save_tensors(EMBEDDER_MAGIC, w.tensors, meta, quantize=quantize)


def load_embedder(data: bytes):
    from .embedder import EmbedderTopology, EmbedderWeights

    tensors, meta, _ = load_tensors(data, EMBEDDER_MAGIC)
    topo_meta = dict(meta["topology"])
    topo_meta["conv_channels"] = tuple(topo_meta["conv_channels"])
    topo = EmbedderTopology(**topo_meta)
    return EmbedderWeights(topology=topo, tensors=tensors)
