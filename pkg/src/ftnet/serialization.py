"""Binary containers for layers, networks and GAN checkpoints.

All integers are little-endian ``uint32``; all numbers are little-endian
float64 in canonical (column-major / first-index-fastest) order. JSON headers
are UTF-8, written with sorted keys and no whitespace so that equal models
serialize to equal bytes. See ``docs/formats.md`` for the full layout.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .network import DenseLayer, Layer, Network
from .tensor_layer import Activation, TensorLayer

LAYER_MAGIC = b"FTLY"
NETWORK_MAGIC = b"FTNT"
CHECKPOINT_MAGIC = b"FTCK"
VERSION = 1

_U32 = struct.Struct("<I")


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _f64(a: np.ndarray) -> bytes:
    return np.asarray(a, dtype="<f8").reshape(-1, order="F").tobytes()


class _Reader:
    def __init__(self, buf: bytes, offset: int = 0):
        self.buf = memoryview(buf)
        self.pos = offset

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise FormatError(f"truncated data: wanted {n} bytes at offset {self.pos}")
        chunk = bytes(self.buf[self.pos:self.pos + n])
        self.pos += n
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def magic(self, expected: bytes):
        got = self.take(len(expected))
        if got != expected:
            raise FormatError(f"bad magic {got!r}, expected {expected!r}")

    def header(self) -> dict:
        try:
            obj = json.loads(self.take(self.u32()).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"unreadable header: {exc}") from None
        if not isinstance(obj, dict):
            raise FormatError("header is not a JSON object")
        return obj

    def array(self, shape: tuple[int, ...]) -> np.ndarray:
        n = math.prod(shape)
        flat = np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)
        return flat.reshape(shape, order="F")


# -- layers -----------------------------------------------------------------

def layer_to_bytes(layer: Layer) -> bytes:
    kind = "tensor" if isinstance(layer, TensorLayer) else "dense"
    header = {
        "kind": kind,
        "order": len(layer.in_shape),
        "in": list(layer.in_shape),
        "out": list(layer.out_shape),
        "activation": layer.activation.to_dict(),
    }
    head = _dumps(header)
    body = b"".join(_f64(p) for p in layer.params())
    return LAYER_MAGIC + _U32.pack(len(head)) + head + body


def _read_layer(r: _Reader) -> Layer:
    r.magic(LAYER_MAGIC)
    h = r.header()
    try:
        kind, ins, outs = h["kind"], tuple(h["in"]), tuple(h["out"])
        activation = Activation.parse(h["activation"])
        if h["order"] != len(ins) or len(ins) != len(outs):
            raise FormatError(f"inconsistent layer header {h}")
        if not all(isinstance(d, int) and d >= 1 for d in ins + outs):
            raise FormatError(f"invalid extents in layer header {h}")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"invalid layer header {h}: {exc}") from None
    if kind == "tensor":
        weights = [r.array((j, i)) for i, j in zip(ins, outs)]
        return TensorLayer(weights, r.array(outs), activation)
    if kind == "dense":
        if len(ins) != 1:
            raise FormatError("dense layers have order 1")
        weight = r.array((outs[0], ins[0]))
        return DenseLayer(weight, r.array(outs), activation)
    raise FormatError(f"unknown layer kind {kind!r}")


def layer_from_bytes(buf: bytes) -> Layer:
    r = _Reader(buf)
    layer = _read_layer(r)
    if r.pos != len(r.buf):
        raise FormatError(f"{len(r.buf) - r.pos} trailing bytes after layer record")
    return layer


# -- networks ---------------------------------------------------------------

def network_manifest(net: Network) -> dict:
    layers = [{"kind": "tensor" if isinstance(l, TensorLayer) else "dense",
               "in": list(l.in_shape), "out": list(l.out_shape)} for l in net.layers]
    reshapes = [{"after": k, "from": list(a.out_shape), "to": list(b.in_shape)}
                for k, (a, b) in enumerate(zip(net.layers, net.layers[1:]))
                if a.out_shape != b.in_shape]
    return {"layers": layers, "reshapes": reshapes}


def network_to_bytes(net: Network) -> bytes:
    head = _dumps(network_manifest(net))
    out = [NETWORK_MAGIC, _U32.pack(VERSION), _U32.pack(len(head)), head]
    out += [layer_to_bytes(l) for l in net.layers]
    return b"".join(out)


def _read_network(r: _Reader) -> Network:
    r.magic(NETWORK_MAGIC)
    if (v := r.u32()) != VERSION:
        raise FormatError(f"unsupported network container version {v}")
    manifest = r.header()
    entries = manifest.get("layers")
    if not isinstance(entries, list) or not entries:
        raise FormatError("network manifest lists no layers")
    layers = []
    for k, entry in enumerate(entries):
        layer = _read_layer(r)
        kind = "tensor" if isinstance(layer, TensorLayer) else "dense"
        if entry != {"kind": kind, "in": list(layer.in_shape), "out": list(layer.out_shape)}:
            raise FormatError(f"layer {k} disagrees with the manifest")
        layers.append(layer)
    try:
        return Network(layers)
    except ValueError as exc:
        raise FormatError(f"layers do not chain: {exc}") from None


def network_from_bytes(buf: bytes) -> Network:
    r = _Reader(buf)
    net = _read_network(r)
    if r.pos != len(r.buf):
        raise FormatError(f"{len(r.buf) - r.pos} trailing bytes after network container")
    return net


# -- checkpoints ------------------------------------------------------------

def checkpoint_to_bytes(generator: Network, discriminator: Network, meta: dict) -> bytes:
    head = _dumps(meta)
    return b"".join([CHECKPOINT_MAGIC, _U32.pack(VERSION), _U32.pack(len(head)), head,
                     network_to_bytes(generator), network_to_bytes(discriminator)])


def checkpoint_from_bytes(buf: bytes) -> tuple[Network, Network, dict]:
    r = _Reader(buf)
    r.magic(CHECKPOINT_MAGIC)
    if (v := r.u32()) != VERSION:
        raise FormatError(f"unsupported checkpoint version {v}")
    meta = r.header()
    generator = _read_network(r)
    discriminator = _read_network(r)
    if r.pos != len(r.buf):
        raise FormatError(f"{len(r.buf) - r.pos} trailing bytes after checkpoint")
    return generator, discriminator, meta


def save_checkpoint(path, generator: Network, discriminator: Network, meta: dict) -> None:
    Path(path).write_bytes(checkpoint_to_bytes(generator, discriminator, meta))


def load_checkpoint(path) -> tuple[Network, Network, dict]:
    return checkpoint_from_bytes(Path(path).read_bytes())
