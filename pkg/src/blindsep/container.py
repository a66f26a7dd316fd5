"""Binary model container: magic, version, metadata block, named float64 tensors.

Byte layout (all integers little-endian):

    offset  size  field
    0       4     magic "BSMC"
    4       4     format version (u32), currently 1
    8       4     metadata length M (u32)
    12      M     canonical JSON metadata (sorted keys, compact separators)
    ...     4     tensor count (u32)
    per tensor, in sorted name order:
            2     name length (u16), then name (utf-8)
            1     ndim (u8), then ndim x u32 dimensions
            8*n   float64 data, C order

Canonical JSON and sorted tensor order make save(load(x)) byte-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .network import NetworkParameters
from .speaker import GmmUbm, LdaProjection, TotalVariabilityModel

MAGIC = b"BSMC"
VERSION = 1


def save_container(path, kind: str, tensors: dict[str, np.ndarray], meta: dict) -> None:
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    meta_bytes = json.dumps({"kind": kind, **meta}, sort_keys=True,
                            separators=(",", ":")).encode()
    blob += struct.pack("<I", len(meta_bytes))
    blob += meta_bytes
    blob += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        encoded = name.encode()
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<I", dim)
        blob += arr.tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


def load_container(path) -> tuple[str, dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError("not a model container")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise ValueError(f"unsupported container version {version}")
    (meta_len,) = struct.unpack_from("<I", data, 8)
    offset = 12
    meta = json.loads(data[offset : offset + meta_len].decode())
    offset += meta_len
    (count,) = struct.unpack_from("<I", data, offset)
    offset += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset : offset + name_len].decode()
        offset += name_len
        (ndim,) = struct.unpack_from("<B", data, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        n_items = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=n_items, offset=offset)
        offset += 8 * n_items
        tensors[name] = arr.reshape(shape).copy()
    kind = meta.pop("kind")
    return kind, tensors, meta


def save_network(path, params: NetworkParameters) -> None:
    meta = {"n_freq": params.n_freq, "embed_dim": params.embed_dim,
            "hidden": params.hidden, "n_layers": params.n_layers,
            "n_speakers": params.n_speakers, "ivec_dim": params.ivec_dim,
            "extra": params.meta}
    save_container(path, "network", params.tensors, meta)


def load_network(path) -> NetworkParameters:
    kind, tensors, meta = load_container(path)
    if kind != "network":
        raise ValueError(f"expected a network container, got {kind}")
    return NetworkParameters(tensors=tensors, n_freq=meta["n_freq"],
                             embed_dim=meta["embed_dim"], hidden=meta["hidden"],
                             n_layers=meta["n_layers"], n_speakers=meta["n_speakers"],
                             ivec_dim=meta["ivec_dim"], meta=meta.get("extra", {}))


def save_ubm(path, ubm: GmmUbm, meta: dict | None = None) -> None:
    save_container(path, "ubm", {"weights": ubm.weights, "means": ubm.means,
                                 "variances": ubm.variances}, meta or {})


def load_ubm(path) -> GmmUbm:
    kind, tensors, _ = load_container(path)
    if kind != "ubm":
        raise ValueError(f"expected a ubm container, got {kind}")
    return GmmUbm(weights=tensors["weights"], means=tensors["means"],
                  variances=tensors["variances"])


def save_tv(path, tv: TotalVariabilityModel, meta: dict | None = None) -> None:
    meta = dict(meta or {})
    meta.update({"n_components": tv.n_components, "feat_dim": tv.feat_dim})
    save_container(path, "tv", {"m": tv.m, "t_mat": tv.t_mat, "sigma": tv.sigma}, meta)


def load_tv(path) -> TotalVariabilityModel:
    kind, tensors, meta = load_container(path)
    if kind != "tv":
        raise ValueError(f"expected a tv container, got {kind}")
    return TotalVariabilityModel(m=tensors["m"], t_mat=tensors["t_mat"],
                                 sigma=tensors["sigma"],
                                 n_components=meta["n_components"],
                                 feat_dim=meta["feat_dim"])


def save_lda(path, proj: LdaProjection, meta: dict | None = None) -> None:
    save_container(path, "lda", {"a": proj.a, "eigenvalues": proj.eigenvalues},
                   meta or {})


def load_lda(path) -> LdaProjection:
    kind, tensors, _ = load_container(path)
    if kind != "lda":
        raise ValueError(f"expected an lda container, got {kind}")
    return LdaProjection(a=tensors["a"], eigenvalues=tensors["eigenvalues"])
