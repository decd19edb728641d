"""Binary index files.

All integers are little-endian u32, all floats little-endian f32::

    header    "AIDX" | version | kind | dim
    kind 1    IVF-PQ:   nlist | m | ks | has_rotation
              coarse f32[nlist*dim] | codebooks f32[m*ks*(dim/m)] | [rotation f32[dim*dim]]
              nlist x ( count | count x (id u32, code u8[m]) )
    kind 2    IVF-Flat: nlist | coarse f32[nlist*dim]
              nlist x ( count | count x (id u32, vector f32[dim]) )
    kind 3    LSH:      out_dim | nbits
              mean f32[dim] | basis f32[out_dim*dim] | hyperplanes f32[nbits*out_dim]
              count | count x (id u32, hash u8[nbits/8])

Lists and LSH entries keep insertion order, so save/load/save is
byte-identical. Code bytes are not range-checked on load; a byte >= ks is
reported by search when the affected list is probed.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from activeindex.errors import FormatError
from activeindex.index.ivf import IvfFlatIndex, IvfPqIndex
from activeindex.index.lsh import LshIndex
from activeindex.index.pq import PqCodebook

MAGIC = b"AIDX"
VERSION = 1
KIND_IVFPQ, KIND_IVFFLAT, KIND_LSH = 1, 2, 3


def _f32(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def _u32(*vals) -> bytes:
    return struct.pack(f"<{len(vals)}I", *vals)


def _entries(ids: np.ndarray, payload: np.ndarray, dtype: str) -> bytes:
    rec = np.dtype([("id", "<u4"), ("p", dtype, payload.shape[1:])])
    arr = np.empty(len(ids), dtype=rec)
    arr["id"] = ids
    arr["p"] = payload
    return _u32(len(ids)) + arr.tobytes()


def index_to_bytes(index) -> bytes:
    parts = [MAGIC]
    if isinstance(index, IvfPqIndex):
        has_rot = index.rotation is not None
        parts += [
            _u32(VERSION, KIND_IVFPQ, index.dim, index.nlist, index.pq.m, index.pq.ks, int(has_rot)),
            _f32(index.coarse),
            _f32(index.pq.sub_codebooks),
        ]
        if has_rot:
            parts.append(_f32(index.rotation))
        for cell in range(index.nlist):
            ids, codes = index.list_arrays(cell)
            parts.append(_entries(ids, codes, "u1"))
    elif isinstance(index, IvfFlatIndex):
        parts += [_u32(VERSION, KIND_IVFFLAT, index.dim, index.nlist), _f32(index.coarse)]
        for cell in range(index.nlist):
            ids, vecs = index.list_arrays(cell)
            parts.append(_entries(ids, vecs, "<f4"))
    elif isinstance(index, LshIndex):
        parts += [
            _u32(VERSION, KIND_LSH, index.dim, index.out_dim, index.nbits),
            _f32(index.pca_mean),
            _f32(index.pca_basis),
            _f32(index.hyperplanes),
        ]
        ids, hashes = index.entries()
        parts.append(_entries(ids, hashes, "u1"))
    else:
        raise TypeError(f"cannot serialize {type(index).__name__}")
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated index file while reading {what}", self.pos)
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count, what))
        return vals[0] if count == 1 else vals

    def f32(self, shape, what: str) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(4 * n, what), dtype="<f4").astype(np.float32).reshape(shape)

    def entries(self, width: int, dtype: str, what: str):
        count = self.u32(f"{what} count")
        rec = np.dtype([("id", "<u4"), ("p", dtype, (width,))])
        arr = np.frombuffer(self.take(count * rec.itemsize, what), dtype=rec)
        return arr["id"].astype(np.int64), np.array(arr["p"])


def index_from_bytes(buf: bytes):
    r = _Reader(bytes(buf))
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic, not an index file", 0)
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported index version {version}", 4)
    kind = r.u32("kind")
    dim = r.u32("dim")
    if kind == KIND_IVFPQ:
        nlist, m, ks, has_rot = r.u32("geometry", 4)
        if m == 0 or dim % m or ks == 0 or ks > 256:
            raise FormatError(f"inconsistent PQ geometry dim={dim} m={m} ks={ks}", 16)
        coarse = r.f32((nlist, dim), "coarse centroids")
        books = r.f32((m, ks, dim // m), "PQ codebooks")
        rot = r.f32((dim, dim), "rotation") if has_rot else None
        index = IvfPqIndex(coarse, PqCodebook(books), rot)
        lists = [r.entries(m, "u1", f"list {c}") for c in range(nlist)]
    elif kind == KIND_IVFFLAT:
        nlist = r.u32("nlist")
        index = IvfFlatIndex(r.f32((nlist, dim), "coarse centroids"))
        lists = [r.entries(dim, "<f4", f"list {c}") for c in range(nlist)]
    elif kind == KIND_LSH:
        out_dim, nbits = r.u32("geometry", 2)
        if nbits % 8:
            raise FormatError(f"nbits {nbits} is not a multiple of 8", 20)
        index = LshIndex(
            r.f32((dim,), "PCA mean"), r.f32((out_dim, dim), "PCA basis"), r.f32((nbits, out_dim), "hyperplanes")
        )
        ids, hashes = r.entries(nbits // 8, "u1", "entries")
        for vid, h in zip(ids.tolist(), hashes):
            index._where[vid] = len(index._ids)
            index._ids.append(vid)
            index._hashes.append(h)
        if len(ids):
            index._arrays = (ids, hashes)
        lists = None
    else:
        raise FormatError(f"unknown index kind {kind}", 8)
    if r.pos != len(r.buf):
        raise FormatError(f"{len(r.buf) - r.pos} trailing bytes after index payload", r.pos)
    if lists is not None:
        cells = []
        for cell, (ids, payload) in enumerate(lists):
            for vid, p in zip(ids.tolist(), payload):
                if vid in index._where:
                    raise FormatError(f"id {vid} stored twice", r.pos)
                index._store(cell, vid, p)
            if len(ids):
                cells.append(cell)
        index._refresh(cells)
    return index


def save_index(index, path) -> None:
    Path(path).write_bytes(index_to_bytes(index))


def load_index(path):
    return index_from_bytes(Path(path).read_bytes())
