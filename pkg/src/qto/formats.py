"""Binary file formats, little-endian throughout.

QTOM (relation probability matrices):
    magic ``QTOM``, u32 version=1, u64 num_entities, u64 num_relations,
    f64 delta, f64 epsilon, then per relation in id order: u64 nnz followed
    by nnz records (u32 row, u32 col, f64 value), rows ascending, cols
    ascending within row.

QTOE (complex embeddings):
    magic ``QTOE``, u32 version=1, u64 num_entities, u64 num_relations,
    u64 dim, then num_entities entity blocks followed by num_relations
    relation blocks, each block dim interleaved (f64 re, f64 im) pairs.
"""

from __future__ import annotations

import struct

import numpy as np

from .sparse import SparseMatrixError, SparseRelationMatrix

QTOM_MAGIC = b"QTOM"
QTOE_MAGIC = b"QTOE"
_ENTRY_DTYPE = np.dtype([("row", "<u4"), ("col", "<u4"), ("val", "<f8")])


class FormatError(Exception):
    """Bad magic, unsupported version, or truncated payload."""


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file while reading {what}")
    return data


def save_matrix(adjacency, path) -> None:
    """Write a NeuralAdjacency to the QTOM format."""
    with open(path, "wb") as fh:
        fh.write(QTOM_MAGIC)
        fh.write(struct.pack("<I", 1))
        fh.write(struct.pack("<QQ", adjacency.num_entities, adjacency.num_relations))
        fh.write(struct.pack("<dd", adjacency.delta, adjacency.epsilon))
        for r in range(adjacency.num_relations):
            m = adjacency.relation(r)
            fh.write(struct.pack("<Q", m.nnz))
            entries = np.empty(m.nnz, dtype=_ENTRY_DTYPE)
            entries["row"] = np.repeat(np.arange(m.dim, dtype=np.uint32), np.diff(m.indptr))
            entries["col"] = m.cols.astype(np.uint32)
            entries["val"] = m.vals
            fh.write(entries.tobytes())


def load_matrix(path):
    """Read a QTOM file back into a NeuralAdjacency."""
    from .adjacency import NeuralAdjacency

    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != QTOM_MAGIC:
            raise FormatError("not a QTOM file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != 1:
            raise FormatError(f"unsupported QTOM version {version}")
        num_entities, num_relations = struct.unpack("<QQ", _read_exact(fh, 16, "header"))
        delta, epsilon = struct.unpack("<dd", _read_exact(fh, 16, "header"))
        matrices = []
        for r in range(num_relations):
            (nnz,) = struct.unpack("<Q", _read_exact(fh, 8, f"relation {r} nnz"))
            raw = _read_exact(fh, nnz * _ENTRY_DTYPE.itemsize, f"relation {r} entries")
            entries = np.frombuffer(raw, dtype=_ENTRY_DTYPE)
            rows = entries["row"].astype(np.int64)
            if len(rows) > 1 and (np.diff(rows) < 0).any():
                raise FormatError(f"relation {r}: rows not ascending")
            if len(rows) and rows.max() >= num_entities:
                raise FormatError(f"relation {r}: row index out of range")
            indptr = np.concatenate(
                ([0], np.cumsum(np.bincount(rows, minlength=num_entities)))
            ).astype(np.int64)
            try:
                matrices.append(
                    SparseRelationMatrix(
                        relation=r,
                        dim=num_entities,
                        indptr=indptr,
                        cols=entries["col"].astype(np.int32),
                        vals=entries["val"].astype(np.float64),
                    )
                )
            except SparseMatrixError as exc:
                raise FormatError(f"relation {r}: {exc}") from exc
        trailing = fh.read(1)
        if trailing:
            raise FormatError("trailing bytes after last relation")
    return NeuralAdjacency(
        matrices=matrices,
        delta=delta,
        epsilon=epsilon,
        num_entities=num_entities,
        num_relations=num_relations,
    )


def save_embeddings(entity_emb: np.ndarray, relation_emb: np.ndarray, path) -> None:
    """Write complex (|V|, d) and (|R|, d) embeddings to the QTOE format."""
    entity_emb = np.asarray(entity_emb, dtype=np.complex128)
    relation_emb = np.asarray(relation_emb, dtype=np.complex128)
    if entity_emb.ndim != 2 or relation_emb.ndim != 2:
        raise FormatError("embeddings must be 2-d")
    if entity_emb.shape[1] != relation_emb.shape[1]:
        raise FormatError("entity/relation dimension mismatch")
    nv, d = entity_emb.shape
    nr = relation_emb.shape[0]
    with open(path, "wb") as fh:
        fh.write(QTOE_MAGIC)
        fh.write(struct.pack("<I", 1))
        fh.write(struct.pack("<QQQ", nv, nr, d))
        for block in (entity_emb, relation_emb):
            inter = np.empty((block.shape[0], d, 2), dtype="<f8")
            inter[:, :, 0] = block.real
            inter[:, :, 1] = block.imag
            fh.write(inter.tobytes())


def load_embeddings(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a QTOE file; returns (entity, relation) complex arrays."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != QTOE_MAGIC:
            raise FormatError("not a QTOE file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != 1:
            raise FormatError(f"unsupported QTOE version {version}")
        nv, nr, d = struct.unpack("<QQQ", _read_exact(fh, 24, "header"))
        out = []
        for count, what in ((nv, "entity blocks"), (nr, "relation blocks")):
            raw = _read_exact(fh, count * d * 16, what)
            inter = np.frombuffer(raw, dtype="<f8").reshape(count, d, 2)
            out.append(inter[:, :, 0] + 1j * inter[:, :, 1])
        trailing = fh.read(1)
        if trailing:
            raise FormatError("trailing bytes after relation blocks")
    return out[0], out[1]
