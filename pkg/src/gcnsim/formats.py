"""On-disk formats: edge lists, feature files, weight containers, metadata.

Text formats are line oriented and parse errors always carry the file name
and 1-based line number. The weight container is binary little-endian. All
of it exists so a workload can round-trip through files byte-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .graphs import GraphBundle
from .matrix import DenseMatrix, SparseMatrixCSR, quantize

WEIGHT_MAGIC = b"GCNW"
WEIGHT_VERSION = 1
META_VERSION = 1

_WHEADER = struct.Struct("<4sHH")       # magic, version, matrix count
_WMATRIX = struct.Struct("<IIHH")       # rows, cols, bits, frac_bits

EDGE_FILE = "edges.txt"
FEATURE_FILE = "features.txt"
WEIGHT_FILE = "weights.bin"


class FileFormatError(ValueError):
    """Unparseable or inconsistent input file."""


def _fail(path, lineno: int, msg: str):
    raise FileFormatError(f"{path}:{lineno}: {msg}")


def _data_lines(path):
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield lineno, line


# -- edges --------------------------------------------------------------------


def read_edges(path, nodes: int) -> SparseMatrixCSR:
    """Whitespace "u v" pairs, 0-indexed, into a symmetrized binary adjacency.

    Duplicates collapse; self loops are kept as written (normalization decides
    what to do with them later).
    """
    us, vs = [], []
    for lineno, line in _data_lines(path):
        parts = line.split()
        if len(parts) != 2:
            _fail(path, lineno, f"expected 'u v', got {line!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            _fail(path, lineno, f"non-integer node id in {line!r}")
        if not (0 <= u < nodes and 0 <= v < nodes):
            _fail(path, lineno, f"node id out of range [0, {nodes}) in {line!r}")
        us.extend((u, v))
        vs.extend((v, u))
    if not us:
        empty = np.zeros(0, dtype=np.int64)
        return SparseMatrixCSR(nodes, nodes, np.zeros(nodes + 1, dtype=np.int64),
                               empty, empty, 4, 0)
    rr = np.array(us, dtype=np.int64)
    cc = np.array(vs, dtype=np.int64)
    a = SparseMatrixCSR.from_coo(nodes, nodes, rr, cc,
                                 np.ones(len(rr), dtype=np.int64), 4, 0)
    # from_coo sums duplicates; collapse back to binary
    return SparseMatrixCSR(nodes, nodes, a.row_ptr, a.col_idx,
                           np.ones(a.nnz, dtype=np.int64), 4, 0)


def write_edges(path, a: SparseMatrixCSR) -> None:
    """One line per undirected edge (u <= v); assumes a symmetric matrix."""
    rr = np.repeat(np.arange(a.rows), a.row_nnz())
    keep = rr <= a.col_idx
    with open(path, "w") as fh:
        for u, v in zip(rr[keep], a.col_idx[keep]):
            fh.write(f"{u} {v}\n")


# -- features -----------------------------------------------------------------


def read_features(path) -> SparseMatrixCSR:
    """Sparse triplet file (with a "sparse" header) or a dense real grid.

    Triplets carry raw fixed-point values exactly; dense grids are real
    numbers quantized to the SINT4 feature precision.
    """
    rows = []
    lines = list(_data_lines(path))
    if not lines:
        raise FileFormatError(f"{path}: empty feature file")
    first_line = lines[0][1]
    if first_line.split()[0] == "sparse":
        return _read_sparse_features(path, lines)
    width = None
    for lineno, line in lines:
        try:
            vals = [float(tok) for tok in line.split()]
        except ValueError:
            _fail(path, lineno, f"non-numeric feature value in {line!r}")
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            _fail(path, lineno, f"expected {width} columns, got {len(vals)}")
        rows.append(vals)
    return quantize(np.array(rows), 4, 3, sparse=True)


def _read_sparse_features(path, lines) -> SparseMatrixCSR:
    lineno, header = lines[0]
    parts = header.split()
    if len(parts) != 5:
        _fail(path, lineno, "sparse header needs 'sparse rows cols bits frac'")
    try:
        n, m, bits, frac = (int(p) for p in parts[1:])
    except ValueError:
        _fail(path, lineno, f"non-integer sparse header field in {header!r}")
    rr, cc, vv = [], [], []
    for lineno, line in lines[1:]:
        parts = line.split()
        if len(parts) != 3:
            _fail(path, lineno, f"expected 'row col value', got {line!r}")
        try:
            r, c, v = int(parts[0]), int(parts[1]), int(parts[2])
        except ValueError:
            _fail(path, lineno, f"non-integer triplet in {line!r}")
        if not (0 <= r < n and 0 <= c < m):
            _fail(path, lineno, f"position ({r}, {c}) outside {n}x{m}")
        rr.append(r)
        cc.append(c)
        vv.append(v)
    return SparseMatrixCSR.from_coo(n, m, np.array(rr, dtype=np.int64),
                                    np.array(cc, dtype=np.int64),
                                    np.array(vv, dtype=np.int64), bits, frac)


def write_features(path, f: SparseMatrixCSR) -> None:
    """Sparse triplet form; raw values, so the round trip is exact."""
    rr = np.repeat(np.arange(f.rows), f.row_nnz())
    with open(path, "w") as fh:
        fh.write(f"sparse {f.rows} {f.cols} {f.bits} {f.frac_bits}\n")
        for r, c, v in zip(rr, f.col_idx, f.values):
            fh.write(f"{r} {c} {v}\n")


# -- weights ------------------------------------------------------------------


def write_weights(path, weights: list[DenseMatrix]) -> None:
    with open(path, "wb") as fh:
        fh.write(_WHEADER.pack(WEIGHT_MAGIC, WEIGHT_VERSION, len(weights)))
        for w in weights:
            fh.write(_WMATRIX.pack(w.rows, w.cols, w.bits, w.frac_bits))
            fh.write(w.data.astype("<i4").tobytes())


def read_weights(path) -> list[DenseMatrix]:
    data = Path(path).read_bytes()
    if len(data) < _WHEADER.size:
        raise FileFormatError(f"{path}: truncated weight header")
    magic, version, count = _WHEADER.unpack_from(data)
    if magic != WEIGHT_MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}")
    if version != WEIGHT_VERSION:
        raise FileFormatError(f"{path}: unsupported weight version {version}")
    out = []
    pos = _WHEADER.size
    for i in range(count):
        if pos + _WMATRIX.size > len(data):
            raise FileFormatError(f"{path}: truncated header for matrix {i}")
        rows, cols, bits, frac = _WMATRIX.unpack_from(data, pos)
        pos += _WMATRIX.size
        nbytes = rows * cols * 4
        if pos + nbytes > len(data):
            raise FileFormatError(f"{path}: truncated data for matrix {i}")
        raw = np.frombuffer(data, dtype="<i4", count=rows * cols, offset=pos)
        pos += nbytes
        out.append(DenseMatrix(raw.reshape(rows, cols).astype(np.int64),
                               bits, frac))
    if pos != len(data):
        raise FileFormatError(f"{path}: {len(data) - pos} trailing bytes")
    return out


# -- metadata sidecars ----------------------------------------------------------


def write_meta(path, doc: dict) -> None:
    doc = {"meta_version": META_VERSION, **doc}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_meta(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("meta_version") != META_VERSION:
        raise FileFormatError(f"{path}: not a metadata sidecar")
    return doc


# -- bundles --------------------------------------------------------------------


def ingest_graph(edge_file, feature_file, weight_files=()) -> GraphBundle:
    """Files to a validated GraphBundle; node count comes from the features."""
    features = read_features(feature_file)
    adjacency = read_edges(edge_file, features.rows)
    weights = []
    for wf in weight_files:
        weights.extend(read_weights(wf))
    return GraphBundle(adjacency, features, weights)


def export_bundle(out_dir, bundle: GraphBundle) -> dict:
    """Write the bundle into a directory; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"edges": out / EDGE_FILE, "features": out / FEATURE_FILE}
    write_edges(paths["edges"], bundle.adjacency)
    write_features(paths["features"], bundle.features)
    if bundle.weights:
        paths["weights"] = out / WEIGHT_FILE
        write_weights(paths["weights"], bundle.weights)
    return paths


def ingest_bundle_dir(in_dir) -> GraphBundle:
    """Inverse of export_bundle."""
    d = Path(in_dir)
    wf = [d / WEIGHT_FILE] if (d / WEIGHT_FILE).exists() else []
    return ingest_graph(d / EDGE_FILE, d / FEATURE_FILE, wf)
