"""Exact fixed-point matrix types and reference kernels.

Everything here is plain integer arithmetic on raw fixed-point values
(int64 storage, declared width checked explicitly), so results are
bit-reproducible and usable as the oracle for the cycle simulator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VALUE_WIDTHS = (4, 16, 32)


class ShapeError(ValueError):
    """Operand dimensions do not chain."""


class OverflowTrap(ArithmeticError):
    """A stored result exceeds the declared two's-complement range."""


def int_min(bits: int) -> int:
    return -(1 << (bits - 1))


def int_max(bits: int) -> int:
    return (1 << (bits - 1)) - 1


def check_fits(arr: np.ndarray, bits: int, what: str = "value") -> None:
    """Raise OverflowTrap (with the offending position) if any entry is out of range."""
    lo, hi = int_min(bits), int_max(bits)
    bad = (arr < lo) | (arr > hi)
    if bad.any():
        pos = np.argwhere(bad)[0]
        val = arr[tuple(pos)]
        raise OverflowTrap(f"{what} {val} at {tuple(int(p) for p in pos)} outside {bits}-bit range")


@dataclass(frozen=True)
class FixedPoint:
    """One signed fixed-point scalar: raw integer, width, and scale 2^-frac_bits."""

    raw: int
    bits: int
    frac_bits: int

    def __post_init__(self):
        if self.bits not in VALUE_WIDTHS:
            raise ValueError(f"unsupported width {self.bits}")
        if not 0 <= self.frac_bits < self.bits:
            raise ValueError(f"frac_bits {self.frac_bits} not in [0, {self.bits})")
        if not int_min(self.bits) <= self.raw <= int_max(self.bits):
            raise OverflowTrap(f"raw {self.raw} outside {self.bits}-bit range")

    @property
    def value(self) -> float:
        return self.raw * 2.0 ** -self.frac_bits

    @classmethod
    def from_real(cls, v: float, bits: int, frac_bits: int) -> "FixedPoint":
        raw, _ = quantize_value(v, bits, frac_bits)
        return cls(raw, bits, frac_bits)


def quantize_value(v: float, bits: int, frac_bits: int) -> tuple[int, bool]:
    """Round v to the nearest representable multiple of 2^-frac_bits.

    Ties go to even; out-of-range values saturate. Returns (raw, saturated).
    """
    scaled = float(np.round(v * (1 << frac_bits)))
    lo, hi = int_min(bits), int_max(bits)
    raw = int(min(max(scaled, lo), hi))
    return raw, raw != scaled


@dataclass
class DenseMatrix:
    """Row-major dense grid of raw fixed-point values sharing one scale."""

    data: np.ndarray  # int64, shape (rows, cols)
    bits: int
    frac_bits: int
    sat_count: int = 0  # entries saturated during quantization

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.int64)
        if self.data.ndim != 2:
            raise ShapeError(f"dense data must be 2-D, got {self.data.ndim}-D")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @classmethod
    def zeros(cls, rows: int, cols: int, bits: int = 32, frac_bits: int = 0) -> "DenseMatrix":
        return cls(np.zeros((rows, cols), dtype=np.int64), bits, frac_bits)

    def validate(self) -> None:
        check_fits(self.data, self.bits, "dense entry")

    def to_real(self) -> np.ndarray:
        return dequantize(self)

    def submatrix(self, r0: int, r1: int, c0: int, c1: int) -> "DenseMatrix":
        return DenseMatrix(self.data[r0:r1, c0:c1].copy(), self.bits, self.frac_bits)

    def copy(self) -> "DenseMatrix":
        return DenseMatrix(self.data.copy(), self.bits, self.frac_bits, self.sat_count)


@dataclass
class SparseMatrixCSR:
    """Compressed sparse rows of raw fixed-point values (zeros never stored)."""

    rows: int
    cols: int
    row_ptr: np.ndarray  # int64, length rows+1
    col_idx: np.ndarray  # int64, per nonzero
    values: np.ndarray   # int64 raw, per nonzero
    bits: int
    frac_bits: int
    sat_count: int = 0

    def __post_init__(self):
        self.row_ptr = np.asarray(self.row_ptr, dtype=np.int64)
        self.col_idx = np.asarray(self.col_idx, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.int64)

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    def row_nnz(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    def validate(self) -> None:
        if len(self.row_ptr) != self.rows + 1 or self.row_ptr[0] != 0:
            raise ShapeError("row_ptr must have length rows+1 and start at 0")
        if (np.diff(self.row_ptr) < 0).any():
            raise ShapeError("row_ptr must be non-decreasing")
        if self.row_ptr[-1] != len(self.col_idx) or len(self.col_idx) != len(self.values):
            raise ShapeError("row_ptr[-1], col_idx, values lengths disagree")
        if self.nnz:
            if self.col_idx.min() < 0 or self.col_idx.max() >= self.cols:
                raise ShapeError("column index out of range")
            # strictly increasing within each row: check all adjacent pairs,
            # exempting pairs that straddle a row boundary
            if self.nnz > 1:
                diffs = np.diff(self.col_idx)
                boundary = np.zeros(self.nnz - 1, dtype=bool)
                ends = self.row_ptr[1:-1]
                boundary[ends[(ends > 0) & (ends < self.nnz)] - 1] = True
                if (diffs[~boundary] <= 0).any():
                    raise ShapeError("columns not strictly increasing within a row")
            if (self.values == 0).any():
                raise ShapeError("stored zero value")
        check_fits(self.values.reshape(1, -1), self.bits, "sparse entry")

    @classmethod
    def from_dense_raw(cls, raw: np.ndarray, bits: int, frac_bits: int) -> "SparseMatrixCSR":
        raw = np.asarray(raw, dtype=np.int64)
        rows, cols = raw.shape
        mask = raw != 0
        counts = mask.sum(axis=1)
        row_ptr = np.concatenate([[0], np.cumsum(counts)])
        rr, cc = np.nonzero(mask)
        return cls(rows, cols, row_ptr, cc.astype(np.int64), raw[rr, cc], bits, frac_bits)

    @classmethod
    def from_coo(cls, rows: int, cols: int, r: np.ndarray, c: np.ndarray,
                 v: np.ndarray, bits: int, frac_bits: int) -> "SparseMatrixCSR":
        """Build from unordered triplets; duplicate positions are summed."""
        r = np.asarray(r, dtype=np.int64)
        c = np.asarray(c, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        order = np.lexsort((c, r))
        r, c, v = r[order], c[order], v[order]
        if len(r):
            dup = np.concatenate([[False], (r[1:] == r[:-1]) & (c[1:] == c[:-1])])
            if dup.any():
                group = np.cumsum(~dup) - 1
                v = np.bincount(group, weights=v.astype(np.float64)).astype(np.int64)
                keep = ~dup
                r, c = r[keep], c[keep]
        keep = v != 0
        r, c, v = r[keep], c[keep], v[keep]
        row_ptr = np.concatenate([[0], np.cumsum(np.bincount(r, minlength=rows))])
        return cls(rows, cols, row_ptr, c, v, bits, frac_bits)

    def to_dense(self) -> DenseMatrix:
        raw = np.zeros((self.rows, self.cols), dtype=np.int64)
        rr = np.repeat(np.arange(self.rows), self.row_nnz())
        raw[rr, self.col_idx] = self.values
        return DenseMatrix(raw, self.bits, self.frac_bits)

    def to_real(self) -> np.ndarray:
        return dequantize(self)

    def col_slice(self, c0: int, c1: int) -> "SparseMatrixCSR":
        """Columns [c0, c1) as a new CSR with the same row count; indices rebased."""
        mask = (self.col_idx >= c0) & (self.col_idx < c1)
        idx = np.flatnonzero(mask)
        rr = np.repeat(np.arange(self.rows), self.row_nnz())[idx]
        row_ptr = np.concatenate([[0], np.cumsum(np.bincount(rr, minlength=self.rows))])
        return SparseMatrixCSR(self.rows, c1 - c0, row_ptr, self.col_idx[idx] - c0,
                               self.values[idx], self.bits, self.frac_bits)


def quantize(values: np.ndarray, bits: int, frac_bits: int,
             sparse: bool = False) -> DenseMatrix | SparseMatrixCSR:
    """Quantize a real grid to fixed point (round half to even, saturate).

    Saturated entries are counted on the result's sat_count, never raised.
    With sparse=True, entries that quantize to zero are dropped from the CSR.
    """
    if bits not in (4, 16):
        raise ValueError(f"quantization width must be 4 or 16, got {bits}")
    if not 0 <= frac_bits < bits:
        raise ValueError(f"frac_bits {frac_bits} not in [0, {bits})")
    values = np.asarray(values, dtype=np.float64)
    scaled = np.round(values * (1 << frac_bits))
    raw = np.clip(scaled, int_min(bits), int_max(bits)).astype(np.int64)
    sat = int((raw != scaled).sum())
    if sparse:
        out = SparseMatrixCSR.from_dense_raw(raw, bits, frac_bits)
    else:
        out = DenseMatrix(raw, bits, frac_bits)
    out.sat_count = sat
    return out


def dequantize(m: DenseMatrix | SparseMatrixCSR) -> np.ndarray:
    """Raw values back to reals; sparse inputs densify."""
    if isinstance(m, SparseMatrixCSR):
        m = m.to_dense()
    return m.data.astype(np.float64) * 2.0 ** -m.frac_bits


def sdmm_reference(x: SparseMatrixCSR, w: DenseMatrix) -> DenseMatrix:
    """Zero-skipping sparse-dense product, the golden model for the PE array.

    Y[i,k] = sum_j X[i,j] * W[j,k] over stored nonzeros only, exact in
    integers; each result entry must fit a 32-bit accumulator.
    """
    if x.cols != w.rows:
        raise ShapeError(f"inner dims differ: X is {x.rows}x{x.cols}, W is {w.rows}x{w.cols}")
    out = np.zeros((x.rows, w.cols), dtype=np.int64)
    for i in range(x.rows):
        s, e = x.row_ptr[i], x.row_ptr[i + 1]
        if e > s:
            out[i] = x.values[s:e] @ w.data[x.col_idx[s:e]]
    check_fits(out, 32, "accumulator")
    return DenseMatrix(out, 32, x.frac_bits + w.frac_bits)


def dmm_reference(x: DenseMatrix, w: DenseMatrix) -> DenseMatrix:
    """Dense-dense product under the same accumulator rules as sdmm_reference."""
    if x.cols != w.rows:
        raise ShapeError(f"inner dims differ: X is {x.rows}x{x.cols}, W is {w.rows}x{w.cols}")
    out = x.data @ w.data
    check_fits(out, 32, "accumulator")
    return DenseMatrix(out, 32, x.frac_bits + w.frac_bits)


def relu(y: DenseMatrix) -> DenseMatrix:
    return DenseMatrix(np.maximum(y.data, 0), y.bits, y.frac_bits)


def requantize16(y: DenseMatrix) -> DenseMatrix:
    """Narrow a 32-bit layer result to SINT16.

    The scale is chosen from the observed range: frac = 15 - ceil(log2(max|v|)),
    clamped to [0, 15], backed off one step if the maximum itself would not be
    representable (exact powers of two).
    """
    real = dequantize(y)
    peak = float(np.abs(real).max())
    if peak == 0.0:
        frac = 15
    else:
        frac = int(min(15, max(0, 15 - np.ceil(np.log2(peak)))))
        if round(peak * (1 << frac)) > int_max(16) and frac > 0:
            frac -= 1
    return quantize(real, 16, frac)


def normalize_adjacency(a: SparseMatrixCSR, mode: str = "binary",
                        bits: int = 16, frac_bits: int = 14) -> SparseMatrixCSR:
    """Prepare an adjacency operand.

    binary: every stored edge becomes raw 1 at scale 1 (no self loops added).
    sym_norm: D^-1/2 (A+I) D^-1/2 with self loops unioned in, quantized to
    the given edge-weight precision; degree is at least 1 by construction.
    """
    if a.rows != a.cols:
        raise ShapeError("adjacency must be square")
    if mode == "binary":
        return SparseMatrixCSR(a.rows, a.cols, a.row_ptr.copy(), a.col_idx.copy(),
                               np.ones(a.nnz, dtype=np.int64), 4, 0)
    if mode != "sym_norm":
        raise ValueError(f"unknown adjacency mode {mode!r}")
    n = a.rows
    rr = np.repeat(np.arange(n), a.row_nnz())
    cc = a.col_idx
    off = rr != cc
    r_all = np.concatenate([rr[off], np.arange(n)])
    c_all = np.concatenate([cc[off], np.arange(n)])
    deg = np.bincount(r_all, minlength=n).astype(np.float64)
    vals = 1.0 / np.sqrt(deg[r_all] * deg[c_all])
    grid = np.zeros((n, n))
    grid[r_all, c_all] = vals
    return quantize(grid, bits, frac_bits, sparse=True)
