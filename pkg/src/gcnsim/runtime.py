"""Quantized multi-layer GCN and GraphSAGE inference over the simulator.

A layer runs combination first (X @ W, sparse or dense mode as the operand
dictates) and aggregation second (A @ (XW), always sparse mode). Results are
requantized to 16 bits wherever hardware would park them in a 16-bit memory:
after combination (the product moves to the dense-data memory) and after
each layer (the activation moves to the edge-weight memory). The oracle
backend replays the identical pipeline on the reference kernels, so the two
paths must agree bit for bit; a separate real-arithmetic reference measures
quantization error.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .matrix import (
    DenseMatrix,
    ShapeError,
    SparseMatrixCSR,
    check_fits,
    dequantize,
    dmm_reference,
    relu,
    requantize16,
    sdmm_reference,
)
from .schedule import ArchConfig
from .simulator import MODE_DMM, MODE_SDMM, CycleReport, simulate_step

KIND_GCN = "gcn"
KIND_SAGE = "graphsage-mean"


@dataclass
class LayerSpec:
    """One layer's weights and post-ops; GraphSAGE layers add a self block."""

    weight: DenseMatrix
    activation: str = "relu"
    weight_self: DenseMatrix | None = None

    def __post_init__(self):
        if self.activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class ModelSpec:
    kind: str
    layers: list
    adjacency_mode: str = "binary"

    def __post_init__(self):
        if self.kind not in (KIND_GCN, KIND_SAGE):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not self.layers:
            raise ValueError("a model needs at least one layer")
        for i in range(1, len(self.layers)):
            prev, cur = self.layers[i - 1], self.layers[i]
            if prev.weight.cols != cur.weight.rows:
                raise ShapeError(f"layer {i - 1} emits {prev.weight.cols} features "
                                 f"but layer {i} expects {cur.weight.rows}")
        if self.kind == KIND_SAGE:
            for i, layer in enumerate(self.layers):
                if layer.weight_self is None:
                    raise ValueError(f"GraphSAGE layer {i} is missing its self block")
                if layer.weight_self.data.shape != layer.weight.data.shape:
                    raise ShapeError(f"layer {i}: self and neighbor blocks differ in shape")


def make_gcn(weights: list[DenseMatrix], adjacency_mode: str = "binary") -> ModelSpec:
    """Relu between layers, none after the last."""
    layers = [LayerSpec(w, "relu" if i < len(weights) - 1 else "none")
              for i, w in enumerate(weights)]
    return ModelSpec(KIND_GCN, layers, adjacency_mode)


def make_graphsage(weight_pairs: list[tuple[DenseMatrix, DenseMatrix]]) -> ModelSpec:
    layers = [LayerSpec(wn, "relu" if i < len(weight_pairs) - 1 else "none",
                        weight_self=ws)
              for i, (ws, wn) in enumerate(weight_pairs)]
    return ModelSpec(KIND_SAGE, layers, "mean")


@dataclass
class RunReport:
    """Labeled per-step cycle reports for one inference."""

    steps: list = field(default_factory=list)

    def add(self, label: str, rep: CycleReport) -> None:
        self.steps.append((label, rep))

    def sdmm_compute_cycles(self) -> int:
        return sum(r.compute_cycles for _, r in self.steps if r.mode == MODE_SDMM)

    def total_cycles(self) -> int:
        return sum(r.total_cycles for _, r in self.steps)

    def merged(self) -> CycleReport:
        if not self.steps:
            raise ValueError("empty run report")
        out = CycleReport(self.steps[0][1].pe_count, mode="mixed")
        for _, r in self.steps:
            out.merge(r)
        return out

    def as_dict(self) -> dict:
        return {
            "total_cycles": self.total_cycles(),
            "sdmm_compute_cycles": self.sdmm_compute_cycles(),
            "steps": [{"label": lbl, **r.breakdown()} for lbl, r in self.steps],
        }


def packet_bits_for(x: SparseMatrixCSR) -> int:
    """Narrowest supported value field that can carry this operand."""
    if x.nnz == 0 or (x.values == 1).all():
        return 0
    return 4 if x.bits <= 4 else 16


def mean_adjacency(a: SparseMatrixCSR, frac_bits: int = 14) -> SparseMatrixCSR:
    """Row-normalized adjacency (each stored row scaled by 1/degree).

    Structure is preserved except for weights that round to zero; isolated
    rows simply stay empty. Linear in nnz.
    """
    if a.rows != a.cols:
        raise ShapeError("adjacency must be square")
    deg = a.row_nnz().astype(np.float64)
    rr = np.repeat(np.arange(a.rows), a.row_nnz())
    raw = np.round((1.0 / deg[rr]) * (1 << frac_bits)).astype(np.int64)
    keep = raw != 0
    counts = np.bincount(rr[keep], minlength=a.rows)
    row_ptr = np.concatenate([[0], np.cumsum(counts)])
    return SparseMatrixCSR(a.rows, a.cols, row_ptr, a.col_idx[keep],
                           raw[keep], 16, frac_bits)


def align_add(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    """Exact fixed-point add: the coarser operand is up-shifted, never rounded."""
    if a.data.shape != b.data.shape:
        raise ShapeError("cannot add differently shaped matrices")
    f = max(a.frac_bits, b.frac_bits)
    da = a.data << (f - a.frac_bits)
    db = b.data << (f - b.frac_bits)
    out = da + db
    check_fits(out, 32, "sum")
    return DenseMatrix(out, 32, f)


class _SimEngine:
    """Matrix products through the cycle simulator, reports collected."""

    def __init__(self, cfg: ArchConfig, report: RunReport):
        self.cfg = cfg
        self.report = report

    def matmul(self, label: str, x, w: DenseMatrix) -> DenseMatrix:
        if isinstance(x, SparseMatrixCSR):
            cfg = replace(self.cfg, value_bits=packet_bits_for(x))
            y, rep = simulate_step(x, w, MODE_SDMM, cfg)
        else:
            y, rep = simulate_step(x, w, MODE_DMM, self.cfg)
        self.report.add(label, rep)
        return y


class _OracleEngine:
    """Same pipeline on the reference kernels; no cycle accounting."""

    def matmul(self, label: str, x, w: DenseMatrix) -> DenseMatrix:
        if isinstance(x, SparseMatrixCSR):
            return sdmm_reference(x, w)
        return dmm_reference(x, w)


def _forward(model: ModelSpec, a: SparseMatrixCSR, x0, engine) -> DenseMatrix:
    """Shared layer walk so both backends quantize at identical points."""
    x = x0
    for i, layer in enumerate(model.layers):
        if model.kind == KIND_GCN:
            xw = engine.matmul(f"layer{i}.combine", x, layer.weight)
            xw16 = requantize16(xw)   # parked in 16-bit dense memory
            y = engine.matmul(f"layer{i}.aggregate", a, xw16)
        else:
            self_part = engine.matmul(f"layer{i}.self", x, layer.weight_self)
            xn = engine.matmul(f"layer{i}.neigh_combine", x, layer.weight)
            xn16 = requantize16(xn)
            neigh = engine.matmul(f"layer{i}.neigh_aggregate", a, xn16)
            y = align_add(self_part, neigh)
        if layer.activation == "relu":
            y = relu(y)
        x = requantize16(y)           # parked in 16-bit edge-weight memory
    return x


def run_gcn(model: ModelSpec, a: SparseMatrixCSR, x0, cfg: ArchConfig
            ) -> tuple[DenseMatrix, RunReport]:
    if model.kind != KIND_GCN:
        raise ValueError("run_gcn requires a GCN model")
    report = RunReport()
    logits = _forward(model, a, x0, _SimEngine(cfg, report))
    return logits, report


def run_graphsage(model: ModelSpec, a: SparseMatrixCSR, x0, cfg: ArchConfig
                  ) -> tuple[DenseMatrix, RunReport]:
    if model.kind != KIND_SAGE:
        raise ValueError("run_graphsage requires a GraphSAGE model")
    report = RunReport()
    logits = _forward(model, a, x0, _SimEngine(cfg, report))
    return logits, report


def run_model(model: ModelSpec, a: SparseMatrixCSR, x0, cfg: ArchConfig
              ) -> tuple[DenseMatrix, RunReport]:
    if model.kind == KIND_GCN:
        return run_gcn(model, a, x0, cfg)
    return run_graphsage(model, a, x0, cfg)


def run_oracle(model: ModelSpec, a: SparseMatrixCSR, x0) -> DenseMatrix:
    """Reference-kernel twin of run_model; must match it bit for bit."""
    return _forward(model, a, x0, _OracleEngine())


def real_reference(model: ModelSpec, a: SparseMatrixCSR, x0) -> np.ndarray:
    """Float64 pipeline with no quantization anywhere, for error reporting.

    The adjacency is idealized: binary edges stay 1.0 and the mean mode uses
    exact 1/degree, so the comparison charges all error to quantization.
    """
    if model.adjacency_mode == "mean":
        deg = np.maximum(a.row_nnz(), 1).astype(np.float64)
        a_real = (a.to_dense().data != 0) / deg[:, None]
    else:
        a_real = dequantize(a) if a.frac_bits else (a.to_dense().data != 0).astype(float)
    x = dequantize(x0) if not isinstance(x0, np.ndarray) else x0
    for layer in model.layers:
        if model.kind == KIND_GCN:
            y = a_real @ (x @ dequantize(layer.weight))
        else:
            y = x @ dequantize(layer.weight_self) \
                + a_real @ (x @ dequantize(layer.weight))
        if layer.activation == "relu":
            y = np.maximum(y, 0.0)
        x = y
    return x


def verify_against_oracle(model: ModelSpec, a: SparseMatrixCSR, x0,
                          cfg: ArchConfig, sim=None) -> dict:
    """Exactness vs the reference path plus error stats vs real arithmetic.

    Pass sim=(logits, RunReport) from an earlier run_model call to skip the
    second simulator pass.
    """
    sim_logits, report = sim if sim is not None else run_model(model, a, x0, cfg)
    oracle_logits = run_oracle(model, a, x0)
    exact = (sim_logits.frac_bits == oracle_logits.frac_bits
             and np.array_equal(sim_logits.data, oracle_logits.data))
    real = real_reference(model, a, x0)
    sim_real = dequantize(sim_logits)
    max_abs_err = float(np.abs(sim_real - real).max()) if real.size else 0.0
    agree = float((sim_real.argmax(axis=1) == real.argmax(axis=1)).mean()) \
        if real.size else 1.0
    return {
        "exact_match": bool(exact),
        "max_abs_err": max_abs_err,
        "argmax_agreement": agree,
        "total_cycles": report.total_cycles(),
    }
