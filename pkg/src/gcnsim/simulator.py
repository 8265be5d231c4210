"""Cycle-level execution of tile schedules on the modeled PE array.

The model walks a schedule one PE column at a time. Within a column the
packet semantics are sequential: sor seeds the accumulators from the saved
partial of the PE's current output row, vld accumulates value * W[col] into
all lanes, eor writes the accumulators back and advances to the PE's next
row. Columns never interact except through the per-cycle arbitration check,
so each column is executed as one vectorized segment-sum; the result is
bit-identical to stepping packet by packet.

Overflow note: emitted values are checked against the 32-bit accumulator
range at the end of a simulate_step, not per tile. Partials handed between
tiles may transiently exceed 32 bits; two's-complement wraparound makes the
final values identical either way, and the reference oracle checks the same
final quantity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .matrix import (
    DenseMatrix,
    OverflowTrap,
    ShapeError,
    SparseMatrixCSR,
    check_fits,
    int_max,
    int_min,
)
from .schedule import (
    ArchConfig,
    ScheduleStats,
    TilePair,
    TileSchedule,
    build_dmm_schedule,
    build_sdmm_schedule,
    schedule_stats,
    tile_inputs,
)
from .pcoo import PcooPacket

MODE_SDMM = "sdmm"
MODE_DMM = "dmm"


class ArbitrationError(RuntimeError):
    """A granted cycle violates bank exclusivity: a scheduler bug, never silent."""


@dataclass
class DdmState:
    """Dense data memory: r identical replicas, each g banks.

    Bank b of a replica holds dense-tile rows {j : j mod g = b} at depth
    j div g; each stored row is one lanes-wide vector.
    """

    replicas: list
    rows: int
    cols: int
    groups: int

    def fetch(self, replica: int, row: int) -> np.ndarray:
        return self.replicas[replica][row % self.groups][row // self.groups]

    def flat(self, replica: int = 0) -> np.ndarray:
        """The tile as one rows x cols grid, rebuilt from the banks."""
        out = np.zeros((self.rows, self.cols), dtype=np.int64)
        for b, bank in enumerate(self.replicas[replica]):
            idx = np.arange(b, self.rows, self.groups)
            out[idx] = bank[:len(idx)]
        return out


def load_tile(w_tile: DenseMatrix, cfg: ArchConfig) -> tuple[DdmState, int]:
    """Populate all replicas from a dense tile; cost is element count times r."""
    rows, cols = w_tile.rows, w_tile.cols
    if rows > cfg.tile_width or cols > cfg.lanes:
        raise ShapeError(f"dense tile {rows}x{cols} exceeds {cfg.tile_width}x{cfg.lanes}")
    replicas = []
    for _ in range(cfg.replicas):
        banks = [w_tile.data[np.arange(b, rows, cfg.groups)].copy()
                 for b in range(cfg.groups)]
        replicas.append(banks)
    cycles = math.ceil(rows * cols * cfg.replicas / cfg.load_bw) if rows * cols else 0
    return DdmState(replicas, rows, cols, cfg.groups), cycles


@dataclass
class PeState:
    """One PE: lane accumulators, output-row cursor, and the mode bit."""

    acc: np.ndarray
    row_cursor: int = 0
    sparse_flag: bool = True


def pe_step(pe: PeState, pkt: PcooPacket, w_row: np.ndarray,
            prev_tile_partial: np.ndarray,
            value: int | None = None) -> tuple[PeState, np.ndarray | None]:
    """Single-packet semantics; the per-column executor must agree with this.

    Returns the new state and, when eor fires, the emitted lane vector. In
    dense mode the caller resolves the multiplicand (from the streamed left
    operand) and passes it as `value`; sparse mode uses the packet's value.
    Emission checks the 32-bit range here because a lone step has no later
    tile to absorb a transient excursion.
    """
    acc = pe.acc.copy()
    cursor = pe.row_cursor
    emitted = None
    if not (pkt.sor or pkt.eor or pkt.vld):
        return PeState(acc, cursor, pe.sparse_flag), None
    if pkt.sor:
        acc = np.asarray(prev_tile_partial, dtype=np.int64).copy()
    if pkt.vld:
        v = pkt.value if value is None else value
        acc = acc + v * np.asarray(w_row, dtype=np.int64)
    if pkt.eor:
        if acc.min() < int_min(32) or acc.max() > int_max(32):
            raise OverflowTrap(f"accumulator overflow emitting row {cursor}")
        emitted = acc.copy()
        cursor += 1
    return PeState(acc, cursor, pe.sparse_flag), emitted


def check_arbitration(sched: TileSchedule, cfg: ArchConfig, dense_rows: int) -> None:
    """Re-verify every cycle's grants independently of the scheduler.

    Within one cycle and replica group, all valid packets sharing a bank
    must share one address; anything else would be silent corruption in
    hardware, so it raises here.
    """
    mask = sched.vld == 1
    if not mask.any():
        return
    cyc, pe = np.nonzero(mask)
    cols = sched.col[cyc, pe].astype(np.int64)
    if cols.min() < 0 or cols.max() >= dense_rows:
        raise ShapeError(f"packet column {int(cols.max())} outside dense tile rows {dense_rows}")
    group = pe // cfg.group_width
    bank = cols % cfg.groups
    key = (cyc.astype(np.int64) * cfg.replicas + group) * cfg.groups + bank
    order = np.lexsort((cols, key))
    k_sorted = key[order]
    c_sorted = cols[order]
    clash = (k_sorted[1:] == k_sorted[:-1]) & (c_sorted[1:] != c_sorted[:-1])
    if clash.any():
        at = int(np.flatnonzero(clash)[0])
        raise ArbitrationError(
            f"cycle {int(cyc[order][at])}: addresses {int(c_sorted[at])} and "
            f"{int(c_sorted[at + 1])} share a bank in one replica group")


def run_tile(sched: TileSchedule, ddm: DdmState, partials: np.ndarray,
             cfg: ArchConfig, x_dense: np.ndarray | None = None
             ) -> tuple[np.ndarray, ScheduleStats]:
    """Execute one tile schedule against loaded dense data.

    partials is the OMMB view for this output block (all m rows); the
    returned array is partials plus every PE's emitted rows. x_dense, when
    given, is the column-sliced dense left operand (dense mode): the
    multiplicand comes from it instead of the packet payload.
    """
    if sched.pe_count != cfg.pe_count:
        raise ValueError("schedule and config disagree on PE count")
    partials = np.asarray(partials, dtype=np.int64)
    if partials.ndim != 2 or partials.shape[1] != ddm.cols:
        raise ShapeError("partials block does not match dense tile lanes")
    check_arbitration(sched, cfg, ddm.rows)
    w_flats = [ddm.flat(r) for r in range(len(ddm.replicas))]
    out = partials.copy()
    for p in range(cfg.pe_count):
        rows = sched.pe_rows[p]
        sor_col = sched.sor[:, p].astype(bool)
        n_seg = int(sor_col.sum())
        if n_seg != len(rows) or int(sched.eor[:, p].sum()) != len(rows):
            raise ArbitrationError(f"PE {p}: row markers disagree with its row map")
        if n_seg == 0:
            continue
        w_flat = w_flats[cfg.group_of(p)]
        seg = np.cumsum(sor_col) - 1
        vmask = sched.vld[:, p] == 1
        contrib = np.zeros((n_seg, ddm.cols), dtype=np.int64)
        if vmask.any():
            segv = seg[vmask]
            colv = sched.col[vmask, p]
            if x_dense is None:
                mult = sched.value[vmask, p]
            else:
                mult = x_dense[rows[segv], colv]
            np.add.at(contrib, segv, mult[:, None] * w_flat[colv])
        out[rows] += contrib
    return out, schedule_stats(sched)


def data_move(y: DenseMatrix | np.ndarray, destination: str, cfg: ArchConfig) -> int:
    """Cycles to stream a result to its next home; OMMB keeps its copy."""
    if destination not in ("ddm", "ewm"):
        raise ValueError(f"unknown destination {destination!r}")
    data = y.data if isinstance(y, DenseMatrix) else np.asarray(y)
    return math.ceil(data.size / cfg.move_bw) if data.size else 0


@dataclass
class CycleReport:
    """Phase cycle totals plus the per-PE slot census of every schedule run."""

    pe_count: int
    mode: str = MODE_SDMM
    load_cycles: int = 0
    compute_cycles: int = 0
    move_cycles: int = 0
    compute: np.ndarray = None
    empty_row: np.ndarray = None
    collision: np.ndarray = None
    imbalance: np.ndarray = None
    tiles: list = field(default_factory=list)

    def __post_init__(self):
        for name in ("compute", "empty_row", "collision", "imbalance"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(self.pe_count, dtype=np.int64))

    @property
    def total_cycles(self) -> int:
        return self.load_cycles + self.compute_cycles + self.move_cycles

    def add_tile(self, stats: ScheduleStats, col_offset: int, out_offset: int) -> None:
        self.compute_cycles += stats.cycles
        self.compute += stats.valid
        self.empty_row += stats.empty_row
        self.collision += stats.stall_idle
        self.imbalance += stats.pad_idle
        self.tiles.append({"col_offset": col_offset, "out_offset": out_offset,
                           "cycles": stats.cycles, **stats.totals()})

    def check_identity(self) -> None:
        per_pe = self.compute + self.empty_row + self.collision + self.imbalance
        if not (per_pe == self.compute_cycles).all():
            raise AssertionError("per-PE slot census does not cover the compute phase")

    def merge(self, other: "CycleReport") -> None:
        if other.pe_count != self.pe_count:
            raise ValueError("cannot merge reports with different PE counts")
        self.load_cycles += other.load_cycles
        self.compute_cycles += other.compute_cycles
        self.move_cycles += other.move_cycles
        self.compute += other.compute
        self.empty_row += other.empty_row
        self.collision += other.collision
        self.imbalance += other.imbalance
        self.tiles.extend(other.tiles)

    def breakdown(self) -> dict:
        return {
            "mode": self.mode,
            "load_cycles": self.load_cycles,
            "compute_cycles": self.compute_cycles,
            "move_cycles": self.move_cycles,
            "total_cycles": self.total_cycles,
            "per_pe": {
                "compute": self.compute.tolist(),
                "empty_row": self.empty_row.tolist(),
                "collision": self.collision.tolist(),
                "imbalance": self.imbalance.tolist(),
            },
        }


def simulate_step(x, w: DenseMatrix, mode: str, cfg: ArchConfig
                  ) -> tuple[DenseMatrix, CycleReport]:
    """One full matrix product on the array: load, compute, move.

    SDMM streams a sparse left operand as packets; DMM sweeps every column
    with a shared address stream and pulls multiplicands from the dense left
    operand. Output accumulates across column tiles through the OMMB and is
    width-checked once at the end.
    """
    if mode == MODE_SDMM:
        if not isinstance(x, SparseMatrixCSR):
            raise TypeError("SDMM mode needs a sparse left operand")
    elif mode == MODE_DMM:
        if not isinstance(x, DenseMatrix):
            raise TypeError("DMM mode needs a dense left operand")
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if x.cols != w.rows:
        raise ShapeError(f"inner dims differ: {x.cols} vs {w.rows}")
    m = x.rows
    y = np.zeros((m, w.cols), dtype=np.int64)
    report = CycleReport(cfg.pe_count, mode=mode)
    cached_offset = None
    cached_sched = None
    pairs = (tile_inputs(x, w, cfg.tile_width, cfg.lanes) if mode == MODE_SDMM
             else _dense_pairs(x, w, cfg))
    for pair in pairs:
        if pair.col_offset != cached_offset:
            if mode == MODE_SDMM:
                cached_sched = build_sdmm_schedule(pair.sparse, cfg,
                                                   pair.col_offset, pair.out_offset)
            else:
                cached_sched = build_dmm_schedule(m, pair.dense.rows, cfg.pe_count)
            cached_offset = pair.col_offset
        ddm, load_c = load_tile(pair.dense, cfg)
        report.load_cycles += load_c
        block = y[:, pair.out_offset:pair.out_offset + pair.dense.cols]
        if mode == MODE_DMM:
            x_slice = x.data[:, pair.col_offset:pair.col_offset + pair.dense.rows]
        else:
            x_slice = None
        new_block, stats = run_tile(cached_sched, ddm, block, cfg, x_dense=x_slice)
        y[:, pair.out_offset:pair.out_offset + pair.dense.cols] = new_block
        report.add_tile(stats, pair.col_offset, pair.out_offset)
    report.move_cycles += data_move(y, "ewm", cfg)
    report.check_identity()
    check_fits(y, 32, "accumulator")
    return DenseMatrix(y, 32, x.frac_bits + w.frac_bits), report


def _dense_pairs(x: DenseMatrix, w: DenseMatrix, cfg: ArchConfig):
    """TilePair view of a dense left operand (structure only, no CSR build)."""
    for c0 in range(0, max(x.cols, 1), cfg.tile_width):
        c1 = min(c0 + cfg.tile_width, x.cols)
        for o0 in range(0, max(w.cols, 1), cfg.lanes):
            o1 = min(o0 + cfg.lanes, w.cols)
            yield TilePair(None, w.submatrix(c0, c1, o0, o1), c0, o0)
