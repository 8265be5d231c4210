"""Tiling and scheduling: from matrix pairs to per-cycle PE packet grids.

The pipeline is outer-product tiling (T-column slices of the sparse operand
against T-row slices of the dense operand), round-robin row assignment with
concatenation (row i feeds PE i mod K), zero-padding to a rectangular grid,
and a collision-stalling pass that serializes same-bank fetches within each
replica group.

Schedules are stored columnar (one numpy array per packet field, shaped
cycles x K) so million-packet tiles stay cheap; PcooPacket objects are only
materialized at the serialization boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .matrix import DenseMatrix, ShapeError, SparseMatrixCSR, int_max, int_min
from .pcoo import PcooPacket, log2_exact

# origin codes: who put each slot in the schedule
ORIGIN_VALID = 0      # a stored nonzero
ORIGIN_EMPTY_ROW = 1  # empty-row marker (sor=eor=1, vld=0)
ORIGIN_PAD = 2        # rectangularization fill (PE imbalance)
ORIGIN_STALL = 3      # idle injected by the collision pass

_IDLE_SLOT = (0, 0, 0, 0, 0, ORIGIN_STALL)

PACKET_VALUE_WIDTHS = (0, 4, 16)


@dataclass(frozen=True)
class ArchConfig:
    """Array geometry and memory layout knobs.

    pe_count PEs of `lanes` MAC lanes each; the dense tile is replicated
    `replicas` times (replica i serves the contiguous PE block i) and striped
    across `groups` banks by row index mod groups. Tile width is lanes*groups
    and must be a power of two for the packet column field.
    """

    pe_count: int
    lanes: int = 16
    replicas: int = 1
    groups: int = 32
    value_bits: int = 0
    load_bw: int = 64
    move_bw: int = 16

    def __post_init__(self):
        if self.pe_count < 1 or self.lanes < 1 or self.groups < 1:
            raise ValueError("pe_count, lanes, groups must all be >= 1")
        if self.replicas < 1 or self.pe_count % self.replicas:
            raise ValueError(f"replicas {self.replicas} must divide pe_count {self.pe_count}")
        if self.value_bits not in PACKET_VALUE_WIDTHS:
            raise ValueError(f"value_bits must be one of {PACKET_VALUE_WIDTHS}")
        if self.load_bw < 1 or self.move_bw < 1:
            raise ValueError("bandwidths must be >= 1")
        log2_exact(self.tile_width)

    @property
    def tile_width(self) -> int:
        return self.lanes * self.groups

    @property
    def bank_depth(self) -> int:
        return self.tile_width // self.groups  # = lanes

    @property
    def group_width(self) -> int:
        return self.pe_count // self.replicas

    def group_of(self, pe: int) -> int:
        return pe // self.group_width

    def bank_of(self, col: int) -> int:
        return col % self.groups


def config_for_tile(pe_count: int, tile_width: int, lanes: int = 16, **kw) -> ArchConfig:
    """ArchConfig from an explicit tile width instead of a group count."""
    if tile_width % lanes:
        raise ValueError(f"tile width {tile_width} not a multiple of {lanes} lanes")
    return ArchConfig(pe_count, lanes=lanes, groups=tile_width // lanes, **kw)


class TilePair(NamedTuple):
    """A T-column slice of the sparse operand with its T-row dense slice."""

    sparse: SparseMatrixCSR
    dense: DenseMatrix
    col_offset: int  # global column of sparse tile / row of dense tile
    out_offset: int  # global output column of the dense slice


@dataclass
class TileSchedule:
    """Rectangular cycles x K packet grid plus bookkeeping.

    pe_rows[p] lists the global row indices PE p owns, in emission order;
    origin tags every slot with who created it (see ORIGIN_* codes).
    """

    sor: np.ndarray
    eor: np.ndarray
    vld: np.ndarray
    col: np.ndarray
    value: np.ndarray
    origin: np.ndarray
    pe_rows: list = field(default_factory=list)
    col_offset: int = 0
    out_offset: int = 0

    @property
    def cycles(self) -> int:
        return self.sor.shape[0]

    @property
    def pe_count(self) -> int:
        return self.sor.shape[1]

    @classmethod
    def empty(cls, pe_count: int) -> "TileSchedule":
        z = lambda dt: np.zeros((0, pe_count), dtype=dt)
        return cls(z(np.uint8), z(np.uint8), z(np.uint8), z(np.int32), z(np.int64),
                   z(np.uint8), pe_rows=[np.empty(0, dtype=np.int64) for _ in range(pe_count)])

    def packet_at(self, cycle: int, pe: int) -> PcooPacket:
        return PcooPacket(int(self.sor[cycle, pe]), int(self.eor[cycle, pe]),
                          int(self.vld[cycle, pe]), int(self.col[cycle, pe]),
                          int(self.value[cycle, pe]))

    def to_packets(self) -> list[list[PcooPacket]]:
        grid = []
        for cyc in range(self.cycles):
            grid.append([self.packet_at(cyc, p) for p in range(self.pe_count)])
        return grid

    @classmethod
    def from_packets(cls, grid: list[list[PcooPacket]], pe_count: int | None = None,
                     **kw) -> "TileSchedule":
        """Rebuild from a packet grid. Idle slots cannot tell a pad from a
        stall after serialization, so they all come back as pads; the row
        map defaults to the round-robin rule unless the caller supplies one."""
        if pe_count is None:
            pe_count = len(grid[0]) if grid else 1
        if not grid:
            return cls.empty(pe_count)
        arr = np.array(grid, dtype=np.int64)  # cycles x K x 5
        sor = arr[:, :, 0].astype(np.uint8)
        eor = arr[:, :, 1].astype(np.uint8)
        vld = arr[:, :, 2].astype(np.uint8)
        origin = np.full(sor.shape, ORIGIN_PAD, dtype=np.uint8)
        origin[vld == 1] = ORIGIN_VALID
        origin[(vld == 0) & (sor == 1) & (eor == 1)] = ORIGIN_EMPTY_ROW
        if "pe_rows" not in kw:
            kw["pe_rows"] = [p + pe_count * np.arange(int(c), dtype=np.int64)
                             for p, c in enumerate(sor.sum(axis=0))]
        return cls(sor, eor, vld, arr[:, :, 3].astype(np.int32), arr[:, :, 4],
                   origin, **kw)

    def valid_count(self) -> int:
        return int(self.vld.sum())


@dataclass(frozen=True)
class ScheduleStats:
    """Slot census per PE: valid work, empty-row markers, stalls, pads."""

    valid: np.ndarray
    empty_row: np.ndarray
    stall_idle: np.ndarray
    pad_idle: np.ndarray
    cycles: int

    def totals(self) -> dict:
        return {
            "valid": int(self.valid.sum()),
            "empty_row": int(self.empty_row.sum()),
            "stall_idle": int(self.stall_idle.sum()),
            "pad_idle": int(self.pad_idle.sum()),
            "cycles": self.cycles,
        }

    def check_identity(self) -> None:
        per_pe = self.valid + self.empty_row + self.stall_idle + self.pad_idle
        if not (per_pe == self.cycles).all():
            raise AssertionError(f"slot census {per_pe.tolist()} != cycles {self.cycles}")


def schedule_stats(sched: TileSchedule) -> ScheduleStats:
    count = lambda code: np.count_nonzero(sched.origin == code, axis=0)
    stats = ScheduleStats(count(ORIGIN_VALID), count(ORIGIN_EMPTY_ROW),
                          count(ORIGIN_STALL), count(ORIGIN_PAD), sched.cycles)
    stats.check_identity()
    return stats


def tile_columns(x: SparseMatrixCSR, tile_width: int) -> list[SparseMatrixCSR]:
    """All T-column slices of x in one stable pass over the nonzeros.

    Equivalent to col_slice per tile but linear in nnz overall, which keeps
    preprocessing linear when the operand spans many tiles.
    """
    ntiles = max(1, -(-x.cols // tile_width))
    if ntiles == 1:
        return [x]
    rr = np.repeat(np.arange(x.rows), x.row_nnz())
    tile_of = x.col_idx // tile_width
    order = np.argsort(tile_of, kind="stable")  # keeps (row, col) order inside a tile
    bounds = np.searchsorted(tile_of[order], np.arange(ntiles + 1))
    tiles = []
    for t in range(ntiles):
        idx = order[bounds[t]:bounds[t + 1]]
        width = min(tile_width, x.cols - t * tile_width)
        row_ptr = np.concatenate([[0], np.cumsum(np.bincount(rr[idx], minlength=x.rows))])
        tiles.append(SparseMatrixCSR(x.rows, width, row_ptr,
                                     x.col_idx[idx] - t * tile_width,
                                     x.values[idx], x.bits, x.frac_bits))
    return tiles


def tile_inputs(x: SparseMatrixCSR, w: DenseMatrix, tile_width: int,
                lanes: int) -> list[TilePair]:
    """Split X into T-column tiles and W into matching T-row, C-column tiles.

    Pairs come back column-tile-major: all output tiles of column tile 0,
    then column tile 1, and so on. Edge tiles are ragged.
    """
    if x.cols != w.rows:
        raise ShapeError(f"X has {x.cols} columns but W has {w.rows} rows")
    pairs = []
    for ti, xt in enumerate(tile_columns(x, tile_width)):
        c0 = ti * tile_width
        c1 = min(c0 + tile_width, x.cols)
        for o0 in range(0, max(w.cols, 1), lanes):
            o1 = min(o0 + lanes, w.cols)
            pairs.append(TilePair(xt, w.submatrix(c0, c1, o0, o1), c0, o0))
    return pairs


def assign_rows(tile: SparseMatrixCSR, pe_count: int) -> TileSchedule:
    """Round-robin row assignment with concatenation (pre-stall schedule).

    Row i's packets are appended to PE i mod K; a row with no nonzeros
    contributes one empty-row marker so row numbering still advances. Short
    PE columns are zero-filled to the longest, and the grid is returned
    cycle-major.
    """
    if pe_count < 1:
        raise ValueError("pe_count must be >= 1")
    m = tile.rows
    if m == 0:
        return TileSchedule.empty(pe_count)
    row_nnz = tile.row_nnz()
    packets_per_row = np.maximum(row_nnz, 1)
    pe_of_row = np.arange(m, dtype=np.int64) % pe_count
    pe_load = np.bincount(pe_of_row, weights=packets_per_row,
                          minlength=pe_count).astype(np.int64)
    cycles = int(pe_load.max())

    # slot where each row's first packet lands inside its PE column
    order = np.argsort(pe_of_row, kind="stable")
    sorted_ppr = packets_per_row[order]
    running = np.cumsum(sorted_ppr) - sorted_ppr
    group_base = np.concatenate([[0], np.cumsum(pe_load)[:-1]])
    row_start = np.empty(m, dtype=np.int64)
    row_start[order] = running - group_base[pe_of_row[order]]

    shape = (cycles, pe_count)
    sor = np.zeros(shape, np.uint8)
    eor = np.zeros(shape, np.uint8)
    vld = np.zeros(shape, np.uint8)
    col = np.zeros(shape, np.int32)
    value = np.zeros(shape, np.int64)
    origin = np.full(shape, ORIGIN_PAD, np.uint8)

    nnz = tile.nnz
    if nnz:
        row_of_nz = np.repeat(np.arange(m), row_nnz)
        within = np.arange(nnz) - np.repeat(tile.row_ptr[:-1], row_nnz)
        slot = row_start[row_of_nz] + within
        pe = pe_of_row[row_of_nz]
        sor[slot, pe] = (within == 0)
        eor[slot, pe] = (within == row_nnz[row_of_nz] - 1)
        vld[slot, pe] = 1
        col[slot, pe] = tile.col_idx
        value[slot, pe] = tile.values
        origin[slot, pe] = ORIGIN_VALID

    empties = np.flatnonzero(row_nnz == 0)
    if len(empties):
        slot = row_start[empties]
        pe = pe_of_row[empties]
        sor[slot, pe] = 1
        eor[slot, pe] = 1
        origin[slot, pe] = ORIGIN_EMPTY_ROW

    pe_rows = [np.arange(p, m, pe_count, dtype=np.int64) for p in range(pe_count)]
    return TileSchedule(sor, eor, vld, col, value, origin, pe_rows=pe_rows)


def stall_collisions(sched: TileSchedule, cfg: ArchConfig) -> TileSchedule:
    """Serialize bank conflicts within each replica group (post-stall schedule).

    Per output cycle a valid packet is granted if its address was already
    granted this cycle (PEs may share a read) or its bank (col mod groups)
    is unclaimed; otherwise an idle slot is emitted and the packet retries.
    The scan order rotates by one PE per cycle so nobody is systematically
    favored. Groups that finish early are padded to the longest group.
    """
    if sched.pe_count != cfg.pe_count:
        raise ValueError(f"schedule has {sched.pe_count} PEs, config {cfg.pe_count}")
    k = cfg.pe_count
    n_in = sched.cycles
    if n_in == 0:
        return sched
    width = cfg.group_width
    g = cfg.groups
    cols_in = [
        list(zip(sched.sor[:, p].tolist(), sched.eor[:, p].tolist(),
                 sched.vld[:, p].tolist(), sched.col[:, p].tolist(),
                 sched.value[:, p].tolist(), sched.origin[:, p].tolist()))
        for p in range(k)
    ]
    out_cols: list[list] = [[] for _ in range(k)]
    for base in range(0, k, width):
        ptrs = [0] * width
        pending = width
        cyc = 0
        while pending:
            granted: set = set()
            blocked: set = set()
            for off in range(width):
                lp = (cyc + off) % width
                pe = base + lp
                i = ptrs[lp]
                if i >= n_in:
                    out_cols[pe].append(_IDLE_SLOT)
                    continue
                pkt = cols_in[pe][i]
                if pkt[2]:
                    addr = pkt[3]
                    if addr not in granted:
                        bank = addr % g
                        if bank in blocked:
                            out_cols[pe].append(_IDLE_SLOT)
                            continue
                        granted.add(addr)
                        blocked.add(bank)
                out_cols[pe].append(pkt)
                ptrs[lp] = i + 1
                if i + 1 == n_in:
                    pending -= 1
            cyc += 1
    longest = max(len(c) for c in out_cols)
    for c in out_cols:
        c.extend([_IDLE_SLOT] * (longest - len(c)))
    arr = np.array(out_cols, dtype=np.int64).transpose(1, 0, 2)  # cycles x K x 6
    return TileSchedule(arr[:, :, 0].astype(np.uint8), arr[:, :, 1].astype(np.uint8),
                        arr[:, :, 2].astype(np.uint8), arr[:, :, 3].astype(np.int32),
                        arr[:, :, 4], arr[:, :, 5].astype(np.uint8),
                        pe_rows=sched.pe_rows, col_offset=sched.col_offset,
                        out_offset=sched.out_offset)


def build_dmm_schedule(m_rows: int, t_eff: int, pe_count: int) -> TileSchedule:
    """Dense-mode schedule: one shared column sweep per batch of K rows.

    Every PE in a repetition walks columns 0..t_eff-1 in lockstep, so all
    fetches in a cycle share one address and the collision pass can never
    stall them. Repetitions past the row count idle the trailing PEs.
    """
    if t_eff < 1:
        raise ValueError("t_eff must be >= 1")
    if m_rows == 0:
        return TileSchedule.empty(pe_count)
    reps = math.ceil(m_rows / pe_count)
    cycles = reps * t_eff
    shape = (cycles, pe_count)
    sor = np.zeros(shape, np.uint8)
    eor = np.zeros(shape, np.uint8)
    vld = np.zeros(shape, np.uint8)
    col = np.zeros(shape, np.int32)
    value = np.zeros(shape, np.int64)
    origin = np.full(shape, ORIGIN_PAD, np.uint8)
    sweep = np.arange(t_eff, dtype=np.int32)
    for rep in range(reps):
        active = min(pe_count, m_rows - rep * pe_count)
        s = rep * t_eff
        sor[s, :active] = 1
        eor[s + t_eff - 1, :active] = 1
        vld[s:s + t_eff, :active] = 1
        col[s:s + t_eff, :active] = sweep[:, None]
        value[s:s + t_eff, :active] = 1
        origin[s:s + t_eff, :active] = ORIGIN_VALID
    pe_rows = [np.arange(p, m_rows, pe_count, dtype=np.int64) for p in range(pe_count)]
    return TileSchedule(sor, eor, vld, col, value, origin, pe_rows=pe_rows)


def check_schedule_values(sched: TileSchedule, value_bits: int) -> None:
    """Reject values a packet stream of this width could not carry."""
    if not sched.valid_count():
        return
    vals = sched.value[sched.vld == 1]
    if value_bits == 0:
        if (vals != 1).any():
            raise ValueError("0-bit value field requires a binary operand (all stored values 1)")
    else:
        lo, hi = int_min(value_bits), int_max(value_bits)
        if vals.min() < lo or vals.max() > hi:
            raise ValueError(f"operand values exceed the {value_bits}-bit packet field")


def build_sdmm_schedule(tile: SparseMatrixCSR, cfg: ArchConfig,
                        col_offset: int = 0, out_offset: int = 0) -> TileSchedule:
    """assign_rows then stall_collisions, with packet-width validation."""
    if tile.cols > cfg.tile_width:
        raise ShapeError(f"tile has {tile.cols} columns, max {cfg.tile_width}")
    pre = assign_rows(tile, cfg.pe_count)
    check_schedule_values(pre, cfg.value_bits)
    out = stall_collisions(pre, cfg)
    out.col_offset = col_offset
    out.out_offset = out_offset
    return out
