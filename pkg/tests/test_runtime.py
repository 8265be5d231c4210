"""Multi-layer runtime: hand traces, sim/oracle agreement, error vs real math."""

import numpy as np
import pytest

from gcnsim.matrix import (
    DenseMatrix,
    OverflowTrap,
    ShapeError,
    SparseMatrixCSR,
    dequantize,
    dmm_reference,
    normalize_adjacency,
    relu,
    requantize16,
    sdmm_reference,
)
from gcnsim.runtime import (
    KIND_GCN,
    KIND_SAGE,
    LayerSpec,
    ModelSpec,
    RunReport,
    align_add,
    make_gcn,
    make_graphsage,
    mean_adjacency,
    packet_bits_for,
    run_gcn,
    run_graphsage,
    run_model,
    run_oracle,
    verify_against_oracle,
)
from gcnsim.schedule import config_for_tile
from gcnsim.simulator import MODE_DMM, MODE_SDMM


def csr_raw(grid, bits=4, frac=3):
    return SparseMatrixCSR.from_dense_raw(np.array(grid), bits, frac)


def dense_raw(grid, bits=4, frac=3):
    return DenseMatrix(np.array(grid), bits, frac)


def path3_adjacency():
    # nodes 0-1-2, undirected, no self loops
    a = csr_raw([[0, 1, 0], [1, 0, 1], [0, 1, 0]], bits=4, frac=0)
    return normalize_adjacency(a, "binary")


def random_model_inputs(rng, kind):
    n = int(rng.integers(3, 20))
    f = int(rng.integers(2, 10))
    h = int(rng.integers(2, 8))
    c = int(rng.integers(2, 6))
    mask = rng.random((n, n)) < 0.3
    np.fill_diagonal(mask, rng.random(n) < 0.5)
    adj = SparseMatrixCSR.from_dense_raw(mask.astype(np.int64), 4, 0)
    x0 = csr_raw(np.where(rng.random((n, f)) < 0.5,
                          rng.integers(-8, 8, (n, f)), 0))
    def w(r, cc):
        return dense_raw(rng.integers(-8, 8, (r, cc)))
    if kind == KIND_GCN:
        mode = rng.choice(["binary", "sym_norm"])
        a = normalize_adjacency(adj, mode)
        model = make_gcn([w(f, h), w(h, c)], adjacency_mode=mode)
    else:
        a = mean_adjacency(adj)
        model = make_graphsage([(w(f, h), w(f, h)), (w(h, c), w(h, c))])
    return model, a, x0


# -- hand traces ------------------------------------------------------------


def test_two_layer_gcn_path_graph_hand_trace():
    """Every intermediate of this trace was worked out on paper."""
    a = path3_adjacency()
    x0 = csr_raw([[4, -2], [1, 3], [-8, 7]])
    w0 = dense_raw([[2, -1], [3, 4]])
    w1 = dense_raw([[1, 2], [-2, 1]])
    model = make_gcn([w0, w1])
    cfg = config_for_tile(pe_count=2, tile_width=16)
    logits, report = run_gcn(model, a, x0, cfg)
    # layer 0: XW=[[2,-12],[11,11],[5,36]] f6 -> <<9 at f15, aggregate over
    # the path, relu is a no-op; layer 1 lands at f15 after a 3-bit round.
    assert logits.frac_bits == 15
    assert logits.bits == 16
    expect = [[-2624, 2432], [-1408, 4224], [-2624, 2432]]
    assert np.array_equal(logits.data, np.array(expect))
    labels = [lbl for lbl, _ in report.steps]
    assert labels == ["layer0.combine", "layer0.aggregate",
                      "layer1.combine", "layer1.aggregate"]
    modes = [r.mode for _, r in report.steps]
    assert modes == [MODE_SDMM, MODE_SDMM, MODE_DMM, MODE_SDMM]


def test_identity_adjacency_reduces_to_dense_chain():
    rng = np.random.default_rng(7)
    x0 = csr_raw(rng.integers(-8, 8, (5, 3)))
    w0 = dense_raw(rng.integers(-8, 8, (3, 4)))
    w1 = dense_raw(rng.integers(-8, 8, (4, 2)))
    eye = normalize_adjacency(csr_raw(np.eye(5, dtype=np.int64), frac=0), "binary")
    cfg = config_for_tile(pe_count=2, tile_width=16)
    logits, _ = run_gcn(make_gcn([w0, w1]), eye, x0, cfg)

    x = x0.to_dense()
    for i, w in enumerate([w0, w1]):
        prod = x.data @ w.data
        xw = requantize16(DenseMatrix(prod, 32, x.frac_bits + w.frac_bits))
        y = relu(DenseMatrix(xw.data, 32, xw.frac_bits)) if i == 0 \
            else DenseMatrix(xw.data, 32, xw.frac_bits)
        x = requantize16(y)
    assert logits.frac_bits == x.frac_bits
    assert np.array_equal(logits.data, x.data)


def test_zero_features_give_zero_logits():
    a = path3_adjacency()
    x0 = csr_raw(np.zeros((3, 2), dtype=np.int64))
    model = make_gcn([dense_raw([[2, -1], [3, 4]]), dense_raw([[1, 2], [-2, 1]])])
    logits, _ = run_gcn(model, a, x0, config_for_tile(2, 16))
    assert x0.nnz == 0
    assert not logits.data.any()


def test_single_node_graphsage_self_loop():
    # one node with a self loop: mean weight is exactly 1, so the layer is
    # X @ Wself + X @ Wneigh after the neighbor product's 16-bit round trip
    a = mean_adjacency(csr_raw([[1]], frac=0))
    assert a.values.tolist() == [1 << 14] and a.frac_bits == 14
    x0 = csr_raw([[3, -5]])
    ws = dense_raw([[2, 1], [0, 3]])
    wn = dense_raw([[-1, 2], [4, 0]])
    model = make_graphsage([(ws, wn)])
    logits, _ = run_graphsage(model, a, x0, config_for_tile(2, 16))

    self_part = DenseMatrix(x0.to_dense().data @ ws.data, 32, 6)
    xn16 = requantize16(DenseMatrix(x0.to_dense().data @ wn.data, 32, 6))
    neigh = DenseMatrix((1 << 14) * xn16.data, 32, 14 + xn16.frac_bits)
    expect = requantize16(align_add(self_part, neigh))
    assert logits.frac_bits == expect.frac_bits
    assert np.array_equal(logits.data, expect.data)


# -- sim vs oracle ----------------------------------------------------------


def test_sim_matches_oracle_bit_for_bit():
    rng = np.random.default_rng(101)
    kinds = [KIND_GCN, KIND_SAGE]
    for trial in range(16):
        model, a, x0 = random_model_inputs(rng, kinds[trial % 2])
        k = int(rng.choice([1, 2, 4]))
        width = int(rng.choice([16, 32, 64]))
        r = int(rng.choice([d for d in (1, 2) if k % d == 0]))
        cfg = config_for_tile(k, width, replicas=r)
        res = verify_against_oracle(model, a, x0, cfg)
        assert res["exact_match"], f"trial {trial} diverged from the oracle"
        assert res["total_cycles"] > 0


def test_run_model_dispatches_and_reports():
    rng = np.random.default_rng(33)
    model, a, x0 = random_model_inputs(rng, KIND_GCN)
    cfg = config_for_tile(2, 32)
    logits, report = run_model(model, a, x0, cfg)
    oracle = run_oracle(model, a, x0)
    assert np.array_equal(logits.data, oracle.data)
    assert report.total_cycles() == sum(r.total_cycles for _, r in report.steps)
    sdmm = sum(r.compute_cycles for _, r in report.steps if r.mode == MODE_SDMM)
    assert report.sdmm_compute_cycles() == sdmm
    d = report.as_dict()
    assert d["total_cycles"] == report.total_cycles()
    assert len(d["steps"]) == len(report.steps)
    assert all("per_pe" in s for s in d["steps"])


def test_merged_report_keeps_accounting_identity():
    rng = np.random.default_rng(55)
    model, a, x0 = random_model_inputs(rng, KIND_SAGE)
    _, report = run_model(model, a, x0, config_for_tile(4, 16))
    m = report.merged()
    slots = m.compute.sum() + m.empty_row.sum() + m.collision.sum() + m.imbalance.sum()
    assert slots == m.compute_cycles * m.pe_count
    with pytest.raises(ValueError):
        RunReport().merged()


def test_aggregation_order_is_exact_in_integers():
    # A(XW) == (AX)W holds exactly on the integer kernels, so running
    # combination first loses nothing
    rng = np.random.default_rng(11)
    for _ in range(10):
        n, f, c = rng.integers(2, 10, 3)
        a = SparseMatrixCSR.from_dense_raw(
            (rng.random((n, n)) < 0.4).astype(np.int64), 4, 0)
        x = csr_raw(rng.integers(-8, 8, (n, f)))
        w = dense_raw(rng.integers(-8, 8, (f, c)))
        left = sdmm_reference(a, sdmm_reference(x, w))
        ax = sdmm_reference(a, x.to_dense())
        right = dmm_reference(DenseMatrix(ax.data, 32, ax.frac_bits), w)
        assert left.frac_bits == right.frac_bits
        assert np.array_equal(left.data, right.data)


# -- error vs real arithmetic -----------------------------------------------


def test_quantization_error_small_and_argmax_stable():
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(6):
        model, a, x0 = random_model_inputs(rng, KIND_GCN)
        res = verify_against_oracle(model, a, x0, config_for_tile(2, 16))
        assert res["exact_match"]
        worst = max(worst, res["max_abs_err"])
        assert res["argmax_agreement"] >= 0.8
    # the only error sources are the 16-bit requantize points
    assert worst < 0.5


def test_graphsage_error_vs_real_reference():
    rng = np.random.default_rng(303)
    model, a, x0 = random_model_inputs(rng, KIND_SAGE)
    res = verify_against_oracle(model, a, x0, config_for_tile(2, 16))
    assert res["exact_match"]
    assert res["max_abs_err"] < 0.5


# -- spec validation and helpers --------------------------------------------


def test_model_spec_rejects_bad_shapes_and_kinds():
    w = dense_raw([[1, 2], [3, 4]])
    with pytest.raises(ValueError):
        ModelSpec("transformer", [LayerSpec(w)])
    with pytest.raises(ValueError):
        ModelSpec(KIND_GCN, [])
    with pytest.raises(ValueError):
        LayerSpec(w, activation="gelu")
    with pytest.raises(ShapeError):
        make_gcn([w, dense_raw([[1, 2], [3, 4], [5, 6]])])
    with pytest.raises(ValueError):
        ModelSpec(KIND_SAGE, [LayerSpec(w)])  # missing self block
    with pytest.raises(ShapeError):
        ModelSpec(KIND_SAGE, [LayerSpec(w, weight_self=dense_raw([[1], [2]]))])
    with pytest.raises(ValueError):
        run_gcn(make_graphsage([(w, w)]), path3_adjacency(),
                csr_raw([[1, 0], [0, 1], [1, 1]]), config_for_tile(2, 16))
    with pytest.raises(ValueError):
        run_graphsage(make_gcn([w]), path3_adjacency(),
                      csr_raw([[1, 0], [0, 1], [1, 1]]), config_for_tile(2, 16))


def test_mean_adjacency_values_and_isolated_rows():
    a = csr_raw([[0, 1, 0], [1, 0, 1], [0, 1, 0]], frac=0)
    m = mean_adjacency(a)
    assert m.bits == 16 and m.frac_bits == 14
    assert m.values.tolist() == [16384, 8192, 8192, 16384]
    assert m.col_idx.tolist() == [1, 0, 2, 1]
    iso = csr_raw([[1, 0], [0, 0]], frac=0)
    miso = mean_adjacency(iso)
    assert miso.row_nnz().tolist() == [1, 0]
    with pytest.raises(ShapeError):
        mean_adjacency(csr_raw([[1, 0, 0], [0, 1, 0]], frac=0))


def test_align_add_shifts_exactly():
    a = DenseMatrix(np.array([[8]]), 32, 3)
    b = DenseMatrix(np.array([[2]]), 32, 5)
    out = align_add(a, b)
    assert out.frac_bits == 5
    assert out.data.tolist() == [[34]]  # 1.0 + 0.0625 at scale 2^-5
    with pytest.raises(ShapeError):
        align_add(a, DenseMatrix(np.array([[1, 2]]), 32, 3))
    big = DenseMatrix(np.array([[(1 << 31) - 1]]), 32, 0)
    with pytest.raises(OverflowTrap):
        align_add(big, DenseMatrix(np.array([[1]]), 32, 0))


def test_packet_bits_for_picks_narrowest_field():
    assert packet_bits_for(csr_raw([[1, 0], [0, 1]], frac=0)) == 0
    assert packet_bits_for(csr_raw([[1, 0], [0, -2]])) == 4
    assert packet_bits_for(csr_raw(np.zeros((2, 2), dtype=np.int64))) == 0
    wide = SparseMatrixCSR.from_dense_raw(np.array([[300, 0]]), 16, 4)
    assert packet_bits_for(wide) == 16
    ones16 = SparseMatrixCSR.from_dense_raw(np.array([[1, 0]]), 16, 0)
    assert packet_bits_for(ones16) == 0


def test_real_reference_zero_error_without_requantize_effects():
    # one layer, tiny magnitudes: the requantize scale covers everything the
    # layer produced, so sim output dequantizes to the exact real result
    a = path3_adjacency()
    x0 = csr_raw([[1, 0], [0, 1], [1, 1]])
    model = make_gcn([dense_raw([[1, 1], [1, -1]])])
    res = verify_against_oracle(model, a, x0, config_for_tile(2, 16))
    assert res["exact_match"]
    assert res["max_abs_err"] == 0.0
    assert res["argmax_agreement"] == 1.0
