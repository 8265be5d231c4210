"""Batch command-line front-end.

Subcommands: gen (synthetic workload), preprocess (compress and schedule
sparse tiles to .pcoo streams), simulate (full inference with oracle check),
sweep (grid of configs to CSV), report (render saved report documents).
Array parameters come from flags or a JSON config file; flags win.

Exit codes: 0 success, 2 usage, 3 unreadable or malformed data, 4 invalid
configuration or operands, 5 accumulator overflow.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .formats import FileFormatError, export_bundle, ingest_bundle_dir, write_meta
from .graphs import degree_stats, gen_powerlaw, random_weights
from .matrix import OverflowTrap, ShapeError, normalize_adjacency
from .pcoo import StreamFormatError, make_header, serialize_stream
from .report import (
    ReportFormatError,
    read_report,
    render_report,
    report_document,
    write_report,
)
from .runtime import (
    KIND_GCN,
    KIND_SAGE,
    make_gcn,
    make_graphsage,
    mean_adjacency,
    packet_bits_for,
    run_model,
    verify_against_oracle,
)
from .schedule import build_sdmm_schedule, config_for_tile, schedule_stats, tile_columns

EXIT_OK = 0
EXIT_DATA = 3
EXIT_INVALID = 4
EXIT_OVERFLOW = 5

DEFAULTS = {
    "pe": 16, "replicas": 1, "tile": 512, "lanes": 16, "value_bits": None,
    "load_bw": 64, "move_bw": 16, "seed": 0, "jobs": 1,
}

SWEEP_FIELDS = [
    "pe", "replicas", "tile", "lanes", "total_cycles", "load_cycles",
    "compute_cycles", "move_cycles", "sdmm_compute_cycles", "sdmm_work",
    "ideal_cycles", "efficiency", "valid", "empty_row", "collision",
    "imbalance", "exact_match", "max_abs_err", "argmax_agreement",
]


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise FileFormatError(f"{path}: config must be a JSON object")
    unknown = set(doc) - set(DEFAULTS)
    if unknown:
        raise FileFormatError(f"{path}: unknown config keys {sorted(unknown)}")
    return doc


def resolve_settings(args) -> dict:
    """Defaults, then config file, then explicit flags."""
    merged = dict(DEFAULTS)
    if getattr(args, "config", None):
        merged.update(load_config(args.config))
    for key in DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    return merged


def arch_from(settings, **overrides):
    kw = {
        "replicas": settings["replicas"],
        "load_bw": settings["load_bw"],
        "move_bw": settings["move_bw"],
        "value_bits": settings["value_bits"] or 0,
    }
    kw.update(overrides)
    return config_for_tile(settings["pe"], settings["tile"],
                           settings["lanes"], **kw)


def _require_out(args) -> Path:
    if not args.out:
        raise ValueError("--out is required for this command")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- model assembly -----------------------------------------------------------


def build_model(bundle, kind: str, adjacency_mode: str, hidden: int,
                classes: int, layers: int, seed: int):
    """Model and adjacency operand for one bundle.

    Weights come from the bundle when present (for GraphSAGE the container
    holds self/neighbor blocks interleaved), otherwise a seeded random chain.
    """
    feat = bundle.features.cols
    if kind == KIND_SAGE:
        adjacency_mode = "mean"
    if kind == KIND_GCN:
        ws = bundle.weights or random_weights(
            [feat] + [hidden] * (layers - 1) + [classes], seed)
        model = make_gcn(ws, adjacency_mode)
    else:
        if bundle.weights:
            if len(bundle.weights) % 2:
                raise ValueError("GraphSAGE weight container must hold "
                                 "self/neighbor pairs")
            pairs = [(bundle.weights[i], bundle.weights[i + 1])
                     for i in range(0, len(bundle.weights), 2)]
        else:
            dims = [feat] + [hidden] * (layers - 1) + [classes]
            pairs = list(zip(random_weights(dims, seed),
                             random_weights(dims, seed + 1)))
        model = make_graphsage(pairs)
    if adjacency_mode == "mean":
        a = mean_adjacency(bundle.adjacency)
    else:
        a = normalize_adjacency(bundle.adjacency, adjacency_mode)
    return model, a


# -- commands -------------------------------------------------------------------


def cmd_gen(args) -> int:
    s = resolve_settings(args)
    out = _require_out(args)
    bundle = gen_powerlaw(args.nodes, args.degree, args.exponent, s["seed"],
                          args.features, args.density)
    paths = export_bundle(out, bundle)
    st = degree_stats(bundle.adjacency)
    print(f"generated {args.nodes} nodes, {st['edges']} edges "
          f"(mean degree {st['mean']:.2f}, max {st['max']}), "
          f"{bundle.features.nnz} feature nonzeros")
    for name, path in paths.items():
        print(f"  {name}: {path}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    s = resolve_settings(args)
    out = _require_out(args)
    bundle = ingest_bundle_dir(args.bundle)
    cfg = arch_from(s, value_bits=0)
    feat_bits = s["value_bits"]
    if feat_bits is None:
        feat_bits = packet_bits_for(bundle.features)
    rows = []
    operands = [("adjacency", bundle.adjacency, 0),
                ("features", bundle.features, feat_bits)]
    for kind, mat, h in operands:
        cfg_h = replace(cfg, value_bits=h)
        for i, tile in enumerate(tile_columns(mat, cfg.tile_width)):
            sched = build_sdmm_schedule(tile, cfg_h,
                                        col_offset=i * cfg.tile_width)
            name = f"{kind}{i:04d}.pcoo"
            hdr = make_header(cfg.tile_width, h, cfg.pe_count, sched.cycles)
            (out / name).write_bytes(serialize_stream(sched, hdr))
            st = schedule_stats(sched).totals()
            rows.append({"file": name, "kind": kind, "tile_index": i,
                         "value_bits": h, **st})
    totals = {key: sum(r[key] for r in rows)
              for key in ("valid", "empty_row", "stall_idle", "pad_idle", "cycles")}
    write_meta(out / "meta.json", {
        "config": {"pe_count": cfg.pe_count, "tile_width": cfg.tile_width,
                   "lanes": cfg.lanes, "groups": cfg.groups,
                   "replicas": cfg.replicas},
        "streams": rows,
        "totals": totals,
    })
    hdr = f"{'stream':<18}{'cycles':>8}{'valid':>8}{'empty':>8}{'stall':>8}{'pad':>8}"
    print(hdr)
    for r in rows:
        print(f"{r['file']:<18}{r['cycles']:>8}{r['valid']:>8}"
              f"{r['empty_row']:>8}{r['stall_idle']:>8}{r['pad_idle']:>8}")
    print(f"{'total':<18}{totals['cycles']:>8}{totals['valid']:>8}"
          f"{totals['empty_row']:>8}{totals['stall_idle']:>8}{totals['pad_idle']:>8}")
    return EXIT_OK


def _simulate_point(bundle, kind, adjacency_mode, args, settings):
    model, a = build_model(bundle, kind, adjacency_mode, args.hidden,
                           args.classes, args.layers, settings["seed"])
    cfg = arch_from(settings)
    logits, run = run_model(model, a, bundle.features, cfg)
    verify = verify_against_oracle(model, a, bundle.features, cfg,
                                   sim=(logits, run))
    return logits, report_document(run, cfg, label=args.bundle, verify=verify)


def cmd_simulate(args) -> int:
    s = resolve_settings(args)
    bundle = ingest_bundle_dir(args.bundle)
    logits, doc = _simulate_point(bundle, args.model, args.adjacency, args, s)
    print(render_report(doc), end="")
    if args.out:
        out = _require_out(args)
        write_report(doc, out / "report.json")
        with open(out / "logits.txt", "w") as fh:
            fh.write(f"# logits {logits.rows} {logits.cols} "
                     f"bits={logits.bits} frac_bits={logits.frac_bits}\n")
            np.savetxt(fh, logits.data, fmt="%d")
        print(f"wrote {out / 'report.json'} and {out / 'logits.txt'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    s = resolve_settings(args)
    out_path = Path(args.out) if args.out else None
    if out_path is None:
        raise ValueError("--out is required for this command")
    bundle = ingest_bundle_dir(args.bundle)
    grid = list(itertools.product(args.pe, args.replicas, args.tile))
    points = []
    for pe, r, t in grid:
        # surfaces invalid combinations before any work happens
        config_for_tile(pe, t, s["lanes"], replicas=r)
        points.append({**s, "pe": pe, "replicas": r, "tile": t})

    def run_point(point):
        _, doc = _simulate_point(bundle, args.model, args.adjacency, args, point)
        sd, ph, v = doc["sdmm"], doc["phases"], doc["verify"]
        return {
            "pe": point["pe"], "replicas": point["replicas"],
            "tile": point["tile"], "lanes": point["lanes"],
            "total_cycles": ph["total_cycles"], "load_cycles": ph["load_cycles"],
            "compute_cycles": ph["compute_cycles"], "move_cycles": ph["move_cycles"],
            "sdmm_compute_cycles": sd["compute_cycles"], "sdmm_work": sd["work"],
            "ideal_cycles": sd["ideal_cycles"], "efficiency": sd["efficiency"],
            **{k: sd["slots"][k] for k in ("valid", "empty_row", "collision",
                                           "imbalance")},
            "exact_match": v["exact_match"], "max_abs_err": v["max_abs_err"],
            "argmax_agreement": v["argmax_agreement"],
        }

    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
        writer.writeheader()
        fh.flush()
        if s["jobs"] > 1:
            with ThreadPoolExecutor(max_workers=s["jobs"]) as pool:
                results = pool.map(run_point, points)
                for row in results:
                    writer.writerow(row)
                    fh.flush()
        else:
            for point in points:
                writer.writerow(run_point(point))
                fh.flush()
    print(f"swept {len(points)} configs -> {out_path}")
    return EXIT_OK


def cmd_report(args) -> int:
    for i, path in enumerate(args.files):
        if i:
            print()
        print(render_report(read_report(path)), end="")
    return EXIT_OK


# -- wiring ---------------------------------------------------------------------


def _common_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--lanes", type=int, help="MAC lanes per PE")
    p.add_argument("--value-bits", dest="value_bits", type=int,
                   choices=(0, 4, 16), help="packet value field width")
    p.add_argument("--load-bw", dest="load_bw", type=int)
    p.add_argument("--move-bw", dest="move_bw", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--config", help="JSON file with the flags above")
    p.add_argument("--out", help="output file or directory")
    return p


def _geometry_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--pe", type=int, help="PE count")
    p.add_argument("--replicas", type=int, help="dense data replicas")
    p.add_argument("--tile", type=int, help="tile width (columns)")
    return p


def _model_flags(sp) -> None:
    sp.add_argument("--model", choices=(KIND_GCN, KIND_SAGE), default=KIND_GCN)
    sp.add_argument("--adjacency", choices=("binary", "sym_norm", "mean"),
                    default="binary")
    sp.add_argument("--hidden", type=int, default=16)
    sp.add_argument("--classes", type=int, default=4)
    sp.add_argument("--layers", type=int, default=2)


def build_parser() -> argparse.ArgumentParser:
    common = _common_parent()
    geometry = _geometry_parent()
    p = argparse.ArgumentParser(prog="gcnsim",
                                description="sparse GCN accelerator model")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common],
                       help="generate a synthetic power-law workload")
    g.add_argument("--nodes", type=int, default=256)
    g.add_argument("--degree", type=float, default=4.0)
    g.add_argument("--exponent", type=float, default=2.1)
    g.add_argument("--features", type=int, default=64)
    g.add_argument("--density", type=float, default=0.1)
    g.set_defaults(func=cmd_gen)

    pp = sub.add_parser("preprocess", parents=[common, geometry],
                        help="compress and schedule sparse operands")
    pp.add_argument("bundle", help="workload directory (from gen or export)")
    pp.set_defaults(func=cmd_preprocess)

    sim = sub.add_parser("simulate", parents=[common, geometry],
                         help="run quantized inference on the cycle model")
    sim.add_argument("bundle")
    _model_flags(sim)
    sim.set_defaults(func=cmd_simulate)

    sw = sub.add_parser("sweep", parents=[common],
                        help="simulate a grid of configs, emit CSV")
    sw.add_argument("bundle")
    _model_flags(sw)
    sw.add_argument("--pe", type=_int_list, default=[DEFAULTS["pe"]])
    sw.add_argument("--replicas", type=_int_list, default=[DEFAULTS["replicas"]])
    sw.add_argument("--tile", type=_int_list, default=[DEFAULTS["tile"]])
    sw.set_defaults(func=cmd_sweep)

    rp = sub.add_parser("report", help="render saved report documents")
    rp.add_argument("files", nargs="+")
    rp.set_defaults(func=cmd_report)
    return p


def _int_list(text: str) -> list[int]:
    try:
        values = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated int list: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileFormatError, StreamFormatError, ReportFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OverflowTrap as exc:
        print(f"overflow: {exc}", file=sys.stderr)
        return EXIT_OVERFLOW
    except (ShapeError, ValueError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
