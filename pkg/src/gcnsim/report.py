"""Run-report documents: JSON persistence, ideal-latency comparison, rendering.

A document bundles the phase totals and per-PE slot census of one inference
(or one standalone product) with the config that produced it. The ideal
comparison covers the sparse compute phase only: ideal cycles assume every
PE is busy every cycle, so efficiency = ideal / actual is the fraction of
sparse compute time that did mandatory work (nonzeros and empty-row
markers), the rest being collision stalls and imbalance pads.
"""

from __future__ import annotations

import json

from .runtime import RunReport
from .schedule import ArchConfig
from .simulator import MODE_SDMM

REPORT_VERSION = 1

# informational utilization benchmark: worst PE idle under a fifth of the
# sparse compute time on well-balanced workloads
IDLE_BENCHMARK = 0.20

_REQUIRED_KEYS = ("version", "label", "config", "phases", "steps", "sdmm")


class ReportFormatError(ValueError):
    """Report file is not a document this module wrote."""


def ideal_cycles(work: int, pe_count: int) -> int:
    """Cycles a perfectly balanced, stall-free array would need."""
    if work < 0 or pe_count < 1:
        raise ValueError("work must be >= 0 and pe_count >= 1")
    return -(-work // pe_count)


def _sdmm_census(report: RunReport) -> dict:
    """Sum the per-PE slot counters over the sparse steps."""
    sdmm = [r for _, r in report.steps if r.mode == MODE_SDMM]
    if not sdmm:
        return {"compute_cycles": 0, "pe_count": 0}
    k = sdmm[0].pe_count
    sums = {"valid": [0] * k, "empty_row": [0] * k,
            "collision": [0] * k, "imbalance": [0] * k}
    cycles = 0
    for r in sdmm:
        cycles += r.compute_cycles
        for name, key in (("compute", "valid"), ("empty_row", "empty_row"),
                          ("collision", "collision"), ("imbalance", "imbalance")):
            arr = getattr(r, name)
            for p in range(k):
                sums[key][p] += int(arr[p])
    return {"compute_cycles": cycles, "pe_count": k, **sums}


def report_document(report: RunReport, cfg: ArchConfig, label: str = "run",
                    verify: dict | None = None) -> dict:
    census = _sdmm_census(report)
    doc = {
        "version": REPORT_VERSION,
        "label": label,
        "config": {
            "pe_count": cfg.pe_count, "lanes": cfg.lanes, "groups": cfg.groups,
            "tile_width": cfg.tile_width, "replicas": cfg.replicas,
            "value_bits": cfg.value_bits, "load_bw": cfg.load_bw,
            "move_bw": cfg.move_bw,
        },
        "phases": {
            "load_cycles": sum(r.load_cycles for _, r in report.steps),
            "compute_cycles": sum(r.compute_cycles for _, r in report.steps),
            "move_cycles": sum(r.move_cycles for _, r in report.steps),
            "total_cycles": report.total_cycles(),
        },
        "steps": report.as_dict()["steps"],
        "sdmm": _ideal_block(census),
    }
    if verify is not None:
        doc["verify"] = dict(verify)
    return doc


def _ideal_block(census: dict) -> dict:
    if census["pe_count"] == 0:
        return {"compute_cycles": 0, "work": 0, "ideal_cycles": 0,
                "efficiency": None, "slots": {}, "per_pe": {},
                "worst_idle_fraction": 0.0, "idle_under_benchmark": True}
    k = census["pe_count"]
    cycles = census["compute_cycles"]
    work = sum(census["valid"]) + sum(census["empty_row"])
    ic = ideal_cycles(work, k)
    idle_frac = [(census["collision"][p] + census["imbalance"][p]) / cycles
                 if cycles else 0.0 for p in range(k)]
    worst = max(idle_frac)
    return {
        "compute_cycles": cycles,
        "work": work,
        "ideal_cycles": ic,
        "efficiency": ic / cycles if work else None,
        "slots": {key: sum(census[key]) for key in
                  ("valid", "empty_row", "collision", "imbalance")},
        "per_pe": {key: census[key] for key in
                   ("valid", "empty_row", "collision", "imbalance")},
        "idle_fraction": idle_frac,
        "worst_idle_fraction": worst,
        "idle_under_benchmark": worst < IDLE_BENCHMARK,
    }


def write_report(doc: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ReportFormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ReportFormatError(f"{path}: expected a JSON object")
    missing = [k for k in _REQUIRED_KEYS if k not in doc]
    if missing:
        raise ReportFormatError(f"{path}: missing keys {missing}")
    if doc["version"] != REPORT_VERSION:
        raise ReportFormatError(f"{path}: unsupported report version {doc['version']}")
    return doc


def render_report(doc: dict) -> str:
    """Tabular human-readable summary of one report document."""
    cfg = doc["config"]
    ph = doc["phases"]
    sd = doc["sdmm"]
    lines = [
        f"run: {doc['label']}",
        (f"array: {cfg['pe_count']} PEs x {cfg['lanes']} lanes, "
         f"tile {cfg['tile_width']}, {cfg['groups']} banks, "
         f"{cfg['replicas']} replica(s), H={cfg['value_bits']}"),
        (f"cycles: total {ph['total_cycles']}  load {ph['load_cycles']}  "
         f"compute {ph['compute_cycles']}  move {ph['move_cycles']}"),
    ]
    if sd["compute_cycles"]:
        slots = sd["slots"]
        lines.append(f"sparse compute: {sd['compute_cycles']} cycles, "
                     f"work {sd['work']} slots "
                     f"(valid {slots['valid']}, empty {slots['empty_row']}, "
                     f"stall {slots['collision']}, pad {slots['imbalance']})")
        eff = sd["efficiency"]
        lines.append(f"ideal: {sd['ideal_cycles']} cycles -> efficiency "
                     + (f"{eff:.4f}" if eff is not None else "n/a"))
        flag = "yes" if sd["idle_under_benchmark"] else "NO"
        lines.append(f"worst PE idle fraction: {sd['worst_idle_fraction']:.4f} "
                     f"(under {IDLE_BENCHMARK:.0%} benchmark: {flag})")
        lines.append("per-PE idle fraction: "
                     + " ".join(f"{f:.3f}" for f in sd["idle_fraction"]))
    if "verify" in doc:
        v = doc["verify"]
        lines.append(f"oracle: exact_match={v['exact_match']} "
                     f"max_abs_err={v['max_abs_err']:.6f} "
                     f"argmax_agreement={v['argmax_agreement']:.4f}")
    return "\n".join(lines) + "\n"
