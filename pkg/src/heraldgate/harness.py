"""Experiment orchestration, seeding and report bundles.

Every random number derives from the run seed through
:func:`substream_seed` keyed by (experiment, cell), so reruns are
bit-identical and cells do not share streams.
"""

from __future__ import annotations

import csv
import io
import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load, resolve_parameter, with_parameter
from .imperfections import error_budget
from .protocol import BELL_NAMES, PhysicalRunner, phase_audit
from .tomography import (
    TT_LABELS,
    ZeroHeraldsError,
    analytic_bell_fidelity,
    analytic_truth_table,
    bell_experiment,
    matrix_to_json,
    truth_table_experiment,
)


def substream_seed(seed: int, experiment: str, cell=0) -> int:
    """64-bit seed for one named cell of one experiment."""
    key = zlib.crc32(f"{experiment}/{cell}".encode())
    ss = np.random.SeedSequence([seed & 0xFFFFFFFF, seed >> 32, key])
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | int(hi) << 32


def make_runner(rc: RunConfig, cell: str = "runner") -> PhysicalRunner:
    return PhysicalRunner(rc.protocol, rc.imperfections, n_draws=rc.run.draws,
                          seed=substream_seed(rc.seed, rc.experiment, cell))


@dataclass
class ReportBundle:
    experiment: str
    results: dict
    tables: dict[str, list[list]] = field(default_factory=dict)  # name -> rows incl. header
    plots: dict[str, list[list]] = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    status: str = "ok"

    def to_json(self) -> str:
        d = {"experiment": self.experiment, "status": self.status,
             "provenance": self.provenance, "results": self.results}
        return json.dumps(_finite(d), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir, fmt: str = "json") -> list[Path]:
        """Write the bundle below ``out_dir`` and return the files written."""
        root = Path(out_dir)
        root.mkdir(parents=True, exist_ok=True)
        written = []

        def put(name, text):
            p = root / name
            p.write_text(text)
            written.append(p)

        put("provenance.json", json.dumps(self.provenance, indent=2, sort_keys=True) + "\n")
        if fmt == "json":
            put("results.json", self.to_json())
        for name, rows in self.tables.items():
            if fmt == "csv" or name in ("budget", "sweep"):
                put(f"{name}.csv", _csv(rows))
        for name, rows in self.plots.items():
            put(f"plot_{name}.csv", _csv(rows))
        return written


def _csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _finite(x):
    # JSON has no inf/nan
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_finite(v) for v in x]
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def provenance(rc: RunConfig) -> dict:
    return {"config_hash": rc.hash(), "seed": rc.seed, "version": __version__,
            "experiment": rc.experiment, "analytic": rc.analytic}


# --------------------------------------------------------------------------
# experiments

def _truth_table(rc: RunConfig) -> ReportBundle:
    runner = make_runner(rc)
    if rc.analytic:
        tt = analytic_truth_table(runner)
    else:
        tt = truth_table_experiment(runner, rc.run.shots,
                                    seed=substream_seed(rc.seed, "truth-table", "shots"))
    res = tt.to_dict()
    res["success_probability"] = runner.success_probability()
    rows = [["input", "output", "probability", "error"]]
    for i, a in enumerate(TT_LABELS):
        for j, b in enumerate(TT_LABELS):
            rows.append([a, b, float(tt.probabilities[i, j]), float(tt.errors[i, j])])
    table = [["input", *TT_LABELS]] + [[a, *map(float, tt.probabilities[i])]
                                        for i, a in enumerate(TT_LABELS)]
    return ReportBundle("truth-table", res, {"truth_table": table}, {"fig2_truth_table": rows})


def _matrix_rows(m: np.ndarray) -> list[list]:
    labels = ["uz uz", "uz dz", "dz uz", "dz dz"]
    return [["row", *labels]] + [[labels[i], *map(float, m[i])] for i in range(4)]


def _bell(rc: RunConfig) -> ReportBundle:
    runner = make_runner(rc)
    results, plots = {}, {}
    table = [["input", "target", "fidelity", "fidelity_err", "exact_fidelity", "n_heralds"]]
    for i, key in enumerate(BELL_NAMES):
        if rc.analytic:
            p, rho = runner.run(key)
            f = analytic_bell_fidelity(runner, key)
            entry = {"input": key, "target": BELL_NAMES[key], "fidelity": f, "fidelity_err": 0.0,
                     "exact_fidelity": f, "success_probability": p, "rho": matrix_to_json(rho)}
            n = 0
        else:
            tr = bell_experiment(runner, key, rc.run.heralds,
                                 seed=substream_seed(rc.seed, "bell", i), n_boot=rc.run.bootstrap)
            entry, rho, n = tr.to_dict(), tr.rho.matrix, tr.n_heralds
        results[key] = entry
        table.append([key, entry["target"], entry["fidelity"], entry["fidelity_err"],
                      entry["exact_fidelity"], n])
        plots[f"fig3_real_{key}"] = _matrix_rows(np.real(rho))
        plots[f"figS1_imag_{key}"] = _matrix_rows(np.imag(rho))
    mean = float(np.mean([r["fidelity"] for r in results.values()]))
    return ReportBundle("bell", {"states": results, "mean_fidelity": mean},
                        {"bell": table}, plots)


def _budget(rc: RunConfig) -> ReportBundle:
    b = error_budget(rc.protocol, rc.imperfections, shots_per_cell=rc.run.draws,
                     seed=rc.seed, n_boot=rc.run.bootstrap)
    rows = [["cause", "dF_truth", "dF_truth_err", "dF_bell", "dF_bell_err"]]
    for r in [*b.rows, b.total]:
        rows.append([r.cause, r.delta_f_truth, r.delta_f_truth_err, r.delta_f_bell,
                     r.delta_f_bell_err])
    st, sb = b.sum_rows()
    res = {
        "baseline_truth": b.baseline_truth, "baseline_bell": b.baseline_bell,
        "rows": [vars(r) for r in b.rows], "total": vars(b.total),
        "sum_of_rows": {"truth": st, "bell": sb},
    }
    return ReportBundle("budget", res, {"budget": rows})


def _phase_audit(rc: RunConfig) -> ReportBundle:
    pa = phase_audit(make_runner(rc))
    d = pa.to_dict()
    return ReportBundle("phase-audit", d, {"phase_audit": [list(d), list(d.values())]})


def _metrics(rc: RunConfig) -> dict:
    runner = make_runner(rc, "sweep")
    p = runner.success_probability()
    try:
        truth = analytic_truth_table(runner).fidelity
        bell = float(np.mean([analytic_bell_fidelity(runner, k) for k in BELL_NAMES]))
    except ZeroHeraldsError:
        # nothing heralded (e.g. mean_n = 0 without dark counts): fidelities undefined
        truth = bell = math.nan
    return {"truth_fidelity": truth, "bell_fidelity": bell, "success_probability": p}


def sweep(rc: RunConfig, parameter: str | None = None, grid=None) -> ReportBundle:
    """Analytic metrics at each grid point; the same seed derivation for every point."""
    parameter = parameter or rc.sweep_parameter
    grid = rc.sweep_grid if grid is None else tuple(float(g) for g in grid)
    if not parameter:
        raise ValueError("sweep needs a parameter")
    path = resolve_parameter(parameter)
    if not grid:
        raise ValueError("sweep needs a non-empty grid")
    grid = sorted(grid)
    rows = [[path, "truth_fidelity", "bell_fidelity", "success_probability"]]
    points = []
    for v in grid:
        m = _metrics(with_parameter(rc, path, v))
        points.append({"value": v, **m})
        rows.append([v, m["truth_fidelity"], m["bell_fidelity"], m["success_probability"]])
    return ReportBundle("sweep", {"parameter": path, "points": points}, {"sweep": rows})


_DISPATCH = {"truth-table": _truth_table, "bell": _bell, "budget": _budget,
             "phase-audit": _phase_audit, "sweep": sweep}


def run_config(rc: RunConfig) -> ReportBundle:
    bundle = _DISPATCH[rc.experiment](rc)
    bundle.provenance = provenance(rc)
    return bundle


def run(config_path) -> ReportBundle:
    """Load a config file, run its experiment and write the bundle."""
    rc = load(config_path)
    bundle = run_config(rc)
    bundle.write(rc.out_dir, rc.fmt)
    return bundle


__all__ = ["ReportBundle", "make_runner", "provenance", "run", "run_config",
           "substream_seed", "sweep"]
