"""Figure-data emitter: tidy CSVs from run, sweep and checkpoint outputs.

Every figure analog gets one CSV with fixed columns, written even when no
input feeds it (header only).  Rendering to PNG is optional and only
happens when asked for.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

FIGURES = {
    "delay_vs_power": ["value", "policy", "replicates", "avg_delay", "delay_ci", "drop_prob"],
    "delay_vs_loading": ["value", "policy", "replicates", "avg_delay", "delay_ci", "drop_prob"],
    "queue_cdf": ["policy", "source", "queue", "pmf", "cdf"],
    "convergence": ["slot", "m", "k", "queue", "value", "qfactor_ref"],
}
POWER_PARAMS = ("system.max_power_dbm", "system.max_power")
LOADING_PARAMS = ("arrivals.rate",)


class ReportError(RuntimeError):
    pass


def collect(inputs) -> dict:
    """Sort input files by kind: sweeps, metrics, checkpoints."""
    found = {"sweep": [], "metrics": [], "checkpoints": []}
    for item in inputs:
        path = Path(item)
        if not path.exists():
            raise ReportError(f"input {path} does not exist")
        files = sorted(path.rglob("*")) if path.is_dir() else [path]
        for f in files:
            if f.suffix == ".json":
                try:
                    fmt = json.loads(f.read_text()).get("format", "")
                except (json.JSONDecodeError, AttributeError):
                    continue
                if fmt.startswith("icilearn-sweep"):
                    found["sweep"].append(f)
                elif fmt.startswith("icilearn-metrics"):
                    found["metrics"].append(f)
            elif f.name.endswith("checkpoints.csv"):
                found["checkpoints"].append(f)
    return found


def sweep_rows(files, params) -> list[list]:
    rows = []
    for f in files:
        for r in json.loads(Path(f).read_text())["rows"]:
            if r["param"] in params:
                rows.append([r["value"], r["policy"], r["replicates"], r["avg_delay"],
                             r["delay_ci"], r["drop_prob"]])
    return rows


def cdf_rows(files) -> list[list]:
    rows = []
    for f in files:
        doc = json.loads(Path(f).read_text())
        hist = np.array(doc["queue_hist"]).sum(axis=(0, 1)).astype(float)
        total = hist.sum()
        if total == 0:
            continue
        pmf = hist / total
        cdf = np.cumsum(pmf)
        cdf[-1] = 1.0
        for qv, (pm, cd) in enumerate(zip(pmf, cdf)):
            rows.append([doc["policy"], Path(f).name, qv, pm, cd])
    return rows


def queue_cdf(queue_hist) -> np.ndarray:
    """CDF over queue levels from an ``(..., N+1)`` histogram summed over users."""
    h = np.asarray(queue_hist, dtype=float).reshape(-1, np.shape(queue_hist)[-1]).sum(axis=0)
    c = np.cumsum(h) / h.sum()
    c[-1] = 1.0
    return c


def convergence_rows(files, user=(0, 0)) -> list[list]:
    from .sim import read_checkpoints
    m, k = user
    rows = []
    for f in files:
        header, tables = read_checkpoints(f)
        ref = header["reference_patterns"][m]
        for t, (values, qf) in sorted(tables.items()):
            for qv in range(values.shape[2]):
                rows.append([t, m, k, qv, values[m, k, qv], qf[m, k, qv, ref]])
    return rows


def write_report(inputs, out_dir, plots: bool = False) -> dict:
    """Write one CSV per figure analog; returns ``{figure: path}``."""
    found = collect(inputs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = {
        "delay_vs_power": sweep_rows(found["sweep"], POWER_PARAMS),
        "delay_vs_loading": sweep_rows(found["sweep"], LOADING_PARAMS),
        "queue_cdf": cdf_rows(found["metrics"]),
        "convergence": convergence_rows(found["checkpoints"]),
    }
    paths = {}
    for name, cols in FIGURES.items():
        p = out / f"{name}.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            w.writerows(data[name])
        paths[name] = p
    if plots:
        paths.update(render(data, out))
    return paths


def render(data, out: Path) -> dict:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = {}
    for name, xlabel in (("delay_vs_power", "transmit power"), ("delay_vs_loading", "arrival rate")):
        rows = data[name]
        if not rows:
            continue
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for pol in sorted({r[1] for r in rows}):
            pts = sorted((r[0], r[3], r[4]) for r in rows if r[1] == pol)
            x, y, e = zip(*pts)
            ax.errorbar(x, y, yerr=e, marker="o", capsize=3, label=pol)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("average delay (slots)")
        ax.legend()
        fig.tight_layout()
        p = out / f"{name}.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths[name + "_png"] = p
    if data["queue_cdf"]:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for src in sorted({r[1] for r in data["queue_cdf"]}):
            pts = [r for r in data["queue_cdf"] if r[1] == src]
            ax.step([r[2] for r in pts], [r[4] for r in pts], where="post", label=pts[0][0])
        ax.set_xlabel("queue length")
        ax.set_ylabel("CDF")
        ax.legend()
        fig.tight_layout()
        p = out / "queue_cdf.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths["queue_cdf_png"] = p
    if data["convergence"]:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        rows = data["convergence"]
        for qv in sorted({r[3] for r in rows}):
            pts = [r for r in rows if r[3] == qv]
            ax.plot([r[0] for r in pts], [r[4] for r in pts], marker=".", label=f"V({qv})")
        ax.set_xscale("log")
        ax.set_xlabel("slot")
        ax.set_ylabel("per-user value")
        ax.legend()
        fig.tight_layout()
        p = out / "convergence.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths["convergence_png"] = p
    return paths
