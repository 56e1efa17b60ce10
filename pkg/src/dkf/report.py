"""Metric emission: delimited per-algorithm CSV files (the machine
contract) plus matplotlib renderings of the same series written next to
them."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ValidationError
from .runner import MetricsSeries


def _float_repr(v: float) -> str:
    return repr(float(v))


def csv_header(series: MetricsSeries) -> str:
    n_sensors = series.triggers.shape[1] if series.triggers.size else 0
    if set(series.rmse) == {"pos", "vel"}:
        rmse_cols = ["rmse_pos", "rmse_vel"]
    else:
        rmse_cols = ["rmse"]
    trig_cols = [f"triggers_s{i + 1}" for i in range(n_sensors)]
    return ",".join(["k"] + rmse_cols + ["me", "mean_trace_p"] + trig_cols)


def emit_csv(series: MetricsSeries, path: str | Path) -> Path:
    """Write one metric series; LF line endings, shortest round-trip
    float formatting, rows ordered by k."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rmse_keys = ["pos", "vel"] if set(series.rmse) == {"pos", "vel"} else list(series.rmse)
    lines = [csv_header(series)]
    for idx, k in enumerate(series.k):
        cells = [str(int(k))]
        cells += [_float_repr(series.rmse[g][idx]) for g in rmse_keys]
        cells.append(_float_repr(series.me[idx]))
        cells.append(_float_repr(series.mean_trace_p[idx]))
        cells += [str(int(c)) for c in series.triggers[idx]]
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", newline="\n")
    return path


def parse_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Read a metrics CSV back into column arrays keyed by header name."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValidationError(f"{path}: empty metrics file")
    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:] if line]
    cols = {name: np.array([float(r[j]) for r in rows]) for j, name in enumerate(header)}
    return cols


def emit_all(results: dict, outdir: str | Path) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    return [emit_csv(res.series, outdir / f"{name}.csv") for name, res in results.items()]


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------


def render_figures(results: dict, outdir: str | Path) -> list[Path]:
    """Render the RMSE / mean-error curves and, for event-triggered
    algorithms, the per-sensor trigger raster, as PNG files alongside the
    CSV output."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    first = next(iter(results.values())).series
    groups = ["pos", "vel"] if set(first.rmse) == {"pos", "vel"} else list(first.rmse)

    fig, axes = plt.subplots(len(groups), 1, figsize=(7, 3 * len(groups)), sharex=True)
    axes = np.atleast_1d(axes)
    for ax, g in zip(axes, groups):
        for name, res in results.items():
            ax.plot(res.series.k, res.series.rmse[g], label=name, linewidth=1.2)
        ax.set_ylabel(f"RMSE ({g})")
        ax.set_yscale("log")
        ax.grid(True, alpha=0.3)
    axes[0].legend(loc="upper right", fontsize=8)
    axes[-1].set_xlabel("k")
    fig.tight_layout()
    p = outdir / "rmse.png"
    fig.savefig(p, dpi=130)
    plt.close(fig)
    written.append(p)

    fig, ax = plt.subplots(figsize=(7, 3.2))
    for name, res in results.items():
        ax.plot(res.series.k, res.series.me, label=name, linewidth=1.2)
    ax.set_xlabel("k")
    ax.set_ylabel("mean estimation error")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    p = outdir / "me.png"
    fig.savefig(p, dpi=130)
    plt.close(fig)
    written.append(p)

    for name, res in results.items():
        trig = res.series.triggers
        if not trig.any() or trig.all():
            continue  # nothing event-gated to show
        fig, ax = plt.subplots(figsize=(7, 2.6))
        ks, sensors = np.nonzero(trig)
        ax.scatter(res.series.k[ks], sensors + 1, s=3, marker="|")
        ax.set_xlabel("k")
        ax.set_ylabel("sensor")
        ax.set_yticks(np.arange(1, trig.shape[1] + 1))
        ax.set_title(f"update events: {name}")
        fig.tight_layout()
        p = outdir / f"triggers_{name}.png"
        fig.savefig(p, dpi=130)
        plt.close(fig)
        written.append(p)
    return written


# ---------------------------------------------------------------------------
# Per-step node log (optional, one row per run/step/sensor)
# ---------------------------------------------------------------------------


def emit_node_log(result, outdir: str | Path) -> Path | None:
    """Per-step node records: run, k, sensor, the 0/1 update-event flag,
    covariance trace, and the estimate components.  Requires the runner
    to have kept estimates (``keep_raw=True``)."""
    if result.estimates is None:
        return None
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / f"nodes_{result.name}.csv"
    runs, kp1, n_eff, dim = result.estimates.shape
    trace = result.plan.trace_p
    trig = getattr(result.plan, "triggered", None)
    ncols = ",".join(f"x{j + 1}" for j in range(dim))
    lines = [f"run,k,sensor,triggered,trace_p,{ncols}"]
    for r in range(runs):
        for k in range(1, kp1):
            for i in range(n_eff):
                tp = trace[k, i] if trace.ndim == 2 else trace[k]
                tg = int(trig[k, i]) if trig is not None else 0
                cells = [str(r), str(k), str(i + 1), str(tg), _float_repr(tp)]
                cells += [_float_repr(v) for v in result.estimates[r, k, i]]
                lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", newline="\n")
    return path
