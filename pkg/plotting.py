# plotting.py
#
# Static SVG figures for a finished run directory: per-state time series
# with the target window and the input stairs, plus a 2-D or 3-D state
# space view of X, X*, X_d, the beam of target orbits and the trajectory.

from itertools import product
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from geometry import ImpulsiveControlError  # noqa: E402
from logger import AppLogger, silent_logger  # noqa: E402
from utils import read_csv_array, read_json  # noqa: E402

WINDOW_COLOR = "tab:red"
TRAJECTORY_COLOR = "black"


class PlotError(ImpulsiveControlError):
    """A run directory is missing the files a figure needs."""


def _require(path: Path) -> Path:
    if not path.exists():
        raise PlotError(f"missing run output {path}")
    return path


def _box_edges(lower: np.ndarray, upper: np.ndarray) -> list[np.ndarray]:
    """Line segments of an axis-aligned box in 2 or 3 dimensions."""
    corners = np.array(list(product(*zip(lower, upper))))
    edges = []
    for i, a in enumerate(corners):
        for b in corners[i + 1:]:
            if np.count_nonzero(a != b) == 1:
                edges.append(np.vstack([a, b]))
    return edges


def _draw_box(ax, lower, upper, **style) -> None:
    first = True
    for edge in _box_edges(np.asarray(lower), np.asarray(upper)):
        label = style.pop("label", None) if first else None
        ax.plot(*edge.T, label=label, **style)
        first = False


def _xd_points(feasible: dict) -> np.ndarray:
    region = feasible["region"]
    if region["type"] == "hull":
        return np.asarray(region["vertices"], dtype=float)
    if region["type"] == "box":
        lower, upper = region["lower"], region["upper"]
        return np.array(list(product(*zip(lower, upper))), dtype=float)
    return np.asarray(feasible["certificate"], dtype=float)


def plot_timeseries(trajectory: np.ndarray, jumps: np.ndarray, header: list[str],
                    n: int, m: int, xstar: dict, path: Path) -> Path:
    """One panel per state with the X* bounds dashed and shaded, then the inputs as stairs."""
    if trajectory.shape[0] == 0:
        raise PlotError("trajectory is empty")
    t = trajectory[:, 0]
    fig, axes = plt.subplots(n + 1, 1, figsize=(8, 2.2 * (n + 1)), sharex=True)
    for i in range(n):
        ax = axes[i]
        lo, hi = xstar["lower"][i], xstar["upper"][i]
        ax.axhspan(lo, hi, color=WINDOW_COLOR, alpha=0.08)
        ax.axhline(lo, color=WINDOW_COLOR, linestyle="--", linewidth=1)
        ax.axhline(hi, color=WINDOW_COLOR, linestyle="--", linewidth=1)
        ax.plot(t, trajectory[:, i + 1], color=TRAJECTORY_COLOR, linewidth=1.2)
        ax.set_ylabel(header[i + 1])
        ax.grid(True, alpha=0.3)

    ax = axes[-1]
    if jumps.shape[0]:
        times = jumps[:, 1]
        for j in range(m):
            values = jumps[:, 2 + j]
            edges = np.concatenate([times, [max(t[-1], times[-1])]])
            ax.stairs(values, edges, baseline=None, label=f"u_{j + 1}")
        ax.legend(loc="upper right")
    ax.set_ylabel("u")
    ax.set_xlabel("t")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def plot_projection(trajectory: np.ndarray, scenario: dict, feasible: dict,
                    equilibria: dict, path: Path) -> Path | None:
    """State-space view on the first two or three coordinates; None for 1-D runs."""
    n = trajectory.shape[1] - 1
    if n < 2:
        return None
    dims = 3 if n >= 3 else 2
    coords = slice(0, dims)
    fig = plt.figure(figsize=(7, 6))
    ax = fig.add_subplot(projection="3d") if dims == 3 else fig.add_subplot()

    X, Xstar = scenario["X"], scenario["Xstar"]
    _draw_box(ax, np.asarray(X["lower"])[coords], np.asarray(X["upper"])[coords],
              color="grey", linewidth=0.8, label="X")
    _draw_box(ax, np.asarray(Xstar["lower"])[coords], np.asarray(Xstar["upper"])[coords],
              color=WINDOW_COLOR, linestyle="--", linewidth=1, label="X*")

    xd = _xd_points(feasible)
    if xd.size:
        ax.scatter(*xd[:, coords].T, s=4, color="tab:blue", alpha=0.4, label="X_d")
    orbits = np.asarray(equilibria.get("orbits", []), dtype=float)
    if orbits.size:
        beam = orbits.reshape(-1, orbits.shape[-1])
        ax.scatter(*beam[:, coords].T, s=3, color="tab:green", alpha=0.5, label="beam")
    ax.plot(*trajectory[:, 1:][:, coords].T, color=TRAJECTORY_COLOR, linewidth=1.0,
            label="trajectory")
    labels = [f"x_{i + 1}" for i in range(dims)]
    ax.set_xlabel(labels[0])
    ax.set_ylabel(labels[1])
    if dims == 3:
        ax.set_zlabel(labels[2])
    ax.legend(loc="upper left", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def plot_run(out_dir: Path, logger: AppLogger | None = None) -> list[Path]:
    """Writes the figures of every run_* directory into out_dir/plots."""
    logger = logger or silent_logger()
    out_dir = Path(out_dir)
    manifest = read_json(_require(out_dir / "manifest.json"))
    scenario = manifest["scenario"]
    feasible = read_json(_require(out_dir / "feasible_set.json"))
    equilibria = read_json(_require(out_dir / "equilibria.json"))
    n = len(scenario["X"]["lower"])
    m = len(scenario["U"]["lower"])

    runs = sorted(p for p in out_dir.glob("run_*") if p.is_dir())
    if not runs:
        raise PlotError(f"no run_* directories in {out_dir}")
    plots = out_dir / "plots"
    plots.mkdir(exist_ok=True)
    written = []
    for run in runs:
        header, trajectory = read_csv_array(_require(run / "trajectory.csv"))
        _, jumps = read_csv_array(_require(run / "jumps.csv"))
        written.append(plot_timeseries(
            trajectory, jumps, header, n, m, scenario["Xstar"],
            plots / f"{run.name}_timeseries.svg",
        ))
        projection = plot_projection(
            trajectory, scenario, feasible, equilibria, plots / f"{run.name}_projection.svg"
        )
        if projection is not None:
            written.append(projection)
        logger.info(f"  > Plotted {run.name}")
    return written
