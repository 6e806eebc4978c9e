"""Output files of a run: trajectory CSV, summary text and SVG plots."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .sim import TrajectoryLog, summarize  # noqa: E402

FOLLOWER_FIELDS = ("z1", "z2", "V", "psi", "a", "gamma", "w_a", "w_gamma")


def csv_header(K: int) -> list[str]:
    cols = ["t"]
    for i in range(1, K + 1):
        cols += [f"{name}_{i}" for name in FOLLOWER_FIELDS]
    for p in range(K):
        cols += [f"dist_{p}_{p + 1}", f"min_safe_dist_{p}_{p + 1}"]
    cols += [f"local_err_{i}" for i in range(1, K + 1)]
    cols.append("lyapunov")
    return cols


def csv_table(log: TrajectoryLog) -> np.ndarray:
    K = log.records[0].states.shape[0]
    rows = np.empty((len(log.records), 1 + 8 * K + 2 * K + K + 1))
    for n, r in enumerate(log.records):
        block = np.hstack([r.states, r.inputs, r.w]).ravel()
        pairs = np.column_stack([r.distances, r.min_safe]).ravel()
        rows[n] = np.concatenate([[r.t], block, pairs, r.local_errors, [r.lyapunov]])
    return rows


def write_csv(log: TrajectoryLog, path) -> None:
    K = log.records[0].states.shape[0]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        np.savetxt(fh, csv_table(log), fmt="%.9g", delimiter=",", header=",".join(csv_header(K)), comments="")


def read_csv(path) -> dict[str, np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        names = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return {name: data[:, k] for k, name in enumerate(names)}


def csv_margins(table: dict[str, np.ndarray], K: int) -> np.ndarray:
    """Per follower pair minimum of distance minus minimum safe distance."""
    return np.array([np.min(table[f"dist_{p}_{p + 1}"] - table[f"min_safe_dist_{p}_{p + 1}"])
                     for p in range(1, K)])


def _save(fig, path):
    # fixed salt and no date keep the SVG byte-stable
    with matplotlib.rc_context({"svg.hashsalt": "safe-consensus", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_trajectories(log: TrajectoryLog, path) -> None:
    pos = log.array("states")[:, :, :2]
    leader = log.array("leader")
    fig, ax = plt.subplots(figsize=(7, 6))
    ax.plot(leader[:, 0], leader[:, 1], "k--", lw=1, label="leader")
    for k in range(pos.shape[1]):
        line, = ax.plot(pos[:, k, 0], pos[:, k, 1], lw=1, label=f"A{k + 1}")
        ax.plot(pos[0, k, 0], pos[0, k, 1], "o", color=line.get_color())
    ax.plot(leader[0, 0], leader[0, 1], "ks")
    ax.set_xlabel("z1 [m]")
    ax.set_ylabel("z2 [m]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    _save(fig, path)


def plot_distances(log: TrajectoryLog, path) -> None:
    t = log.array("t")
    dist = log.array("distances")
    safe = log.array("min_safe")
    K = dist.shape[1]
    fig, axes = plt.subplots(K, 1, figsize=(7, 1.8 * K + 0.6), sharex=True, squeeze=False)
    for p, ax in enumerate(axes[:, 0]):
        ax.plot(t, dist[:, p], lw=1, label="distance")
        ax.plot(t, safe[:, p], lw=1, ls="--", label="min safe")
        ax.set_ylabel(f"A{p}-A{p + 1} [m]")
    axes[0, 0].legend(loc="upper right", fontsize="small")
    axes[-1, 0].set_xlabel("t [s]")
    fig.tight_layout()
    _save(fig, path)


def write_outputs(log: TrajectoryLog, scenario, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if log.records:
        write_csv(log, out / "trajectory.csv")
        plot_trajectories(log, out / "trajectory.svg")
        plot_distances(log, out / "distances.svg")
        text = summarize(log, scenario).to_text()
    else:
        text = f"status: {log.status}\nsteps: 0\n"
    if not log.completed:
        text += f"failed_step: {log.failed_step}\nmessage: {log.message}\n"
    (out / "summary.txt").write_text(text, encoding="utf-8", newline="\n")
    return out
