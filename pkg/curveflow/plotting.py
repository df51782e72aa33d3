from __future__ import annotations

from pathlib import Path

import numpy as np

from .runs import RunArtifactError, read_trajectory_csv, trajectory_files


def plot_trajectory_csv(csv_path: Path, output_path: Path | None = None) -> Path:
    """Render L, A, W, the deficits and the curvature extremes of one trajectory CSV."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:  # pragma: no cover - optional dependency
        raise RuntimeError("matplotlib is required for plot") from exc

    columns = read_trajectory_csv(csv_path)
    t = columns["t"]
    target = output_path or csv_path.with_suffix(".png")

    figure, axes = plt.subplots(2, 2, figsize=(10, 7), sharex=True)
    ax = axes[0][0]
    ax.plot(t, columns["L"], label="L")
    ax.plot(t, columns["A"], label="A")
    ax.set_title("length and area")
    ax.legend()

    ax = axes[0][1]
    ax.semilogy(t, columns["W"], label="W")
    ax.set_title("total squared curvature")

    ax = axes[1][0]
    for name in ("I_m1", "I0", "tildeI_m1"):
        ax.plot(t, columns[name], label=name)
    ax.set_yscale("symlog", linthresh=1e-12)
    ax.set_title("deficits")
    ax.legend()

    ax = axes[1][1]
    ax.plot(t, columns["kappa_max"], label="kappa_max")
    ax.plot(t, columns["kappa_min"], label="kappa_min")
    if np.any(np.isfinite(columns["rho_C0"])):
        ax.plot(t, columns["rho_C0"], label="rho_C0")
    ax.set_title("curvature extremes")
    ax.legend()

    for ax in axes[1]:
        ax.set_xlabel("t")
    figure.tight_layout()
    figure.savefig(target, dpi=120)
    plt.close(figure)
    return target


def plot_run(run_dir: Path) -> list[Path]:
    files = trajectory_files(run_dir)
    if not files:
        raise RunArtifactError(f"no trajectory CSV in {run_dir}")
    return [plot_trajectory_csv(path) for path in files]
