"""Figure rendering for sweep reports.

Renders the two standard views of a sweep next to its CSV/JSON output:
normalized estimation error vs compression factor, and normalized build time
vs compression factor with a quadratic guide line.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_KIND_STYLE = {
    "unbiased": {"color": "tab:blue", "marker": "o"},
    "biased": {"color": "tab:red", "marker": "s"},
}


def _cells_by_kind(report: dict) -> dict[str, list[dict]]:
    grouped: dict[str, list[dict]] = {}
    for cell in report["cells"]:
        grouped.setdefault(cell["kind"], []).append(cell)
    for cells in grouped.values():
        cells.sort(key=lambda c: c["gamma"])
    return grouped


def render_sweep_figures(report: dict, out_prefix: str | Path) -> list[Path]:
    """Write <prefix>_error.png and <prefix>_time.png; returns the paths."""
    out_prefix = Path(out_prefix)
    grouped = _cells_by_kind(report)
    written: list[Path] = []

    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for kind, cells in grouped.items():
        gammas = [c["gamma"] for c in cells]
        means = [c["mean_error"] for c in cells]
        stds = [c["std_error"] for c in cells]
        ax.errorbar(gammas, means, yerr=stds, label=kind, capsize=3,
                    **_KIND_STYLE.get(kind, {}))
    ax.set_xlabel(r"compression factor $\gamma = m/s$")
    ax.set_ylabel("normalized estimation error")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(True, alpha=0.3)
    error_path = out_prefix.parent / (out_prefix.name + "_error.png")
    fig.savefig(error_path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    written.append(error_path)

    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    guide_drawn = False
    for kind, cells in grouped.items():
        gammas = [c["gamma"] for c in cells]
        times = [c["mean_normalized_time"] for c in cells]
        ax.plot(gammas, times, label=kind, **_KIND_STYLE.get(kind, {}))
        if not guide_drawn and gammas:
            # gamma^2 reference anchored at the largest measured gamma
            anchor_g, anchor_t = gammas[-1], times[-1]
            guide = [anchor_t * (g / anchor_g) ** 2 for g in gammas]
            ax.plot(gammas, guide, "k--", alpha=0.5, label=r"$\propto \gamma^2$")
            guide_drawn = True
    ax.set_xlabel(r"compression factor $\gamma = m/s$")
    ax.set_ylabel("normalized build time")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(True, alpha=0.3)
    time_path = out_prefix.parent / (out_prefix.name + "_time.png")
    fig.savefig(time_path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    written.append(time_path)

    return written
