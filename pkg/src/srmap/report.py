"""Matplotlib figures written next to the map files and CSV output."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .tensor import gray_to_rgb  # noqa: E402

PANEL_DPI = 120


def _show(ax, data, title, **kw):
    ax.imshow(data, interpolation="nearest", **kw)
    ax.set_title(title, fontsize=9)
    ax.set_xticks([])
    ax.set_yticks([])


def render_sr_panel(path, report):
    """Input, relevance, SR map, edges and the fused overlay side by side."""
    fig, axes = plt.subplots(1, 5, figsize=(13, 3))
    _show(axes[0], gray_to_rgb(report.image), f"input ({report.label}, {report.probability:.3f})")
    r = report.relevance.values
    lim = max(float(np.abs(r).max()), 1e-12)
    _show(axes[1], r, "relevance", cmap="bwr", vmin=-lim, vmax=lim)
    _show(axes[2], report.sr.values, "SR map", cmap="hot", vmin=0, vmax=1)
    _show(axes[3], ~report.edges.edges, "edges", cmap="gray", vmin=0, vmax=1)
    # heat overlay on the edge drawing keeps the SR visible on a white background
    _show(axes[4], report.fused, "SR on edges")
    axes[4].imshow(np.ma.masked_less(report.sr.values, 0.05), cmap="Reds", alpha=0.6,
                   vmin=0, vmax=1, interpolation="nearest")
    fig.tight_layout()
    fig.savefig(path, dpi=PANEL_DPI)
    plt.close(fig)


def render_eval_figure(path, records, summary):
    """Per-image SSIM pairs and the ratio distribution."""
    ok = [r for r in records if not r.error]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 3.5))
    if ok:
        x = np.arange(len(ok))
        ax1.bar(x - 0.2, [r.ssim1 for r in ok], 0.4, label="relevance vs reference")
        ax1.bar(x + 0.2, [r.ssim2 for r in ok], 0.4, label="SR vs reference")
        ax1.set_xlabel("image")
        ax1.set_ylabel("SSIM")
        ax1.legend(fontsize=8)
        ratios = [r.ratio for r in ok if r.ratio is not None]
        if ratios:
            ax2.hist(ratios, bins=min(20, max(5, len(ratios) // 2)), color="0.5")
            ax2.axvline(1.0, color="k", lw=0.8, ls=":")
            if summary.mean_ratio is not None:
                ax2.axvline(summary.mean_ratio, color="r", lw=1.2, label=f"mean {summary.mean_ratio:.3f}")
                ax2.legend(fontsize=8)
        ax2.set_xlabel("SSIM2 / SSIM1")
    else:
        ax1.text(0.5, 0.5, "no records", ha="center", va="center", transform=ax1.transAxes)
    fig.tight_layout()
    fig.savefig(path, dpi=PANEL_DPI)
    plt.close(fig)
