"""Report figures, drawn with the object API on an Agg canvas (no display needed)."""
from __future__ import annotations

import functools
from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from scipy import stats

__all__ = ["STYLE", "rate_figure", "variance_figure", "qsl_figure", "clt_figure", "save_report_figures"]

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "font.size": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.5,
}


def _styled(fn):
    """Run a figure builder inside the package rc context."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with matplotlib.rc_context(STYLE):
            return fn(*args, **kwargs)

    return wrapper


def _figure(**kw) -> Figure:
    fig = Figure(figsize=kw.pop("figsize", STYLE["figure.figsize"]), **kw)
    FigureCanvasAgg(fig)
    return fig


@_styled
def rate_figure(check_stats: dict, factor: float) -> Figure:
    """Median normalized error ``e_n`` against ``n`` with the boundedness threshold."""
    fig = _figure()
    ax = fig.add_subplot()
    n, e = _series(check_stats["median_e_by_n"])
    ax.plot(n, e, "o-", color="C0", label="median $e_n$")
    ax.axhline(factor * check_stats["median_e_baseline"], color="C3", ls="--", label=f"{factor:g} x baseline")
    ax.set_xlabel("generation n")
    ax.set_ylabel(r"$\|\hat\theta_n-\theta\|^2\,|T_{n-1}|/n$")
    ax.set_ylim(bottom=0)
    ax.legend(frameon=False)
    fig.tight_layout()
    return fig


def _series(by_n: dict):
    n = np.array(sorted(int(k) for k in by_n))
    return n, np.array([by_n[k] if k in by_n else by_n[str(k)] for k in n])


@_styled
def variance_figure(check_stats: dict) -> Figure:
    """Median normalized errors of the variance and covariance estimators."""
    fig = _figure()
    ax = fig.add_subplot()
    for i, name in enumerate(("eta", "zeta", "rho")):
        n, e = _series(check_stats[name]["median_e_by_n"])
        ax.plot(n, e, "o-", color=f"C{i}", label=name)
    ax.set_xlabel("generation n")
    ax.set_ylabel("median normalized squared error")
    ax.set_ylim(bottom=0)
    ax.legend(frameon=False)
    fig.tight_layout()
    return fig


@_styled
def qsl_figure(check_stats: dict, rel_tol: float) -> Figure:
    fig = _figure()
    ax = fig.add_subplot()
    n, r = _series(check_stats["median_by_n"])
    target = check_stats["target"]
    ax.plot(n, r, "o-", color="C0", label="median running average")
    ax.axhline(target, color="k", lw=1, label="limit")
    ax.axhspan(target * (1 - rel_tol), target * (1 + rel_tol), color="0.85", zorder=0)
    ax.set_xlabel("generation n")
    ax.set_ylabel("quadratic running average")
    ax.legend(frameon=False)
    fig.tight_layout()
    return fig


@_styled
def clt_figure(report) -> Figure:
    """Histograms of each standardized component with the standard normal density."""
    z = report.standardized
    k = z.shape[1]
    fig = _figure(figsize=(3.0 * k, 3.0))
    grid = np.linspace(-4, 4, 200)
    for j in range(k):
        ax = fig.add_subplot(1, k, j + 1)
        ax.hist(z[:, j], bins=40, range=(-4, 4), density=True, color="C0", alpha=0.6)
        ax.plot(grid, stats.norm.pdf(grid), color="k", lw=1)
        ax.set_title(f"{report.kind}[{j}]  p={report.ks_pvalues[j]:.3f}", fontsize=9)
        ax.set_yticks([])
    fig.tight_layout()
    return fig


def save_report_figures(report, out_dir) -> list[Path]:
    """Write one PNG per check in ``report`` and return the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tol = report.config.tolerances
    written = []
    for check in report.checks:
        if check.name == "rate":
            fig = rate_figure(check.statistics, tol.rate_factor)
        elif check.name == "qsl":
            fig = qsl_figure(check.statistics, tol.qsl_rel_tol)
        elif check.name == "variance":
            fig = variance_figure(check.statistics)
        else:
            continue
        path = out / f"{check.name}.png"
        fig.savefig(path, dpi=120, metadata={"Software": None})
        written.append(path)
    for clt in report.clt:
        path = out / f"clt_{clt.kind}.png"
        clt_figure(clt).savefig(path, dpi=120, metadata={"Software": None})
        written.append(path)
    return written
