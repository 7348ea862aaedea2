"""Matplotlib figures for run reports.

matplotlib is imported lazily so the solvers and the data path work
without it. PNGs are written without timestamp metadata so reruns stay
byte-identical.
"""

from __future__ import annotations

import math
from pathlib import Path

from .lab import ConvergenceReport, LdpReport

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "svg.hashsalt": "eotlab",
}
FIGSIZE = (4.8, 3.2)


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    return path


def render_figures(report, directory) -> list[Path]:
    """Write PNG figures for a convergence, LDP or multimarginal report; returns the paths."""
    rows = getattr(report, "rows", None)
    if not rows:
        raise ValueError("report has no rows")
    plt = _pyplot()
    directory = Path(directory)
    eps = [r.eps for r in rows]
    out = []
    with plt.rc_context(STYLE):
        if isinstance(report, ConvergenceReport):
            fig, ax = plt.subplots(figsize=FIGSIZE)
            ax.loglog(eps, [max(r.gap_to_S0, 1e-300) for r in rows], "o-", label=r"$S_\varepsilon - S_0$")
            ax.loglog(eps, [max(r.L1_f, 1e-300) for r in rows], "s--", label=r"$\|f_\varepsilon - f_0\|_{L^1}$")
            ax.loglog(eps, [max(r.L1_g, 1e-300) for r in rows], "^--", label=r"$\|g_\varepsilon - g_0\|_{L^1}$")
            ax.set_xlabel(r"$\varepsilon$")
            ax.legend(frameon=False)
            if not report.dual_unique_hint:
                ax.set_title("potential distances non-binding (duals not unique)", fontsize=8)
            fig.tight_layout()
            out.append(_save(fig, directory / "convergence.png"))
            plt.close(fig)

            fig, ax = plt.subplots(figsize=FIGSIZE)
            ax.semilogx(eps, [r.max_violation for r in rows], "o-", label=r"$\max(f\oplus g - c)$")
            if "min_cell_weight" in report.meta:
                log_inv = math.log(1.0 / report.meta["min_cell_weight"])
                ax.semilogx(eps, [e * log_inv for e in eps], "k:", label="entry bound")
            ax.set_xlabel(r"$\varepsilon$")
            ax.legend(frameon=False)
            fig.tight_layout()
            out.append(_save(fig, directory / "violation.png"))
            plt.close(fig)
        elif isinstance(report, LdpReport):
            fig, ax = plt.subplots(figsize=FIGSIZE)
            ax.semilogx(eps, [r.rate for r in rows], "o-", label=r"$\varepsilon\log\pi_\varepsilon(E)$")
            ax.axhline(report.target, color="k", ls=":", label="target")
            ax.set_xlabel(r"$\varepsilon$")
            ax.legend(frameon=False)
            fig.tight_layout()
            out.append(_save(fig, directory / "ldp_rate.png"))
            plt.close(fig)
        else:
            fig, ax = plt.subplots(figsize=FIGSIZE)
            ax.loglog(eps, [max(r.gap_to_exact, 1e-300) for r in rows], "o-", label="dual - exact value")
            ax.set_xlabel(r"$\varepsilon$")
            ax.legend(frameon=False)
            fig.tight_layout()
            out.append(_save(fig, directory / "multimarginal.png"))
            plt.close(fig)
    return out
