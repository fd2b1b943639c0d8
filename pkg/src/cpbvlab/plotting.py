"""Figure rendering for pipeline results (needs the optional matplotlib extra)."""
from __future__ import annotations

from pathlib import Path

import numpy as np

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError as exc:  # pragma: no cover - exercised only without the extra
    raise ImportError("plotting needs matplotlib; install the 'plot' extra") from exc

STYLE = {
    "figure.figsize": (4.5, 3.2),
    "figure.dpi": 150,
    "font.size": 9,
    "axes.linewidth": 0.8,
    "lines.linewidth": 1.2,
    "lines.markersize": 3,
    "savefig.bbox": "tight",
}


def _decay_curve(fit, x):
    p = fit["params"]
    return p["amplitude"] * np.exp(-x / p["tau"]) + p["offset"]


def _sinusoid_curve(p, x):
    return p["amplitude"] * np.exp(-x / p["tau"]) * np.cos(2 * np.pi * p["freq"] * x
                                                          + p["phase"]) + p["offset"]


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return path.name


def _plot_xy(x, y, model, xlabel, ylabel, path):
    fig, ax = plt.subplots()
    ax.plot(x, y, "s", mfc="k", mec="k", label="simulated")
    if model is not None:
        xs = np.linspace(x.min(), x.max(), 600)
        ax.plot(xs, model(xs), "r-", label="fit")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(frameon=False)
    return _save(fig, path)


def _plot_map(tab, path, title):
    ng = np.unique(tab["n_g"])
    f = np.unique(tab["f_ghz"])
    pe = np.asarray(tab["pe"]).reshape(len(f), len(ng))
    fig, ax = plt.subplots()
    mesh = ax.pcolormesh(ng, f, pe, shading="auto", cmap="magma")
    fig.colorbar(mesh, ax=ax, label="$P_e$")
    ax.set_xlabel("$n_g$")
    ax.set_ylabel("$f$ (GHz)")
    ax.set_title(title)
    return _save(fig, path)


def render(kind: str, result, out_dir) -> list:
    """Write PNG figures for ``result`` into ``out_dir``; returns file names."""
    out_dir = Path(out_dir)
    tab, fit = result.table, result.fit
    names = []
    with plt.rc_context(STYLE):
        if kind == "t1":
            t = np.asarray(tab["t_s"])
            names.append(_plot_xy(t * 1e6, np.asarray(tab["pe"]),
                                  lambda x: _decay_curve(fit, x * 1e-6),
                                  r"$t$ ($\mu$s)", "$P_e$", out_dir / "t1.png"))
        elif kind == "ramsey":
            t = np.asarray(tab["tau_s"])
            names.append(_plot_xy(t * 1e9, np.asarray(tab["pe"]),
                                  lambda x: _sinusoid_curve(fit["params"], x * 1e-9),
                                  r"$\tau$ (ns)", "$P_e$", out_dir / "ramsey.png"))
        elif kind == "echo":
            t = np.asarray(tab["tau_s"])
            names.append(_plot_xy(t * 1e6, np.asarray(tab["pe"]),
                                  lambda x: _decay_curve(fit, x * 1e-6),
                                  r"$\tau$ ($\mu$s)", "$P_e$", out_dir / "echo.png"))
        elif kind == "rabi":
            fig, ax = plt.subplots()
            amps = np.asarray(tab["amplitude_uv"])
            for a in np.unique(amps):
                sel = amps == a
                ax.plot(np.asarray(tab["duration_s"])[sel] * 1e9, np.asarray(tab["pe"])[sel],
                        "-", label=f"{a:.3g} $\\mu$V")
            ax.set_xlabel("pulse length (ns)")
            ax.set_ylabel("$P_e$")
            ax.legend(frameon=False, fontsize=7)
            names.append(_save(fig, out_dir / "rabi.png"))
        elif kind == "spectroscopy":
            fig, ax = plt.subplots()
            ax.plot(tab["n_g"], tab["f_ghz"], "k.", label="peak")
            ng = np.linspace(np.min(tab["n_g"]), np.max(tab["n_g"]), 300)
            ax.plot(ng, np.hypot(4 * fit["e_c"] * (1 - ng), fit["e_j"]), "r-", label="fit")
            ax.set_xlabel("$n_g$")
            ax.set_ylabel("$f_q$ (GHz)")
            ax.legend(frameon=False)
            names.append(_save(fig, out_dir / "spectroscopy.png"))
            for key, tab2 in result.extra_tables.items():
                names.append(_plot_map(tab2, out_dir / f"spectroscopy_{key}.png", key))
        elif kind == "sweep":
            ok = np.asarray(tab["status"]) == "ok"
            f_q = np.asarray(tab["f_q_ghz"], dtype=float)[ok]
            fig, ax = plt.subplots()
            ax.plot(f_q, np.asarray(tab["t1_s"], dtype=float)[ok] * 1e6, "ks-")
            ax.set_xlabel("$f_q$ (GHz)")
            ax.set_ylabel(r"$T_1$ ($\mu$s)")
            ax2 = ax.twinx()
            ax2.plot(f_q, np.asarray(tab["decoupling_uv_per_mhz"], dtype=float)[ok], "ro-")
            ax2.set_ylabel(r"decoupling ($\mu$V/MHz)", color="r")
            names.append(_save(fig, out_dir / "sweep.png"))
    return names
