"""Tabulated figure data: wide CSV tables plus one plotting script per figure.

Layout under ``figures/``: ``fig2`` holds the components divided by k_B T,
``fig3`` the growth of ln C, ``fig4`` the exponential scaling collapse.  Each
table has an abscissa column followed by one column per temperature, named
``j=<log2(k_B T / E0)>``, and a JSON sidecar.  Missing inputs are skipped.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .semiclassics import FitError, scaling_alpha

PLOT_SCRIPT = '''\
"""Plot every table in this directory to a PNG next to it (needs matplotlib)."""
import csv
import glob
import os

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
for path in sorted(glob.glob(os.path.join(here, "*.csv"))):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    head, data = rows[0], [[float(x) for x in r] for r in rows[1:]]
    fig, ax = plt.subplots()
    for i, name in enumerate(head[1:], start=1):
        ax.plot([r[0] for r in data], [r[i] for r in data], label=name)
    ax.set_xlabel(head[0])
    ax.set_title(os.path.basename(path)[:-4])
    ax.legend(fontsize="small")
    fig.savefig(path[:-4] + ".png", dpi=120)
    plt.close(fig)
'''


def _write_table(path: Path, xname: str, x, columns: dict, meta: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([xname] + names)
        for i, xi in enumerate(x):
            w.writerow([repr(float(xi))] + [repr(float(columns[n][i])) for n in names])
    with open(path.with_suffix(".json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _common(series_by_kT: dict, attr: str = "ell"):
    """Shared abscissa, or None when the grids differ."""
    grids = [getattr(s, attr) for s in series_by_kT.values()]
    if not grids or any(g.shape != grids[0].shape or not np.allclose(g, grids[0]) for g in grids):
        return None
    return grids[0]


def write_figures(cfg, out: Path, load_family, meta: dict | None = None) -> list:
    """Write the tables behind the component, growth and scaling figures.

    ``load_family(subdir, prefix)`` returns ``{k_B T: OtocSeries}``.
    """
    fig_dir = Path(out) / "figures"
    a, m = cfg.a, cfg.m
    e0 = cfg.units.e0(a)
    t0 = cfg.units.t0(a)
    lam = cfg.lambda_g
    meta = dict(meta or {})
    col = {kT: f"j={np.log2(kT / e0):g}" for kT in cfg.kT_values}
    paths = []

    # components divided by k_B T in units of m a^2, against ell / a
    fams = {"classical": load_family("classical", "O_cl")}
    for q in ("O1", "O2", "O3"):
        fams[q] = load_family("quantum", q)
    for name, fam in fams.items():
        ell = _common(fam)
        if ell is None:
            continue
        cols = {col[k]: np.real(s.values) / (k * m * a * a) for k, s in sorted(fam.items())}
        paths.append(_write_table(fig_dir / "fig2" / f"{name}.csv", "ell_over_a", ell / a, cols,
                                  {**meta, "quantity": f"{name} / (k_B T m a^2)"}))

    C = load_family("quantum", "C")
    ell = _common(C)
    if ell is not None:
        with np.errstate(divide="ignore", invalid="ignore"):
            cols = {col[k]: np.log(np.real(s.values)) for k, s in sorted(C.items())}
        cols["reference_sqrt3_lambda_ell"] = np.sqrt(3) * lam * ell
        paths.append(_write_table(fig_dir / "fig3" / "logC.csv", "ell_over_a", ell / a, cols,
                                  {**meta, "quantity": "ln C", "lambda_g": lam}))

    # scaling collapse against t / t0; grids differ per temperature so one table each
    for k, s in sorted(C.items()):
        y = np.real(s.values) * np.exp(-np.sqrt(3) * lam * s.ell)
        try:
            alpha = scaling_alpha(s, lam, cfg.growth_window)
        except FitError:
            alpha = np.nan
        cols = {"C_exp_minus_sqrt3_lambda_ell": y, "C_over_alpha_exp": y / alpha}
        paths.append(_write_table(fig_dir / "fig4" / f"{col[k].replace('=', '')}.csv", "t_over_t0",
                                  s.t / t0, cols, {**meta, "alpha": alpha, "kT": k, "lambda_g": lam}))
    for sub in sorted({p.parent for p in paths}):
        script = sub / "plot.py"
        script.write_text(PLOT_SCRIPT)
        paths.append(script)
    return paths
