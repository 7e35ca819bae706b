"""
SVG figures for optimization and analysis runs

Figures are written with a fixed SVG hash salt and without a date so that
identical inputs give byte-identical files.
"""
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from nlwg.models import TrajectoryPoint

plt.rcParams["svg.hashsalt"] = "nlwg"
plt.rcParams["svg.fonttype"] = "none"

PathLike = Union[str, Path]


def _save(fig, path: PathLike) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_trajectory(trajectory: Sequence[TrajectoryPoint], path: PathLike) -> None:
    """FOM (surrogate and audited) and surrogate discrepancy against iteration"""
    fig, (ax_fom, ax_err) = plt.subplots(1, 2, figsize=(10, 4))
    its = [p.iter for p in trajectory if p.fom_surrogate_pmV is not None]
    ax_fom.plot(its, [p.fom_surrogate_pmV for p in trajectory if p.fom_surrogate_pmV is not None],
                label="surrogate", color="tab:blue")
    audited = [p for p in trajectory if p.fom_reference_pmV is not None]
    ax_fom.plot([p.iter for p in audited], [p.fom_reference_pmV for p in audited], "o",
                label="reference", color="tab:red", markersize=4)
    ax_fom.set_xlabel("iteration")
    ax_fom.set_ylabel("|Gamma| (pm/V)")
    ax_fom.legend()

    errors = [p for p in audited if p.rel_discrepancy is not None and p.rel_discrepancy > 0]
    if errors:
        ax_err.semilogy([p.iter for p in errors], [p.rel_discrepancy for p in errors], "s-",
                        color="tab:purple", markersize=4)
    ax_err.set_xlabel("iteration")
    ax_err.set_ylabel("relative discrepancy")
    _save(fig, path)


def plot_tuning_curves(hv, vh, path: PathLike, target_nm: Optional[float] = None) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for curve, style in ((hv, "-"), (vh, "--")):
        if curve.samples:
            theta, signal, _ = zip(*curve.samples)
            ax.plot(theta, signal, style, label=f"{curve.process} signal")
    if target_nm is not None:
        ax.axhline(target_nm, color="grey", linewidth=0.8)
    ax.set_xlabel("pump angle (deg)")
    ax.set_ylabel("signal wavelength (nm)")
    ax.legend()
    _save(fig, path)


def plot_jsi(amplitude, path: PathLike, title: str = "") -> None:
    intensity = amplitude.intensity()
    fig, ax = plt.subplots(figsize=(6, 5))
    mesh = ax.pcolormesh(amplitude.signal_nm, amplitude.idler_nm, (intensity / intensity.max()).T,
                         cmap="plasma", shading="nearest", rasterized=True)
    fig.colorbar(mesh, ax=ax, label="JSI (normalized)")
    ax.set_xlabel("signal wavelength (nm)")
    ax.set_ylabel("idler wavelength (nm)")
    if title:
        ax.set_title(title)
    _save(fig, path)


def plot_marginal(spectrum, path: PathLike, target_nm: Optional[float] = None) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    density = spectrum.density / spectrum.density.max()
    ax.plot(spectrum.wavelength_nm, density, color="tab:blue")
    if target_nm is not None:
        ax.axvline(target_nm, color="grey", linewidth=0.8)
    ax.set_xlabel(f"{spectrum.axis} wavelength (nm)")
    ax.set_ylabel("marginal intensity (normalized)")
    _save(fig, path)


def plot_profiles(x: np.ndarray, profiles: Dict[str, np.ndarray], path: PathLike,
                  ylabel: str = "refractive index") -> None:
    """Overlay of several quantities sampled on one grid (index profiles, mode fields)"""
    fig, ax = plt.subplots(figsize=(8, 4))
    for label, values in profiles.items():
        ax.plot(np.asarray(x) / 1e3, values, label=label, linewidth=1.0)
    ax.set_xlabel("x (um)")
    ax.set_ylabel(ylabel)
    ax.legend()
    _save(fig, path)
