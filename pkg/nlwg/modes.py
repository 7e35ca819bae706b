"""
Reference guided-mode solver for 1D multilayer profiles

Each grid cell is a uniform slab; a 2x2 transfer matrix carries the state
(u, v) = (field, d(field)/d(k0 x) / w) across it, with w = 1 for TE (u = E_y)
and w = n^2 for TM (u = D_x, proportional to H_y). Both components are
continuous at every interface. Guided modes decay into the two half-spaces
that extend the first and last cell.

This path is audit-only: it runs on numpy and is never differentiated.
"""
import csv
import math
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import brentq

from nlwg.config import settings
from nlwg.errors import DomainError, ModeSolverError
from nlwg.stack import IndexProfile
import logging

logger = logging.getLogger(__name__)

POLARIZATIONS = ("TE", "TM")


class GuidedMode:
    """Normalized transverse profile (TE: E, TM: D) and effective index"""
    def __init__(self, polarization: str, n_eff: float, field: np.ndarray, x: np.ndarray,
                 wavelength_nm: float, mode_order: int):
        self.polarization = polarization
        self.n_eff = n_eff
        self.field = field
        self.x = x
        self.wavelength_nm = wavelength_nm
        self.mode_order = mode_order

    def __repr__(self) -> str:
        return f"GuidedMode({self.polarization}, order={self.mode_order}, n_eff={self.n_eff:.8f})"


def _weights(n2: np.ndarray, polarization: str) -> np.ndarray:
    if polarization not in POLARIZATIONS:
        raise DomainError(f"unknown polarization {polarization!r}")
    return np.ones_like(n2) if polarization == "TE" else n2


def _cell_terms(p, tau: float):
    """cos/cosh and sinc/sinhc of one uniform cell for p = n^2 - n_eff^2"""
    s = np.sqrt(np.abs(p)) * tau
    safe = np.where(s > 0, s, 1.0)
    oscillating = p >= 0
    c = np.where(oscillating, np.cos(s), np.cosh(s))
    g = np.where(oscillating, np.sinc(s / math.pi), np.where(s > 0, np.sinh(s) / safe, 1.0))
    return c, g


def dispersion_function(n_eff: np.ndarray, n2: np.ndarray, w: np.ndarray, tau: float) -> np.ndarray:
    """Vectorized mismatch of the top boundary condition; zero at guided modes"""
    b2 = np.asarray(n_eff, dtype=np.float64) ** 2
    u = np.ones_like(b2)
    v = np.sqrt(np.maximum(b2 - n2[0], 0.0)) / w[0]
    for i in range(len(n2)):
        p = n2[i] - b2
        c, g = _cell_terms(p, tau)
        u, v = c * u + tau * g * w[i] * v, -p * tau * g / w[i] * u + c * v
        scale = np.maximum(np.abs(u), np.abs(v))
        u /= scale
        v /= scale
    return v + np.sqrt(np.maximum(b2 - n2[-1], 0.0)) / w[-1] * u


def _cell_terms_scalar(p: float, tau: float) -> Tuple[float, float]:
    if p >= 0.0:
        s = math.sqrt(p) * tau
        return math.cos(s), (math.sin(s) / s if s > 1e-12 else 1.0)
    s = math.sqrt(-p) * tau
    return math.cosh(s), (math.sinh(s) / s if s > 1e-12 else 1.0)


def _dispersion_scalar(n_eff: float, n2: list, w: list, tau: float) -> float:
    """Pure-python version of dispersion_function for root refinement"""
    b2 = n_eff * n_eff
    u = 1.0
    v = math.sqrt(max(b2 - n2[0], 0.0)) / w[0]
    for ni2, wi in zip(n2, w):
        p = ni2 - b2
        c, g = _cell_terms_scalar(p, tau)
        u, v = c * u + tau * g * wi * v, -p * tau * g / wi * u + c * v
        scale = max(abs(u), abs(v))
        u /= scale
        v /= scale
    return v + math.sqrt(max(b2 - n2[-1], 0.0)) / w[-1] * u


def _sweep(n_eff: float, n2: np.ndarray, w: np.ndarray, tau: float, u: float, v: float,
           order: np.ndarray, direction: float) -> Tuple[np.ndarray, np.ndarray]:
    """Propagate across cells in `order`, recording u and its log scale at cell centers"""
    half = 0.5 * tau * direction
    b2 = n_eff * n_eff
    count = len(order)
    values = np.empty(count)
    logs = np.empty(count)
    log_scale = 0.0
    for k, i in enumerate(order):
        p = n2[i] - b2
        c, g = _cell_terms_scalar(p, abs(half))
        for step in range(2):
            u, v = c * u + half * g * w[i] * v, -p * half * g / w[i] * u + c * v
            if step == 0:
                values[k] = u
                logs[k] = log_scale
        scale = max(abs(u), abs(v))
        u /= scale
        v /= scale
        log_scale += math.log(scale)
    return values, logs


def _mode_field(n_eff: float, n2: np.ndarray, w: np.ndarray, tau: float) -> np.ndarray:
    """Field at cell centers: upward and downward sweeps stitched where both are trustworthy"""
    b2 = n_eff * n_eff
    gs = math.sqrt(max(b2 - n2[0], 0.0))
    ga = math.sqrt(max(b2 - n2[-1], 0.0))
    count = len(n2)
    up, up_log = _sweep(n_eff, n2, w, tau, 1.0, gs / w[0], np.arange(count), 1.0)
    down, down_log = _sweep(n_eff, n2, w, tau, 1.0, -ga / w[-1], np.arange(count)[::-1], -1.0)
    down, down_log = down[::-1], down_log[::-1]

    with np.errstate(divide="ignore"):
        score = np.log(np.abs(up)) + up_log + np.log(np.abs(down)) + down_log
    j = int(np.argmax(score))
    lower = up[: j + 1] * np.exp(up_log[: j + 1] - up_log[j]) / up[j]
    upper = down[j + 1:] * np.exp(down_log[j + 1:] - down_log[j]) / down[j]
    return np.concatenate([lower, upper])


def normalize_field(field: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Unit power (trapezoid integral of field^2 = 1), positive at the max-magnitude point"""
    field = field / math.sqrt(trapezoid(field ** 2, x))
    peak = int(np.argmax(np.abs(field)))
    return -field if field[peak] < 0 else field


def solve_modes(profile: IndexProfile, polarization: str, max_modes: Optional[int] = None) -> List[GuidedMode]:
    """Guided modes sorted by descending n_eff (empty when the profile does not guide)"""
    n = profile.values()
    n2 = n ** 2
    w = _weights(n2, polarization)
    tau = 2.0 * math.pi / profile.wavelength_nm * profile.spacing_nm
    n_top = float(n.max())
    n_clad = max(float(n[0]), float(n[-1]))
    if n_top <= n_clad:
        return []

    step = settings.mode_scan_step
    chunk = settings.mode_scan_chunk
    limit = max_modes if max_modes is not None else len(n)
    roots: List[float] = []
    n2_list, w_list = n2.tolist(), w.tolist()

    prev_x, prev_f = None, None
    start = n_top
    while start > n_clad and len(roots) < limit:
        grid = start - step * np.arange(chunk)
        grid = grid[grid > n_clad]
        if not len(grid):
            break
        values = dispersion_function(grid, n2, w, tau)
        if prev_x is not None:
            grid = np.concatenate([[prev_x], grid])
            values = np.concatenate([[prev_f], values])
        for i in range(len(grid) - 1):
            if values[i] == 0.0:
                roots.append(float(grid[i]))
            elif values[i] * values[i + 1] < 0.0:
                try:
                    root = brentq(_dispersion_scalar, grid[i + 1], grid[i], args=(n2_list, w_list, tau),
                                  xtol=settings.mode_bisect_tol, rtol=4 * np.finfo(float).eps, maxiter=200)
                except (RuntimeError, ValueError) as e:
                    raise ModeSolverError(f"{polarization} root refinement failed: {e}", (n_clad, n_top)) from e
                roots.append(float(root))
            if len(roots) >= limit:
                break
        prev_x, prev_f = grid[-1], values[-1]
        start = prev_x - step

    modes = []
    for order, n_eff in enumerate(roots[:limit]):
        field = normalize_field(_mode_field(n_eff, n2, w, tau), profile.x)
        modes.append(GuidedMode(polarization, n_eff, field, profile.x, profile.wavelength_nm, order))
    logger.debug(f"{polarization} @ {profile.wavelength_nm:.2f} nm: {len(modes)} mode(s) {[m.n_eff for m in modes]}")
    return modes


def confinement_fraction(mode: GuidedMode, span: Tuple[float, float]) -> float:
    """Share of the field energy between span[0] and span[1]"""
    inside = (mode.x >= span[0]) & (mode.x <= span[1])
    total = trapezoid(mode.field ** 2, mode.x)
    if inside.sum() < 2:
        return 0.0
    return float(trapezoid(mode.field[inside] ** 2, mode.x[inside]) / total)


def fundamental_mode(profile: IndexProfile, polarization: str) -> Optional[GuidedMode]:
    """Most core-confined of the top modes by n_eff, None when nothing is guided"""
    modes = solve_modes(profile, polarization, settings.fundamental_candidates)
    if not modes:
        return None
    if profile.core_span_nm is None or len(modes) == 1:
        return modes[0]
    return max(modes, key=lambda m: confinement_fraction(m, profile.core_span_nm))


def reconstruct_tm_efield(mode: GuidedMode, profile: IndexProfile, normalize: bool = False) -> np.ndarray:
    """E = D / n^2 of a TM mode on the profile grid"""
    if mode.polarization != "TM":
        raise DomainError(f"E-field reconstruction needs a TM mode, got {mode.polarization}")
    efield = mode.field / profile.values() ** 2
    if normalize:
        efield = normalize_field(efield, profile.x)
    return efield


def birefringence(profile_te: IndexProfile, profile_tm: IndexProfile) -> Tuple[float, float]:
    """(n_TE, n_TM) of the fundamental modes"""
    te = fundamental_mode(profile_te, "TE")
    tm = fundamental_mode(profile_tm, "TM")
    if te is None or tm is None:
        missing, profile = ("TE", profile_te) if te is None else ("TM", profile_tm)
        n = profile.values()
        raise ModeSolverError(f"no guided {missing} mode", (max(float(n[0]), float(n[-1])), float(n.max())))
    return te.n_eff, tm.n_eff


def slab_te_neff(n_core: float, n_clad: float, thickness_nm: float, wavelength_nm: float,
                 order: int = 0, tol: float = 1e-13) -> float:
    """Symmetric step slab TE root by bisection on the textbook dispersion relation"""
    k0 = 2.0 * math.pi / wavelength_nm
    half = 0.5 * thickness_nm

    def mismatch(n_eff: float) -> float:
        kappa = k0 * math.sqrt(n_core ** 2 - n_eff ** 2)
        gamma = k0 * math.sqrt(n_eff ** 2 - n_clad ** 2)
        phase = kappa * half - order * math.pi / 2.0
        return kappa * math.sin(phase) - gamma * math.cos(phase)

    lo, hi = n_clad + 1e-12, n_core - 1e-12
    # the order-m root lives where kappa * d/2 - m pi/2 lies in [0, pi/2)
    v_max = k0 * half * math.sqrt(n_core ** 2 - n_clad ** 2)
    if v_max <= order * math.pi / 2.0:
        raise DomainError(f"slab does not guide TE{order}")
    hi = min(hi, math.sqrt(n_core ** 2 - (order * math.pi / 2.0 / (k0 * half)) ** 2) - 1e-15)
    upper_phase = (order + 1) * math.pi / 2.0
    if k0 * half * math.sqrt(n_core ** 2 - n_clad ** 2) > upper_phase:
        lo = max(lo, math.sqrt(n_core ** 2 - (upper_phase / (k0 * half)) ** 2) + 1e-15)
    return brentq(mismatch, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps)


def write_mode_csv(mode: GuidedMode, path: Union[str, Path]) -> None:
    """x_nm, field with header comments carrying the mode's metadata"""
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# wavelength_nm={mode.wavelength_nm:.17g}\n")
        f.write(f"# polarization={mode.polarization}\n")
        f.write(f"# n_eff={mode.n_eff:.17g}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["x_nm", "field"])
        for x, value in zip(mode.x, mode.field):
            writer.writerow([f"{x:.17g}", f"{value:.17g}"])
