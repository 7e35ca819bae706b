"""
Spectral analysis of a designed source

Tuning curves, joint spectral amplitudes of the HV and VH processes,
spectral filtering, polarization and ion-photon entanglement, and the
rate ledger. All of it runs on numpy/scipy from effective-index tables of
the reference solver; nothing here is differentiated.

Conventions: the signal photon (short wavelength) travels forward and the
idler backward. In the HV process the signal is TE (H) and the idler TM
(V); VH swaps the two.
"""
import csv
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage
from scipy.constants import c as SPEED_OF_LIGHT
from scipy.constants import h as PLANCK
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from nlwg.config import settings
from nlwg.design import phase_matching_angle, pump_wavelength
from nlwg.errors import DegenerateFilterError, DomainError, ModeSolverError, ResolutionError
from nlwg.models import RateFactor, RateLedger
from nlwg.modes import fundamental_mode
from nlwg.stack import DesignWavelengths, EpitaxialStack, build_index_profile
import logging

logger = logging.getLogger(__name__)

PROCESSES = ("HV", "VH")
# (signal polarization, idler polarization)
PROCESS_POLARIZATIONS = {"HV": ("TE", "TM"), "VH": ("TM", "TE")}
MIN_LOBE_POINTS = 8
LOBE_THRESHOLD = 0.1
NORMALIZATION_TOL = 1e-9

IndexFunction = Callable[[np.ndarray], np.ndarray]
Window = Tuple[float, float]


def idler_wavelength(pump_nm: float, signal_nm: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Energy conservation solved for the idler"""
    return 1.0 / (1.0 / pump_nm - 1.0 / np.asarray(signal_nm, dtype=np.float64))


def _to_hz(wavelength_nm):
    return SPEED_OF_LIGHT / (np.asarray(wavelength_nm, dtype=np.float64) * 1e-9)


def _to_nm(frequency_hz):
    return SPEED_OF_LIGHT / np.asarray(frequency_hz, dtype=np.float64) * 1e9


# ---------------------------------------------------------------------------
# Effective-index dispersion
# ---------------------------------------------------------------------------

class NeffDispersion:
    """Fundamental-mode n_eff(lambda) per polarization over a few wavelength windows.

    Built from reference-solver tables with cubic interpolation, or from
    plain callables (covering every wavelength) for synthetic sources.
    """
    def __init__(self, entries: Dict[str, List[Tuple[Window, IndexFunction]]],
                 wavelengths: DesignWavelengths, signal_window: Window):
        for pol in ("TE", "TM"):
            if not entries.get(pol):
                raise DomainError(f"no effective-index data for {pol}")
        self.entries = entries
        self.wavelengths = wavelengths
        self.signal_window = signal_window

    @classmethod
    def from_functions(cls, functions: Dict[str, IndexFunction], wavelengths: DesignWavelengths,
                       signal_halfspan_nm: float = 40.0) -> "NeffDispersion":
        entries = {pol: [((0.0, math.inf), f)] for pol, f in functions.items()}
        window = (wavelengths.te - signal_halfspan_nm, wavelengths.te + signal_halfspan_nm)
        return cls(entries, wavelengths, window)

    @classmethod
    def from_stack(
        cls,
        stack: EpitaxialStack,
        halfspan_nm: float = 40.0,
        points: Optional[int] = None,
        grid_spacing_nm: Optional[float] = None,
        smoothing_width_nm: Optional[float] = None,
        model: Optional[str] = None,
    ) -> "NeffDispersion":
        """Tables around the signal and the energy-conserving idler window, both polarizations"""
        points = points or settings.dispersion_table_points
        ws = stack.wavelengths
        signal_window = (ws.te - halfspan_nm, ws.te + halfspan_nm)
        if signal_window[0] <= ws.pump:
            raise DomainError(f"signal window {signal_window} reaches the pump wavelength {ws.pump:.2f} nm")
        idler_window = (float(idler_wavelength(ws.pump, signal_window[1])),
                        float(idler_wavelength(ws.pump, signal_window[0])))

        jobs = [(pol, window, float(lam))
                for pol in ("TE", "TM")
                for window in (signal_window, idler_window)
                for lam in np.linspace(window[0], window[1], points)]

        def solve(job):
            pol, window, lam = job
            profile = build_index_profile(stack, lam, grid_spacing_nm, smoothing_width_nm,
                                          isolate_substrate=True, model=model)
            mode = fundamental_mode(profile, pol)
            if mode is None:
                raise ModeSolverError(f"no guided {pol} mode at {lam:.2f} nm", window)
            return mode.n_eff

        logger.info(f"Solving {len(jobs)} reference modes for n_eff tables ({points} points per window)")
        with ThreadPoolExecutor(max_workers=settings.threads) as pool:
            neffs = list(pool.map(solve, jobs))

        entries: Dict[str, List[Tuple[Window, IndexFunction]]] = {"TE": [], "TM": []}
        for k in range(0, len(jobs), points):
            pol, window, _ = jobs[k]
            lams = np.array([job[2] for job in jobs[k:k + points]])
            entries[pol].append((window, CubicSpline(lams, np.array(neffs[k:k + points]))))
        return cls(entries, ws, signal_window)

    def n(self, polarization: str, wavelength_nm) -> np.ndarray:
        lam = np.asarray(wavelength_nm, dtype=np.float64)
        out = np.full(lam.shape, np.nan)
        for (lo, hi), f in self.entries[polarization]:
            inside = (lam >= lo) & (lam <= hi) & np.isnan(out)
            if np.any(inside):
                out[inside] = f(lam[inside])
        if np.any(np.isnan(out)):
            missing = lam[np.isnan(out)]
            raise DomainError(f"{polarization} n_eff requested outside the tabulated windows "
                              f"({missing.min():.3f}-{missing.max():.3f} nm)")
        return out

    def group_index(self, polarization: str, wavelength_nm: float, step_nm: float = 1e-3) -> float:
        """n_g = n - lambda dn/dlambda by central differences"""
        lo, hi = self.n(polarization, [wavelength_nm - step_nm, wavelength_nm + step_nm])
        center = float(self.n(polarization, wavelength_nm))
        return center - wavelength_nm * (hi - lo) / (2.0 * step_nm)


def _dispersion(source: Union[EpitaxialStack, NeffDispersion], halfspan_nm: float, **table) -> NeffDispersion:
    if isinstance(source, NeffDispersion):
        return source
    return NeffDispersion.from_stack(source, halfspan_nm, **table)


def _indices(dispersion: NeffDispersion, process: str, signal_nm, idler_nm) -> Tuple[np.ndarray, np.ndarray]:
    pol_s, pol_i = PROCESS_POLARIZATIONS[process]
    return dispersion.n(pol_s, signal_nm), dispersion.n(pol_i, idler_nm)


def momentum_mismatch(dispersion: NeffDispersion, process: str, signal_nm, theta_deg: float) -> np.ndarray:
    """n_s/lambda_s - n_i/lambda_i - sin(theta)/lambda_p in 1/nm at energy-conserving pairs"""
    pump = dispersion.wavelengths.pump
    lam_s = np.asarray(signal_nm, dtype=np.float64)
    lam_i = idler_wavelength(pump, lam_s)
    n_s, n_i = _indices(dispersion, process, lam_s, lam_i)
    return n_s / lam_s - n_i / lam_i - math.sin(math.radians(theta_deg)) / pump


def phase_matched_angles(dispersion: NeffDispersion) -> Dict[str, float]:
    """Pump angles phase matching each process at the design pair.

    splitting_deg is the magnitude |theta_VH - theta_HV|; the sign is kept in
    vh_minus_hv_deg.
    """
    ws = dispersion.wavelengths
    te_s, tm_i = _indices(dispersion, "HV", ws.te, ws.tm)
    tm_s, te_i = _indices(dispersion, "VH", ws.te, ws.tm)
    theta_hv = phase_matching_angle(float(te_s), float(tm_i), ws.te, ws.tm, ws.pump)
    theta_vh = phase_matching_angle(float(tm_s), float(te_i), ws.te, ws.tm, ws.pump)
    return {"HV": theta_hv, "VH": theta_vh, "splitting_deg": abs(theta_vh - theta_hv),
            "vh_minus_hv_deg": theta_vh - theta_hv}


# ---------------------------------------------------------------------------
# Tuning curves
# ---------------------------------------------------------------------------

class TuningCurve:
    """(theta, signal, idler) samples of one process; angles without a solution are gaps"""
    def __init__(self, process: str, samples: List[Tuple[float, float, float]], gaps: List[float], pump_nm: float):
        self.process = process
        self.samples = samples
        self.gaps = gaps
        self.pump_nm = pump_nm

    def __len__(self) -> int:
        return len(self.samples)

    def signal_at(self, theta_deg: float) -> Optional[float]:
        for theta, signal, _ in self.samples:
            if theta == theta_deg:
                return signal
        return None


def _solve_signal(dispersion: NeffDispersion, process: str, theta_deg: float, scan_points: int) -> Optional[float]:
    lo, hi = dispersion.signal_window
    grid = np.linspace(lo, hi, scan_points)
    values = momentum_mismatch(dispersion, process, grid, theta_deg)
    crossings = np.nonzero(np.sign(values[:-1]) * np.sign(values[1:]) <= 0)[0]
    if len(crossings) == 0:
        return None
    target = dispersion.wavelengths.te
    k = crossings[np.argmin(np.abs(grid[crossings] - target))]
    if values[k] == 0.0:
        return float(grid[k])

    def residual(lam: float) -> float:
        return float(momentum_mismatch(dispersion, process, lam, theta_deg))

    return brentq(residual, grid[k], grid[k + 1], xtol=1e-12, rtol=4 * np.finfo(float).eps)


def tuning_curves(
    source: Union[EpitaxialStack, NeffDispersion],
    theta_range: Tuple[float, float] = (30.0, 38.0),
    n_points: int = 33,
    halfspan_nm: float = 40.0,
    scan_points: int = 401,
    **table,
) -> Tuple[TuningCurve, TuningCurve]:
    """HV and VH signal/idler wavelengths against the pump angle"""
    if n_points < 2 or theta_range[1] <= theta_range[0]:
        raise DomainError(f"invalid angle scan {theta_range} with {n_points} points")
    dispersion = _dispersion(source, halfspan_nm, **table)
    pump = dispersion.wavelengths.pump
    thetas = [float(t) for t in np.linspace(theta_range[0], theta_range[1], n_points)]

    curves = []
    for process in PROCESSES:
        with ThreadPoolExecutor(max_workers=settings.threads) as pool:
            signals = list(pool.map(lambda t: _solve_signal(dispersion, process, t, scan_points), thetas))
        samples, gaps = [], []
        for theta, signal in zip(thetas, signals):
            if signal is None:
                gaps.append(theta)
            else:
                samples.append((theta, signal, float(idler_wavelength(pump, signal))))
        if gaps:
            logger.warning(f"{process}: no phase matching inside {dispersion.signal_window} at {len(gaps)} angle(s)")
        curves.append(TuningCurve(process, samples, gaps, pump))
    return curves[0], curves[1]


def constraint_residuals(curve: TuningCurve, dispersion: NeffDispersion) -> Tuple[float, float]:
    """Largest relative energy and momentum residuals over the curve"""
    energy = momentum = 0.0
    for theta, signal, idler in curve.samples:
        inv_p = 1.0 / curve.pump_nm
        energy = max(energy, abs(1.0 / signal + 1.0 / idler - inv_p) / inv_p)
        scale = max(math.sin(math.radians(theta)) / curve.pump_nm, 1e-300)
        momentum = max(momentum, abs(float(momentum_mismatch(dispersion, curve.process, signal, theta))) / scale)
    return energy, momentum


def branch_splitting(hv: TuningCurve, vh: TuningCurve) -> List[Tuple[float, float]]:
    """Angular-frequency offset (rad/s) of the HV signal above the VH signal at shared angles"""
    vh_signals = {theta: signal for theta, signal, _ in vh.samples}
    return [(theta, float(2.0 * math.pi * (_to_hz(signal) - _to_hz(vh_signals[theta]))))
            for theta, signal, _ in hv.samples if theta in vh_signals]


# ---------------------------------------------------------------------------
# Joint spectral amplitudes
# ---------------------------------------------------------------------------

class JointSpectralAmplitude:
    """phi_HV and phi_VH sampled on a (signal, idler) frequency grid; rows follow omega1"""
    def __init__(self, nu1: np.ndarray, nu2: np.ndarray, phi_hv: np.ndarray, phi_vh: np.ndarray,
                 pump_angles_deg: Sequence[float], pump_fwhm_ghz: float, length_mm: float,
                 kept_fraction: float = 1.0):
        self.nu1 = nu1
        self.nu2 = nu2
        self.phi_hv = phi_hv
        self.phi_vh = phi_vh
        self.pump_angles_deg = list(pump_angles_deg)
        self.pump_fwhm_ghz = pump_fwhm_ghz
        self.length_mm = length_mm
        self.kept_fraction = kept_fraction

    @property
    def omega1(self) -> np.ndarray:
        return 2.0 * math.pi * self.nu1

    @property
    def omega2(self) -> np.ndarray:
        return 2.0 * math.pi * self.nu2

    @property
    def cell(self) -> float:
        return float((self.omega1[1] - self.omega1[0]) * (self.omega2[1] - self.omega2[0]))

    @property
    def signal_nm(self) -> np.ndarray:
        return _to_nm(self.nu1)

    @property
    def idler_nm(self) -> np.ndarray:
        return _to_nm(self.nu2)

    def intensity(self) -> np.ndarray:
        return np.abs(self.phi_hv) ** 2 + np.abs(self.phi_vh) ** 2

    def norm(self) -> float:
        return float(self.intensity().sum() * self.cell)

    def with_amplitudes(self, phi_hv: np.ndarray, phi_vh: np.ndarray, kept_fraction: float) -> "JointSpectralAmplitude":
        return JointSpectralAmplitude(self.nu1, self.nu2, phi_hv, phi_vh, self.pump_angles_deg,
                                      self.pump_fwhm_ghz, self.length_mm, kept_fraction)

    def normalized(self) -> "JointSpectralAmplitude":
        total = self.norm()
        if total <= 0.0:
            raise DomainError("joint spectral amplitude vanishes on the grid")
        scale = 1.0 / math.sqrt(total)
        return self.with_amplitudes(self.phi_hv * scale, self.phi_vh * scale, self.kept_fraction)


def _frequency_grid(wavelengths: DesignWavelengths, n_points: int, span_thz: float) -> Tuple[np.ndarray, np.ndarray]:
    nu_p = float(_to_hz(wavelengths.pump))
    nu_s0 = float(_to_hz(wavelengths.te))
    offsets = np.linspace(-span_thz, span_thz, n_points) * 1e12
    return nu_s0 + offsets, (nu_p - nu_s0) + offsets


def _check_lobe_resolution(dispersion: NeffDispersion, process: str, length_m: float, step_hz: float) -> None:
    ws = dispersion.wavelengths
    pol_s, pol_i = PROCESS_POLARIZATIONS[process]
    ng = dispersion.group_index(pol_s, ws.te) + dispersion.group_index(pol_i, ws.tm)
    lobe_hz = 2.0 * SPEED_OF_LIGHT / (length_m * ng)
    if lobe_hz / step_hz < MIN_LOBE_POINTS:
        raise ResolutionError(f"{process}: sinc main lobe ({lobe_hz / 1e9:.1f} GHz) spans "
                              f"{lobe_hz / step_hz:.1f} grid points, need {MIN_LOBE_POINTS}")


def pump_envelope(nu_sum: np.ndarray, nu_p: float, fwhm_hz: float) -> np.ndarray:
    """Gaussian amplitude whose intensity has the given FWHM"""
    return np.exp(-2.0 * math.log(2.0) * ((nu_sum - nu_p) / fwhm_hz) ** 2)


def phase_matching_function(dispersion: NeffDispersion, process: str, nu1: np.ndarray, nu2: np.ndarray,
                            theta_deg: float, length_m: float) -> np.ndarray:
    """sinc(L dbeta / 2) on the (nu1, nu2) grid"""
    n_s, n_i = _indices(dispersion, process, _to_nm(nu1), _to_nm(nu2))
    sin_theta = math.sin(math.radians(theta_deg))
    ks = 2.0 * math.pi * n_s * nu1 / SPEED_OF_LIGHT
    ki = 2.0 * math.pi * n_i * nu2 / SPEED_OF_LIGHT
    kp = 2.0 * math.pi * (nu1[:, None] + nu2[None, :]) * sin_theta / SPEED_OF_LIGHT
    dbeta = ks[:, None] - ki[None, :] - kp
    return np.sinc(length_m * dbeta / (2.0 * math.pi))


def jsa(
    source: Union[EpitaxialStack, NeffDispersion],
    pump_angles_deg: Optional[Sequence[float]] = None,
    pump_fwhm_ghz: Optional[float] = None,
    length_mm: Optional[float] = None,
    n_points: Optional[int] = None,
    span_thz: Optional[float] = None,
    halfspan_nm: float = 40.0,
    processes: Sequence[str] = PROCESSES,
    **table,
) -> JointSpectralAmplitude:
    """Normalized JSA of both processes for one or more coherent pump angles.

    Defaults to pumping at the two phase-matched angles.
    """
    dispersion = _dispersion(source, halfspan_nm, **table)
    fwhm = (pump_fwhm_ghz or settings.pump_fwhm_ghz) * 1e9
    length_m = (length_mm or settings.interaction_length_mm) * 1e-3
    n_points = n_points or settings.jsa_points
    span = span_thz or settings.jsa_span_thz
    if pump_angles_deg is None:
        angles = phase_matched_angles(dispersion)
        pump_angles_deg = [angles["HV"], angles["VH"]]
    if not pump_angles_deg:
        raise DomainError("at least one pump angle is required")

    ws = dispersion.wavelengths
    nu1, nu2 = _frequency_grid(ws, n_points, span)
    for process in processes:
        _check_lobe_resolution(dispersion, process, length_m, nu1[1] - nu1[0])

    alpha = pump_envelope(nu1[:, None] + nu2[None, :], float(_to_hz(ws.pump)), fwhm)
    phis = {p: np.zeros((n_points, n_points), dtype=np.complex128) for p in PROCESSES}
    for process in processes:
        for theta in pump_angles_deg:
            phis[process] += alpha * phase_matching_function(dispersion, process, nu1, nu2, theta, length_m)

    logger.info(f"JSA on {n_points}x{n_points} grid (+/-{span} THz), angles {[round(t, 4) for t in pump_angles_deg]}")
    raw = JointSpectralAmplitude(nu1, nu2, phis["HV"], phis["VH"], pump_angles_deg,
                                 fwhm / 1e9, length_m * 1e3)
    return raw.normalized()


def filter_jsa(amplitude: JointSpectralAmplitude, window_signal: Window, window_idler: Window) -> JointSpectralAmplitude:
    """Zero the amplitudes outside the wavelength window product and renormalize"""
    keep_s = (amplitude.signal_nm >= min(window_signal)) & (amplitude.signal_nm <= max(window_signal))
    keep_i = (amplitude.idler_nm >= min(window_idler)) & (amplitude.idler_nm <= max(window_idler))
    if not keep_s.any() or not keep_i.any():
        raise DegenerateFilterError(f"window {window_signal} x {window_idler} nm contains no grid point")
    mask = keep_s[:, None] & keep_i[None, :]
    total = amplitude.intensity().sum()
    kept = float(amplitude.intensity()[mask].sum() / total) if total > 0 else 0.0
    if kept <= 0.0:
        raise DegenerateFilterError(f"window {window_signal} x {window_idler} nm excludes the whole spectrum")
    filtered = amplitude.with_amplitudes(np.where(mask, amplitude.phi_hv, 0.0),
                                         np.where(mask, amplitude.phi_vh, 0.0), kept)
    return filtered.normalized()


def filter_window(center_nm: float, halfwidth_nm: float) -> Window:
    return (center_nm - halfwidth_nm, center_nm + halfwidth_nm)


class MarginalSpectrum:
    """Single-photon spectrum with unit area in angular frequency"""
    def __init__(self, axis: str, omega: np.ndarray, density: np.ndarray):
        self.axis = axis
        self.omega = omega
        self.density = density

    @property
    def wavelength_nm(self) -> np.ndarray:
        return _to_nm(self.omega / (2.0 * math.pi))

    @property
    def peak_wavelength_nm(self) -> float:
        return float(self.wavelength_nm[int(np.argmax(self.density))])

    def area(self) -> float:
        return float(self.density.sum() * (self.omega[1] - self.omega[0]))


def marginal(amplitude: JointSpectralAmplitude, axis: str = "signal") -> MarginalSpectrum:
    if axis not in ("signal", "idler"):
        raise DomainError(f"unknown marginal axis {axis!r}")
    intensity = amplitude.intensity()
    if axis == "signal":
        omega, other = amplitude.omega1, amplitude.omega2
        density = intensity.sum(axis=1)
    else:
        omega, other = amplitude.omega2, amplitude.omega1
        density = intensity.sum(axis=0)
    density = density * (other[1] - other[0])
    area = density.sum() * (omega[1] - omega[0])
    if area <= 0.0:
        raise DomainError("marginal of a vanishing spectrum")
    return MarginalSpectrum(axis, omega, density / area)


def count_lobes(amplitude: JointSpectralAmplitude, threshold: float = LOBE_THRESHOLD) -> int:
    """Connected regions (8-neighbourhood) where the JSI exceeds threshold x its maximum"""
    intensity = amplitude.intensity()
    peak = intensity.max()
    if peak <= 0.0:
        return 0
    _, count = ndimage.label(intensity > threshold * peak, structure=np.ones((3, 3), dtype=bool))
    return int(count)


# ---------------------------------------------------------------------------
# Entanglement
# ---------------------------------------------------------------------------

class BiphotonPolarizationState:
    """c_HV |H>s|V>i + c_VH |V>s|H>i with the spectral overlap of the two channels"""
    def __init__(self, c_hv: complex, c_vh: complex, overlap: complex):
        self.c_hv = c_hv
        self.c_vh = c_vh
        self.overlap = overlap

    @property
    def concurrence(self) -> float:
        a2, b2 = abs(self.c_hv) ** 2, abs(self.c_vh) ** 2
        value = 2.0 * abs(self.c_hv * self.c_vh) * abs(self.overlap) / (a2 + b2)
        return min(max(value, 0.0), 1.0)

    @property
    def purity(self) -> float:
        """Tr rho^2 of the polarization state after tracing out frequency"""
        a2, b2 = abs(self.c_hv) ** 2, abs(self.c_vh) ** 2
        return a2 ** 2 + b2 ** 2 + 2.0 * a2 * b2 * abs(self.overlap) ** 2

    @property
    def visibility(self) -> float:
        return abs(self.overlap)


def polarization_state(amplitude: JointSpectralAmplitude) -> BiphotonPolarizationState:
    cell = amplitude.cell
    n_hv = float(np.sum(np.abs(amplitude.phi_hv) ** 2) * cell)
    n_vh = float(np.sum(np.abs(amplitude.phi_vh) ** 2) * cell)
    total = n_hv + n_vh
    if total <= 0.0:
        raise DomainError("polarization state of a zero-norm amplitude")
    if n_hv > 0.0 and n_vh > 0.0:
        overlap = complex(np.sum(amplitude.phi_hv * np.conj(amplitude.phi_vh)) * cell / math.sqrt(n_hv * n_vh))
    else:
        overlap = 0j
    if abs(overlap) > 1.0:
        overlap = overlap / abs(overlap)
    return BiphotonPolarizationState(complex(math.sqrt(n_hv / total)), complex(math.sqrt(n_vh / total)), overlap)


class IonPhotonState:
    """Ion Zeeman level entangled with the polarization of the emitted photon"""
    def __init__(self, amplitude_sigma_minus: complex, amplitude_sigma_plus: complex,
                 labels: Tuple[str, str] = ("D3/2,m=-3/2", "D3/2,m=+1/2")):
        self.amplitude_sigma_minus = amplitude_sigma_minus
        self.amplitude_sigma_plus = amplitude_sigma_plus
        self.labels = labels

    @property
    def concurrence(self) -> float:
        return 2.0 * abs(self.amplitude_sigma_minus * self.amplitude_sigma_plus)


def ion_photon_state(amp_minus: complex = math.sqrt(3.0) / 2.0, amp_plus: complex = 0.5,
                     renormalize: bool = False) -> IonPhotonState:
    norm2 = abs(amp_minus) ** 2 + abs(amp_plus) ** 2
    if norm2 == 0.0:
        raise DomainError("both ion-photon amplitudes vanish")
    if abs(norm2 - 1.0) > NORMALIZATION_TOL:
        if not renormalize:
            raise DomainError(f"amplitudes are not normalized (|a|^2 + |b|^2 = {norm2:.12g})")
        scale = 1.0 / math.sqrt(norm2)
        amp_minus, amp_plus = amp_minus * scale, amp_plus * scale
    return IonPhotonState(amp_minus, amp_plus)


# ---------------------------------------------------------------------------
# Rate ledger
# ---------------------------------------------------------------------------

class RateBudget:
    def __init__(self, rate_hz: float, items: List[Tuple[RateFactor, float]], ledger: RateLedger):
        self.rate_hz = rate_hz
        self.items = items
        self.ledger = ledger

    @property
    def events_per_minute(self) -> float:
        return 60.0 * self.rate_hz


def _log10(value: float) -> float:
    return math.log10(value) if value > 0.0 else -math.inf


def rate_budget(ledger: RateLedger) -> RateBudget:
    """Attempt rate times every probability and count, divided by every divisor,
    times the pulse fraction each detection window contains"""
    rate = 1.0
    items = []
    for factor in ledger.factors:
        rate *= factor.multiplier
        items.append((factor, _log10(factor.multiplier)))
    return RateBudget(rate, items, ledger)


def collection_fraction(numerical_aperture: float) -> float:
    """Solid-angle fraction of isotropic emission inside a lens of the given NA"""
    if not 0.0 <= numerical_aperture <= 1.0:
        raise DomainError(f"numerical aperture {numerical_aperture} outside [0, 1]")
    return 0.5 * (1.0 - math.sqrt(1.0 - numerical_aperture ** 2))


def pairs_per_pulse(efficiency: float, pump_power_w: float, repetition_hz: float, pump_nm: float) -> float:
    photon_energy = PLANCK * SPEED_OF_LIGHT / (pump_nm * 1e-9)
    return efficiency * pump_power_w / repetition_hz / photon_energy


def published_rate_ledger(
    source_efficiency: float = 2e-11,
    numerical_aperture: float = 0.6,
    fiber_coupling: float = 0.7,
    branching_ratio: float = 0.056,
    attempt_rate_hz: float = 1e6,
    detection_window_s: float = 50e-9,
    pump_pulse_s: float = 1e-9,
    pump_power_w: float = 0.06,
    pump_repetition_hz: float = 1e6,
    mismatch_divisor: float = 50.0,
    swap_success: float = 0.5,
    wavelengths: Optional[DesignWavelengths] = None,
) -> RateLedger:
    """Heralded ion-photon entanglement estimate from the published experimental parameters.

    The combination is this ledger's own model and is flagged as such; the
    published figure is about two events per minute.
    """
    signal = settings.signal_wavelength_nm if wavelengths is None else wavelengths.te
    idler = settings.idler_wavelength_nm if wavelengths is None else wavelengths.tm
    pump_nm = pump_wavelength(signal, idler)
    pairs = pairs_per_pulse(source_efficiency, pump_power_w, pump_repetition_hz, pump_nm)
    factors = [
        RateFactor(name="attempt rate", value=attempt_rate_hz, unit="Hz", kind="rate",
                   note="ion excitation attempts"),
        RateFactor(name="branching ratio", value=branching_ratio, kind="probability",
                   note="P1/2 -> D3/2 decay at 1092 nm"),
        RateFactor(name="NA collection", value=collection_fraction(numerical_aperture), kind="probability",
                   note=f"isotropic emission into NA {numerical_aperture}"),
        RateFactor(name="fiber coupling", value=fiber_coupling, kind="probability"),
        RateFactor(name="detection window", value=detection_window_s, unit="s", kind="window",
                   pulse_s=pump_pulse_s,
                   note=f"{pump_pulse_s * 1e9:.3g} ns pump pulse inside the {detection_window_s * 1e9:.3g} ns window"),
        RateFactor(name="source pairs per pulse", value=pairs, unit="pairs", kind="count",
                   note=f"{source_efficiency:.2g} pairs/photon, {pump_power_w * 1e3:.0f} mW at "
                        f"{pump_repetition_hz / 1e6:.0f} MHz"),
        RateFactor(name="spectral mismatch", value=mismatch_divisor, kind="divisor",
                   note="ion linewidth against the source bandwidth"),
        RateFactor(name="swap success", value=swap_success, kind="probability",
                   note="linear-optics Bell-state measurement"),
    ]
    return RateLedger(factors=factors, caveat=True,
                      reference_note="published estimate: about two events per minute")


def format_ledger(budget: RateBudget) -> str:
    lines = [f"{'factor':<24} {'value':>12} {'unit':<6} {'kind':<12} {'log10':>8}  note"]
    for factor, contribution in budget.items:
        lines.append(f"{factor.name:<24} {factor.value:>12.4g} {factor.unit:<6} {factor.kind:<12} "
                     f"{contribution:>8.3f}  {factor.note}")
    lines.append("-" * 60)
    lines.append(f"rate {budget.rate_hz:.4g} /s ({budget.events_per_minute:.4g} /min), "
                 f"log10 {_log10(budget.rate_hz):.3f}")
    if budget.ledger.caveat:
        lines.append(f"CAVEAT: this combination is a model of its own; {budget.ledger.reference_note}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Writers
# ---------------------------------------------------------------------------

def write_ledger(budget: RateBudget, path: Union[str, Path]) -> None:
    Path(path).write_text(format_ledger(budget), encoding="utf-8")


def write_tuning_csv(curves: Sequence[TuningCurve], path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["process", "theta_deg", "signal_nm", "idler_nm", "note"])
        for curve in curves:
            rows = [(theta, f"{s:.9f}", f"{i:.9f}", "") for theta, s, i in curve.samples]
            rows += [(theta, "", "", "gap") for theta in curve.gaps]
            for theta, s, i, note in sorted(rows, key=lambda r: r[0]):
                writer.writerow([curve.process, f"{theta:.6f}", s, i, note])


def write_jsi_csv(amplitude: JointSpectralAmplitude, path: Union[str, Path]) -> None:
    """omega1 across the header row, omega2 down the first column"""
    intensity = amplitude.intensity()
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["omega2\\omega1"] + [f"{w:.9e}" for w in amplitude.omega1])
        for j, w2 in enumerate(amplitude.omega2):
            writer.writerow([f"{w2:.9e}"] + [f"{v:.6e}" for v in intensity[:, j]])


def write_marginal_csv(spectrum: MarginalSpectrum, path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["omega_rad_s", "wavelength_nm", "density"])
        for w, lam, d in zip(spectrum.omega, spectrum.wavelength_nm, spectrum.density):
            writer.writerow([f"{w:.9e}", f"{lam:.6f}", f"{d:.9e}"])
