"""
Differentiable transfer-matrix solver for the obliquely incident pump

The s-polarized pump enters from the incidence medium above the grid and
leaves through the half-space that extends the first (substrate) cell. Every
cell is a uniform layer; the state (E, H) with H = (dE/d depth) / (i k0) is
continuous across cell faces. Products of cell matrices are accumulated with
a parallel prefix scan that keeps each partial product normalized and carries
its log scale separately, so thick evanescent regions never overflow.

All quantities are torch tensors; gradients flow to the index samples and to
the incidence angle.
"""
import csv
import math
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import torch

from nlwg.config import settings
from nlwg.errors import DomainError, TransparencyError
from nlwg.materials import is_transparent
from nlwg.stack import IndexProfile
import logging

logger = logging.getLogger(__name__)

Angle = Union[float, torch.Tensor]


class PumpField:
    """Pump amplitudes at cell centers, normalized to a unit incident wave"""
    def __init__(self, x: np.ndarray, phi_plus: torch.Tensor, phi_minus: torch.Tensor, theta_deg: Angle,
                 wavelength_nm: float, reflectance: torch.Tensor, transmittance: torch.Tensor):
        self.x = x
        self.phi_plus = phi_plus  # travelling down, into the stack
        self.phi_minus = phi_minus  # travelling up
        self.theta_deg = theta_deg
        self.wavelength_nm = wavelength_nm
        self.reflectance = reflectance
        self.transmittance = transmittance

    @property
    def total(self) -> torch.Tensor:
        """E_p(x) = phi_plus + phi_minus"""
        return self.phi_plus + self.phi_minus


def check_pump_transparency(profile: IndexProfile, wavelength_nm: float) -> None:
    """Raise TransparencyError naming the first epitaxial layer that absorbs the pump"""
    if not profile.layers:
        return
    al = torch.stack([torch.as_tensor(layer.al_fraction, dtype=torch.float64) for layer in profile.layers])
    mask = is_transparent(al, wavelength_nm)
    if isinstance(mask, bool):
        mask = torch.tensor([mask])
    if bool(mask.all()):
        return
    first = int(torch.nonzero(~mask)[0, 0])
    layer = profile.layers[first]
    raise TransparencyError(
        f"{layer.name}: Al fraction {float(layer.al_fraction):.4f} absorbs at {wavelength_nm:.2f} nm"
    )


def _cell_matrices(eta: torch.Tensor, delta: torch.Tensor) -> torch.Tensor:
    """Upward (towards the incidence medium) characteristic matrices, shape (N, 2, 2)"""
    c = torch.cos(delta)
    s = torch.sin(delta)
    row0 = torch.stack([c, -1j * s / eta], dim=-1)
    row1 = torch.stack([-1j * eta * s, c], dim=-1)
    return torch.stack([row0, row1], dim=-2)


def _prefix_products(matrices: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Inclusive ordered products P_j ... P_0 as (normalized matrix, log scale)"""
    products = matrices
    logs = torch.zeros(matrices.shape[0], dtype=torch.float64)
    offset = 1
    count = matrices.shape[0]
    while offset < count:
        combined = products[offset:] @ products[:-offset]
        scale = combined.abs().amax(dim=(-2, -1))
        combined = combined / scale[:, None, None]
        products = torch.cat([products[:offset], combined])
        logs = torch.cat([logs[:offset], logs[offset:] + logs[:-offset] + torch.log(scale)])
        offset *= 2
    return products, logs


def pump_field(
    profile: IndexProfile,
    theta_deg: Angle,
    polarization: str = "s",
    incidence_index: float = 1.0,
    check_transparency: Optional[bool] = None,
) -> PumpField:
    """Plane-wave pump inside the profile, |phi_plus| = 1 in the incidence medium"""
    if polarization != "s":
        raise DomainError(f"only s-polarized pumping is modelled, got {polarization!r}")
    theta = theta_deg if isinstance(theta_deg, torch.Tensor) else torch.tensor(float(theta_deg), dtype=torch.float64)
    if bool((theta < 0.0) | (theta >= 90.0)):
        raise DomainError(f"incidence angle must lie in [0, 90) degrees, got {float(theta)}")
    check = settings.enforce_transparency if check_transparency is None else check_transparency
    if check:
        check_pump_transparency(profile, profile.wavelength_nm)

    k0 = 2.0 * math.pi / profile.wavelength_nm
    sin_t = incidence_index * torch.sin(theta * (math.pi / 180.0))
    eta = torch.sqrt((profile.n ** 2 - sin_t ** 2).to(torch.complex128))
    eta_inc = incidence_index * torch.cos(theta * (math.pi / 180.0))
    half = k0 * profile.spacing_nm * 0.5 * eta

    full_products, logs = _prefix_products(_cell_matrices(eta, 2.0 * half))
    halves = _cell_matrices(eta, half)

    bottom = torch.stack([torch.ones((), dtype=torch.complex128), eta[0]])
    identity = torch.eye(2, dtype=torch.complex128).unsqueeze(0)
    below = torch.cat([identity, full_products[:-1]])  # products of the cells under each cell
    below_logs = torch.cat([torch.zeros(1, dtype=torch.float64), logs[:-1]])

    states = (halves @ (below @ bottom).unsqueeze(-1)).squeeze(-1)  # (N, 2) state at each cell center
    top = full_products[-1] @ bottom
    incident = 0.5 * (top[0] + top[1] / eta_inc)
    reflected = 0.5 * (top[0] - top[1] / eta_inc)

    weight = torch.exp(below_logs - logs[-1]).to(torch.complex128) / incident
    e_field = states[:, 0] * weight
    h_field = states[:, 1] * weight
    phi_plus = 0.5 * (e_field + h_field / eta)
    phi_minus = 0.5 * (e_field - h_field / eta)

    reflectance = (reflected / incident).abs() ** 2
    transmittance = eta[0].real / eta_inc * torch.exp(-2.0 * logs[-1]) / incident.abs() ** 2
    return PumpField(profile.x, phi_plus, phi_minus, theta_deg, profile.wavelength_nm, reflectance, transmittance)


def core_energy(field: PumpField, profile: IndexProfile) -> torch.Tensor:
    """Integral of |E_p|^2 over the core span (the whole grid without one)"""
    intensity = field.total.abs() ** 2
    x = torch.as_tensor(profile.x)
    if profile.core_span_nm is not None:
        lo, hi = profile.core_span_nm
        mask = torch.as_tensor((profile.x >= lo) & (profile.x <= hi))
        intensity, x = intensity[mask], x[mask]
    return torch.trapezoid(intensity, x)


def cavity_resonance_scan(
    profile: IndexProfile,
    theta_deg: float,
    wavelength_range_nm: Tuple[float, float],
    n_points: int,
    check_transparency: Optional[bool] = None,
) -> List[Tuple[float, float]]:
    """(wavelength, core-integrated |E_p|^2) over a wavelength interval"""
    if n_points < 1:
        raise DomainError("n_points must be >= 1")
    scan = []
    with torch.no_grad():
        for wavelength in np.linspace(wavelength_range_nm[0], wavelength_range_nm[1], n_points):
            at = profile.at_wavelength(float(wavelength))
            field = pump_field(at, theta_deg, check_transparency=check_transparency)
            scan.append((float(wavelength), float(core_energy(field, at))))
    return scan


def write_pump_csv(field: PumpField, path: Union[str, Path]) -> None:
    plus = field.phi_plus.detach().numpy()
    minus = field.phi_minus.detach().numpy()
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# wavelength_nm={field.wavelength_nm:.17g}\n")
        f.write(f"# theta_deg={float(field.theta_deg):.17g}\n")
        f.write(f"# reflectance={float(field.reflectance):.17g}\n")
        f.write(f"# transmittance={float(field.transmittance):.17g}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["x_nm", "re_phi_plus", "im_phi_plus", "re_phi_minus", "im_phi_minus"])
        for x, p, m in zip(field.x, plus, minus):
            writer.writerow([f"{x:.17g}", f"{p.real:.17g}", f"{p.imag:.17g}", f"{m.real:.17g}", f"{m.imag:.17g}"])


def write_scan_csv(scan: List[Tuple[float, float]], path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["wavelength_nm", "core_energy"])
        for wavelength, energy in scan:
            writer.writerow([f"{wavelength:.17g}", f"{energy:.17g}"])
