"""
Optical constants of Al(x)Ga(1-x)As
Refractive index (Gehrsitz and Afromowitz models), absorption edge and
second-order nonlinearity as functions of aluminum fraction and wavelength.

Every function accepts python floats, numpy arrays or torch tensors. Tensor
inputs stay on the autograd graph, so profiles built from design tensors are
differentiable in both composition and wavelength.
"""
import logging
import math
from enum import Enum
from typing import Union

import numpy as np
import torch

from nlwg.config import settings
from nlwg.errors import DispersionRangeError, DomainError
from nlwg.models import Chi2Model

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray, torch.Tensor]

HC_EV_NM = 1239.841984  # h*c in eV*nm

# Validity window shared by both models (nm)
MODEL_WINDOW = (500.0, 2000.0)

# Fraction of the lowest resonance kept between the photon energy and the pole
# when a model is evaluated above the absorption edge
RESONANCE_GUARD = 0.04

# Gehrsitz et al., J. Appl. Phys. 87, 7825 (2000), room temperature
GEHRSITZ_T = 293.0


class DispersionModel(str, Enum):
    GEHRSITZ = "gehrsitz"
    AFROMOWITZ = "afromowitz"


# Band parameters at 300 K (eV): (GaAs, AlAs, bowing constant, bowing slope)
# Vurgaftman, Meyer, Ram-Mohan, J. Appl. Phys. 89, 5815 (2001)
BAND_GAMMA = (1.424, 3.003, -0.127, 1.310)
BAND_X = (1.900, 2.168, 0.055, 0.0)
BAND_L = (1.708, 2.464, 0.0, 0.0)


def _to_tensor(value: ArrayLike) -> torch.Tensor:
    if isinstance(value, torch.Tensor):
        return value if value.dtype == torch.float64 else value.to(torch.float64)
    return torch.as_tensor(np.asarray(value, dtype=np.float64))


def _restore(result: torch.Tensor, *inputs: ArrayLike) -> ArrayLike:
    """Return a tensor when any input was a tensor, else numpy / float"""
    if any(isinstance(v, torch.Tensor) for v in inputs):
        return result
    out = result.detach().numpy()
    if out.ndim == 0:
        return float(out)
    return out


def _outside(values: ArrayLike, lo: float, hi: float):
    """Mask of non-finite or out-of-range entries (tensors are compared, never detached)"""
    if isinstance(values, torch.Tensor):
        return ~torch.isfinite(values) | (values < lo) | (values > hi)
    arr = np.asarray(values, dtype=np.float64)
    return ~np.isfinite(arr) | (arr < lo) | (arr > hi)


def _first(values: ArrayLike, mask) -> float:
    if isinstance(values, torch.Tensor):
        return float(values.reshape(-1)[mask.reshape(-1)][0])
    return float(np.asarray(values, dtype=np.float64).reshape(-1)[np.asarray(mask).reshape(-1)][0])


def check_composition(x: ArrayLike) -> None:
    mask = _outside(x, 0.0, 1.0)
    if bool(mask.any()):
        raise DomainError(f"aluminum fraction must lie in [0, 1], got {_first(x, mask)}")


def _check_window(model: str, wavelength_nm: ArrayLike) -> None:
    mask = _outside(wavelength_nm, *MODEL_WINDOW)
    if bool(mask.any()):
        raise DispersionRangeError(model, _first(wavelength_nm, mask), MODEL_WINDOW)


def _gehrsitz_epsilon(x: torch.Tensor, lam_nm: torch.Tensor) -> torch.Tensor:
    T = GEHRSITZ_T
    inv_um2 = (1000.0 / lam_nm) ** 2
    e_gamma = (
        1.225316977778989
        + 0.023083578135884 * (1.0 - 1.0 / math.tanh(92.255357763322920 / T))
        + 0.029810239269821 * (1.0 - 1.0 / math.tanh(194.9547182923050 / T))
        + 1.1308 * x
        + 0.1436 * x ** 2
    )
    e_gamma2 = e_gamma ** 2
    # keep the photon energy below the Gamma resonance
    inv_um2 = torch.minimum(inv_um2, (1.0 - RESONANCE_GUARD) * e_gamma2)

    a0 = 1.0 / (50.535 - 150.7 * x - 62.209 * x ** 2 + 797.16 * x ** 3 - 1125.0 * x ** 4 + 503.79 * x ** 5)
    a1 = 21.5647 + 113.74 * x - 122.5 * x ** 2 + 108.401 * x ** 3 - 47.318 * x ** 4
    e1_sq = 4.7171 - 3.237e-4 * T - 1.358e-6 * T ** 2 + 11.006 * x - 3.08 * x ** 2
    eps_inf = (
        5.9613 + 7.178e-4 * T - 0.953e-6 * T ** 2
        - 16.159 * x + 43.511 * x ** 2 - 71.317 * x ** 3 + 57.535 * x ** 4 - 17.451 * x ** 5
    )
    return (
        eps_inf
        + a0 / (e_gamma2 - inv_um2)
        + a1 / (e1_sq - inv_um2)
        + (1.0 - x) * 1.55e-3 / (0.724e-3 - inv_um2)
        + x * 2.61e-3 / (1.331e-3 - inv_um2)
    )


def _afromowitz_epsilon(x: torch.Tensor, lam_nm: torch.Tensor) -> torch.Tensor:
    # Afromowitz, Solid State Commun. 15, 59 (1974), modified single oscillator
    e0 = 3.65 + 0.871 * x + 0.179 * x ** 2
    ed = 36.1 - 2.45 * x
    eg = 1.424 + 1.266 * x + 0.26 * x ** 2
    energy2 = (HC_EV_NM / lam_nm) ** 2
    energy2 = torch.minimum(energy2, (1.0 - RESONANCE_GUARD) * eg ** 2)
    eta = math.pi * ed / (2.0 * e0 ** 3 * (e0 ** 2 - eg ** 2))
    ef2 = 2.0 * e0 ** 2 - eg ** 2
    log_term = torch.log((ef2 - energy2) / (eg ** 2 - energy2))
    return 1.0 + ed / e0 + ed * energy2 / e0 ** 3 + eta / math.pi * energy2 ** 2 * log_term


def refractive_index(x: ArrayLike, wavelength_nm: ArrayLike, model: Union[str, DispersionModel, None] = None) -> ArrayLike:
    """Real refractive index of Al(x)Ga(1-x)As at `wavelength_nm`.

    Raises DispersionRangeError outside the 500-2000 nm window. Above the
    composition's resonance the photon energy is clamped, so the result stays
    finite and continuous; `is_transparent` tells whether it is physical.
    """
    model = DispersionModel(model or settings.dispersion_model)
    check_composition(x)
    _check_window(model.value, wavelength_nm)
    xt, lt = _to_tensor(x), _to_tensor(wavelength_nm)
    if model is DispersionModel.GEHRSITZ:
        eps = _gehrsitz_epsilon(xt, lt)
    else:
        eps = _afromowitz_epsilon(xt, lt)
    return _restore(torch.sqrt(eps), x, wavelength_nm)


def _band(params: tuple[float, float, float, float], x: ArrayLike) -> ArrayLike:
    gaas, alas, c0, c1 = params
    return (1.0 - x) * gaas + x * alas - x * (1.0 - x) * (c0 + c1 * x)


def bandgap_energy(x: ArrayLike) -> dict:
    """Gamma, X and L gaps (eV, 300 K) and the absorption edge (their minimum)"""
    check_composition(x)
    if not isinstance(x, torch.Tensor):
        x = np.asarray(x, dtype=np.float64)
    minimum = torch.minimum if isinstance(x, torch.Tensor) else np.minimum
    gaps = {
        "gamma": _band(BAND_GAMMA, x),
        "x": _band(BAND_X, x),
        "l": _band(BAND_L, x),
    }
    gaps["edge"] = minimum(minimum(gaps["gamma"], gaps["x"]), gaps["l"])
    return gaps


def photon_energy_ev(wavelength_nm: ArrayLike) -> ArrayLike:
    if isinstance(wavelength_nm, torch.Tensor):
        return HC_EV_NM / wavelength_nm
    return HC_EV_NM / np.asarray(wavelength_nm, dtype=np.float64)


def is_transparent(x: ArrayLike, wavelength_nm: float, margin_ev: float | None = None):
    """True iff the photon energy sits below the absorption edge minus the margin.

    Scalars give a bool; arrays and tensors give an elementwise mask.
    """
    margin = settings.transparency_margin_ev if margin_ev is None else margin_ev
    edge = bandgap_energy(x)["edge"]
    energy = photon_energy_ev(wavelength_nm)
    if isinstance(edge, torch.Tensor) and not isinstance(energy, torch.Tensor):
        energy = torch.as_tensor(energy, dtype=torch.float64)
    result = energy < edge - margin
    if result.ndim == 0:
        return bool(result)
    return result


def chi2_value(x: ArrayLike, model: Chi2Model | None = None) -> ArrayLike:
    """Effective d14 (pm/V) of a single composition, linear in x"""
    model = model or Chi2Model.from_settings()
    return model.d14_gaas + (model.d14_alas - model.d14_gaas) * x


def chi2_profile(compositions: ArrayLike, model: Chi2Model | None = None) -> ArrayLike:
    """chi2 samples (pm/V) for composition samples on a grid"""
    check_composition(compositions)
    return chi2_value(compositions, model)
