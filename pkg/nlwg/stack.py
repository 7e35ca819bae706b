"""
Epitaxial stack model, stack file format, design vector and index profiles

Coordinates: x runs along the growth axis in nm, x = 0 at the substrate
interface and x0 = total epitaxial thickness at the air interface.
"""
import json
import math
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import ValidationError

from nlwg.config import settings
from nlwg.errors import DomainError, ResolutionError, StackFormatError, StackValidationError
from nlwg.materials import chi2_value, is_transparent, refractive_index
from nlwg.models import Chi2Model, GroupDoc, StackDocument, SublayerDoc, WavelengthsDoc
import logging

logger = logging.getLogger(__name__)

Scalar = Union[float, torch.Tensor]

ROLES = ("substrate", "bragg_bottom", "buffer", "core", "bragg_top", "air")
EPITAXIAL_ROLES = ("bragg_bottom", "buffer", "core", "bragg_top")
CORE_ROLES = ("buffer", "core")

PUBLISHED_STACK_PATH = Path(__file__).parent / "data" / "published_stack.json"

# logistic scale s such that the 10-90 % rise spans `width`
LOGISTIC_RISE = 2.0 * math.log(9.0)


def _f(value: Scalar) -> float:
    return float(value)


class Sublayer:
    """One layer of a period: thickness (nm) and Al fraction"""
    def __init__(self, thickness_nm: Optional[Scalar], al_fraction: Scalar):
        self.thickness_nm = thickness_nm
        self.al_fraction = al_fraction


class LayerGroup:
    """A role-labelled group of sublayers repeated `repeat` times"""
    def __init__(self, role: str, repeat: int, sublayers: List[Sublayer]):
        self.role = role
        self.repeat = repeat
        self.sublayers = sublayers

    def period_thickness(self) -> Scalar:
        return sum(s.thickness_nm for s in self.sublayers)


class DesignWavelengths:
    def __init__(self, pump: float, te: float, tm: float):
        self.pump = pump
        self.te = te
        self.tm = tm


class Layer:
    """A flattened epitaxial layer with its provenance"""
    def __init__(self, thickness_nm: Scalar, al_fraction: Scalar, role: str,
                 group_index: int, sublayer_index: int, period: int):
        self.thickness_nm = thickness_nm
        self.al_fraction = al_fraction
        self.role = role
        self.group_index = group_index
        self.sublayer_index = sublayer_index
        self.period = period

    @property
    def name(self) -> str:
        return f"group {self.group_index} ({self.role}) period {self.period} sublayer {self.sublayer_index}"


class EpitaxialStack:
    """Ordered layer groups from substrate to air plus the design wavelengths"""
    def __init__(self, groups: List[LayerGroup], wavelengths: DesignWavelengths):
        self.groups = groups
        self.wavelengths = wavelengths

    @property
    def substrate(self) -> LayerGroup:
        return self.groups[0]

    def group_counts(self) -> Dict[str, List[int]]:
        counts: Dict[str, List[int]] = {}
        for group in self.groups:
            counts.setdefault(group.role, []).append(group.repeat)
        return counts


# ---------------------------------------------------------------------------
# Flattening
# ---------------------------------------------------------------------------

def flatten(stack: EpitaxialStack) -> List[Layer]:
    """Epitaxial layers bottom to top, repeats expanded (substrate and air excluded)"""
    layers = []
    for gi, group in enumerate(stack.groups):
        if group.role not in EPITAXIAL_ROLES:
            continue
        for period in range(group.repeat):
            for si, sub in enumerate(group.sublayers):
                layers.append(Layer(sub.thickness_nm, sub.al_fraction, group.role, gi, si, period))
    return layers


def total_thickness(stack: EpitaxialStack) -> Scalar:
    total = 0.0
    for group in stack.groups:
        if group.role in EPITAXIAL_ROLES:
            total = total + group.repeat * group.period_thickness()
    return total


def min_thickness(stack: EpitaxialStack) -> float:
    return min(_f(s.thickness_nm) for g in stack.groups if g.role in EPITAXIAL_ROLES for s in g.sublayers)


def core_span(stack: EpitaxialStack) -> Optional[Tuple[float, float]]:
    """(x_lo, x_hi) of the contiguous buffer + core region, None when absent"""
    x = 0.0
    lo = hi = None
    for group in stack.groups:
        if group.role not in EPITAXIAL_ROLES:
            continue
        height = _f(group.repeat * group.period_thickness())
        if group.role in CORE_ROLES:
            lo = x if lo is None else lo
            hi = x + height
        x += height
    if lo is None:
        return None
    return lo, hi


# ---------------------------------------------------------------------------
# Stack file
# ---------------------------------------------------------------------------

def _validation_path(loc) -> str:
    path = ""
    for part in loc:
        path += f"[{part}]" if isinstance(part, int) else (f".{part}" if path else str(part))
    return path


def validate_stack(stack: EpitaxialStack, check_transparency: Optional[bool] = None) -> None:
    """Raise StackValidationError naming the first layer that breaks an invariant"""
    check_transparency = settings.enforce_transparency if check_transparency is None else check_transparency
    groups = stack.groups
    if len(groups) < 2 or groups[0].role != "substrate" or groups[-1].role != "air":
        raise StackValidationError("first group must be the substrate and last group air")
    for gi, group in enumerate(groups):
        if group.role in ("substrate", "air") and 0 < gi < len(groups) - 1:
            raise StackValidationError(f"group {gi}: {group.role} only allowed at the stack ends")
        if group.repeat < 1:
            raise StackValidationError(f"group {gi} ({group.role}): repeat must be >= 1, got {group.repeat}")
        if group.role == "air":
            if group.sublayers:
                raise StackValidationError(f"group {gi} (air): air carries no sublayers")
            continue
        if group.role == "substrate":
            if len(group.sublayers) != 1 or group.repeat != 1:
                raise StackValidationError(f"group {gi} (substrate): exactly one sublayer, one period")
        elif not group.sublayers:
            raise StackValidationError(f"group {gi} ({group.role}): no sublayers")
        for si, sub in enumerate(group.sublayers):
            where = f"group {gi} ({group.role}) sublayer {si}"
            al = _f(sub.al_fraction)
            if not 0.0 <= al <= 1.0:
                raise StackValidationError(f"{where}: Al fraction {al} outside [0, 1]")
            if group.role == "substrate":
                continue
            if sub.thickness_nm is None or not _f(sub.thickness_nm) > 0.0:
                raise StackValidationError(f"{where}: thickness must be > 0, got {sub.thickness_nm}")
            if check_transparency and not is_transparent(al, stack.wavelengths.pump):
                raise StackValidationError(
                    f"{where}: Al fraction {al} absorbs at the pump wavelength {stack.wavelengths.pump} nm"
                )
    if not _f(total_thickness(stack)) > 0.0:
        raise StackValidationError("stack has no epitaxial thickness")


def stack_from_document(doc: StackDocument) -> EpitaxialStack:
    groups = [
        LayerGroup(g.role, g.repeat, [Sublayer(s.thickness_nm, s.al_fraction) for s in g.sublayers])
        for g in doc.groups
    ]
    w = doc.design_wavelengths_nm
    return EpitaxialStack(groups, DesignWavelengths(w.pump, w.te, w.tm))


def stack_to_document(stack: EpitaxialStack) -> StackDocument:
    w = stack.wavelengths
    return StackDocument(
        design_wavelengths_nm=WavelengthsDoc(pump=_f(w.pump), te=_f(w.te), tm=_f(w.tm)),
        groups=[
            GroupDoc(
                role=g.role,
                repeat=g.repeat,
                sublayers=[
                    SublayerDoc(
                        thickness_nm=None if s.thickness_nm is None else _f(s.thickness_nm),
                        al_fraction=_f(s.al_fraction),
                    )
                    for s in g.sublayers
                ],
            )
            for g in stack.groups
        ],
    )


def parse_stack(document: str, check_transparency: Optional[bool] = None) -> EpitaxialStack:
    """Parse a stack file, raising StackFormatError / StackValidationError"""
    try:
        raw = json.loads(document)
    except json.JSONDecodeError as e:
        raise StackFormatError(e.msg, line=e.lineno) from e
    try:
        doc = StackDocument.model_validate(raw)
    except ValidationError as e:
        err = e.errors()[0]
        raise StackFormatError(err["msg"], path=_validation_path(err["loc"])) from e
    stack = stack_from_document(doc)
    validate_stack(stack, check_transparency)
    return stack


def serialize_stack(stack: EpitaxialStack) -> str:
    """Canonical stack file text: two-space JSON, schema key order"""
    return json.dumps(stack_to_document(stack).model_dump(), indent=2) + "\n"


def read_stack(path: Union[str, Path], check_transparency: Optional[bool] = None) -> EpitaxialStack:
    return parse_stack(Path(path).read_text(encoding="utf-8"), check_transparency)


def write_stack(stack: EpitaxialStack, path: Union[str, Path]) -> None:
    Path(path).write_text(serialize_stack(stack), encoding="utf-8")


def published_stack() -> EpitaxialStack:
    """The published ion-photon interface structure shipped with the package"""
    return read_stack(PUBLISHED_STACK_PATH)


# ---------------------------------------------------------------------------
# Index profiles
# ---------------------------------------------------------------------------

class IndexProfile:
    """Smoothed index samples on a uniform grid of cell centers.

    `n` is a float64 tensor (on the autograd graph when built from design
    tensors); `x` is a constant numpy array.
    """
    def __init__(
        self,
        x: np.ndarray,
        n: torch.Tensor,
        wavelength_nm: float,
        smoothing_width_nm: float = 0.0,
        spacing_nm: Optional[float] = None,
        x0_nm: Optional[float] = None,
        core_span_nm: Optional[Tuple[float, float]] = None,
        layers: Optional[List[Layer]] = None,
        layer_indices: Optional[torch.Tensor] = None,
        source: Optional[Tuple["EpitaxialStack", dict]] = None,
    ):
        self.x = np.asarray(x, dtype=np.float64)
        self.n = n if isinstance(n, torch.Tensor) else torch.as_tensor(np.asarray(n, dtype=np.float64))
        self.wavelength_nm = wavelength_nm
        self.smoothing_width_nm = smoothing_width_nm
        self.spacing_nm = spacing_nm if spacing_nm is not None else float(self.x[1] - self.x[0])
        self.x0_nm = x0_nm
        self.core_span_nm = core_span_nm
        self.layers = layers
        self.layer_indices = layer_indices
        self.source = source  # (stack, builder kwargs) when built from a stack

    def __len__(self) -> int:
        return len(self.x)

    @property
    def domain(self) -> Tuple[float, float]:
        half = 0.5 * self.spacing_nm
        return float(self.x[0] - half), float(self.x[-1] + half)

    def values(self) -> np.ndarray:
        """Index samples as a plain numpy array (reference path)"""
        return self.n.detach().numpy()

    def at_wavelength(self, wavelength_nm: float) -> "IndexProfile":
        """Same structure and grid at another wavelength (dispersionless without a source stack)"""
        if self.source is None:
            return IndexProfile(self.x, self.n, wavelength_nm, self.smoothing_width_nm, self.spacing_nm,
                                self.x0_nm, self.core_span_nm)
        stack, kwargs = self.source
        return build_index_profile(stack, wavelength_nm, **kwargs)


def grid_for_domain(domain: Tuple[float, float], spacing_nm: float) -> np.ndarray:
    """Cell centers x_i = x_min + (i + 1/2) dx covering the domain"""
    x_min, x_max = domain
    count = int(round((x_max - x_min) / spacing_nm))
    if count < 2:
        raise ResolutionError(f"domain {domain} holds fewer than two {spacing_nm} nm cells")
    return x_min + (np.arange(count) + 0.5) * spacing_nm


def default_domain(stack: EpitaxialStack, substrate_padding_nm: Optional[float] = None,
                   air_padding_nm: Optional[float] = None, spacing_nm: Optional[float] = None) -> Tuple[float, float]:
    """Substrate padding + stack + air padding, edges on multiples of the spacing"""
    sub = settings.substrate_padding_nm if substrate_padding_nm is None else substrate_padding_nm
    air = settings.air_padding_nm if air_padding_nm is None else air_padding_nm
    dx = settings.grid_spacing_nm if spacing_nm is None else spacing_nm
    x_min = -math.ceil(sub / dx) * dx
    x_max = math.ceil((_f(total_thickness(stack)) + air) / dx) * dx
    return x_min, x_max


def _as_tensor(values: List[Scalar]) -> torch.Tensor:
    return torch.stack([v if isinstance(v, torch.Tensor) else torch.tensor(float(v), dtype=torch.float64)
                        for v in values]).to(torch.float64)


def blend_profile(x: np.ndarray, boundaries: torch.Tensor, values: torch.Tensor,
                  smoothing_width_nm: float) -> torch.Tensor:
    """Convex logistic blend of piecewise-constant `values` across `boundaries`.

    values has one more entry than boundaries; with widths > 0 the result is
    differentiable in both.
    """
    xt = torch.as_tensor(x, dtype=torch.float64).unsqueeze(1)
    steps = values[1:] - values[:-1]
    if smoothing_width_nm > 0.0:
        scale = smoothing_width_nm / LOGISTIC_RISE
        weights = torch.sigmoid((xt - boundaries.unsqueeze(0)) / scale)
    else:
        weights = (xt >= boundaries.unsqueeze(0)).to(torch.float64)
    return values[0] + weights @ steps


def layered_profile(
    thicknesses: List[Scalar],
    indices: List[Scalar],
    wavelength_nm: float,
    grid_spacing_nm: float = 1.0,
    smoothing_width_nm: float = 0.0,
    padding_nm: Tuple[float, float] = (1000.0, 1000.0),
    domain: Optional[Tuple[float, float]] = None,
) -> IndexProfile:
    """Profile of bare indices: indices[0] below x = 0, one per thickness, indices[-1] on top"""
    if len(indices) != len(thicknesses) + 2:
        raise DomainError("need one index per layer plus the two half-spaces")
    if thicknesses and min(_f(t) for t in thicknesses) < 4.0 * grid_spacing_nm:
        raise ResolutionError(
            f"grid spacing {grid_spacing_nm} nm exceeds a quarter of the thinnest layer "
            f"({min(_f(t) for t in thicknesses)} nm)"
        )
    top = sum(_f(t) for t in thicknesses)
    if domain is None:
        domain = (-math.ceil(padding_nm[0] / grid_spacing_nm) * grid_spacing_nm,
                  math.ceil((top + padding_nm[1]) / grid_spacing_nm) * grid_spacing_nm)
    x = grid_for_domain(domain, grid_spacing_nm)
    if thicknesses:
        t = _as_tensor(thicknesses)
        boundaries = torch.cat([torch.zeros(1, dtype=torch.float64), torch.cumsum(t, dim=0)])
    else:
        boundaries = torch.zeros(1, dtype=torch.float64)
    n = blend_profile(x, boundaries, _as_tensor(indices), smoothing_width_nm)
    return IndexProfile(x, n, wavelength_nm, smoothing_width_nm, grid_spacing_nm, x0_nm=top)


def _check_resolution(stack: EpitaxialStack, grid_spacing_nm: float, smoothing_width_nm: float) -> None:
    t_min = min_thickness(stack)
    if grid_spacing_nm > t_min / 4.0:
        raise ResolutionError(
            f"grid spacing {grid_spacing_nm} nm exceeds a quarter of the thinnest layer ({t_min:.3f} nm)"
        )
    if smoothing_width_nm >= t_min / 2.0:
        raise ResolutionError(
            f"smoothing width {smoothing_width_nm} nm not below half the thinnest layer ({t_min:.3f} nm)"
        )


def _boundaries(layers: List[Layer]) -> torch.Tensor:
    t = _as_tensor([layer.thickness_nm for layer in layers])
    return torch.cat([torch.zeros(1, dtype=torch.float64), torch.cumsum(t, dim=0)])


def _check_domain(x: np.ndarray, x0: float, spacing: float) -> None:
    if x0 > x[-1] - spacing:
        raise DomainError(f"stack top at {x0:.1f} nm lies outside the simulation domain (ends {x[-1]:.1f} nm)")


def build_index_profile(
    stack: EpitaxialStack,
    wavelength_nm: float,
    grid_spacing_nm: Optional[float] = None,
    smoothing_width_nm: Optional[float] = None,
    domain: Optional[Tuple[float, float]] = None,
    isolate_substrate: bool = False,
    model: Optional[str] = None,
) -> IndexProfile:
    """Smoothed n(x) of the stack at one wavelength.

    isolate_substrate replaces the GaAs half-space by the lowest epitaxial
    layer's material (guided-mode profiles). A fixed `domain` keeps the grid
    constant while thicknesses change.
    """
    dx = settings.grid_spacing_nm if grid_spacing_nm is None else grid_spacing_nm
    width = settings.smoothing_width_nm if smoothing_width_nm is None else smoothing_width_nm
    _check_resolution(stack, dx, width)

    layers = flatten(stack)
    substrate_al = layers[0].al_fraction if isolate_substrate else stack.substrate.sublayers[0].al_fraction
    al = _as_tensor([substrate_al] + [layer.al_fraction for layer in layers])
    layer_n = refractive_index(al, wavelength_nm, model)
    n_all = torch.cat([layer_n, torch.ones(1, dtype=torch.float64)])

    domain = domain or default_domain(stack, spacing_nm=dx)
    x = grid_for_domain(domain, dx)
    x0 = _f(total_thickness(stack))
    _check_domain(x, x0, dx)
    n = blend_profile(x, _boundaries(layers), n_all, width)
    return IndexProfile(
        x, n, wavelength_nm, width, dx,
        x0_nm=x0, core_span_nm=core_span(stack), layers=layers, layer_indices=n_all,
        source=(stack, dict(grid_spacing_nm=dx, smoothing_width_nm=width, domain=domain,
                            isolate_substrate=isolate_substrate, model=model)),
    )


def build_chi2_profile(
    stack: EpitaxialStack,
    x: np.ndarray,
    smoothing_width_nm: Optional[float] = None,
    chi2_model: Optional[Chi2Model] = None,
) -> torch.Tensor:
    """chi2(x) in pm/V on the grid `x`: GaAs substrate, layer values, zero in air"""
    width = settings.smoothing_width_nm if smoothing_width_nm is None else smoothing_width_nm
    layers = flatten(stack)
    al = _as_tensor([stack.substrate.sublayers[0].al_fraction] + [layer.al_fraction for layer in layers])
    values = torch.cat([chi2_value(al, chi2_model), torch.zeros(1, dtype=torch.float64)])
    return blend_profile(x, _boundaries(layers), values, width)


def resample_profile(profile: IndexProfile, n_samples: int) -> IndexProfile:
    """Area-preserving average pooling onto n_samples coarse cells"""
    if n_samples > len(profile):
        raise ResolutionError(f"cannot pool {len(profile)} samples onto {n_samples}")
    pooled = F.adaptive_avg_pool1d(profile.n.view(1, 1, -1), n_samples).view(-1)
    # same bins as adaptive pooling: [floor(i N / m), ceil((i + 1) N / m))
    count = len(profile)
    starts = (np.arange(n_samples) * count) // n_samples
    ends = -((-np.arange(1, n_samples + 1) * count) // n_samples)
    csum = np.concatenate([[0.0], np.cumsum(profile.x)])
    x = (csum[ends] - csum[starts]) / (ends - starts)
    return IndexProfile(
        x, pooled, profile.wavelength_nm, profile.smoothing_width_nm,
        spacing_nm=(profile.domain[1] - profile.domain[0]) / n_samples,
        x0_nm=profile.x0_nm, core_span_nm=profile.core_span_nm,
    )


# ---------------------------------------------------------------------------
# Design vector
# ---------------------------------------------------------------------------

class ParamBinding:
    """Which sublayer field(s) one design entry drives, and its bounds"""
    def __init__(self, key: tuple, targets: List[Tuple[int, int]], field: str, lo: float, hi: float):
        self.key = key
        self.targets = targets  # (group index, sublayer index) pairs
        self.field = field  # 'thickness_nm' or 'al_fraction'
        self.lo = lo
        self.hi = hi


class DesignVector:
    """Unconstrained design entries decoded into bounds by a sigmoid squash"""
    def __init__(self, values: torch.Tensor, bindings: List[ParamBinding], template: EpitaxialStack, gain: float):
        self.values = values
        self.bindings = bindings
        self.template = template
        self.gain = gain

    def __len__(self) -> int:
        return len(self.bindings)

    @property
    def bounds(self) -> List[Tuple[float, float]]:
        return [(b.lo, b.hi) for b in self.bindings]

    def with_values(self, values: torch.Tensor) -> "DesignVector":
        return DesignVector(values, self.bindings, self.template, self.gain)


def default_bounds(role: str, field: str) -> Tuple[float, float]:
    if field == "al_fraction":
        return tuple(settings.al_bounds)
    return tuple(settings.thickness_bounds_nm)


def _logit(p: float, inset: float) -> float:
    p = min(max(p, inset), 1.0 - inset)
    return math.log(p) - math.log1p(-p)


def encode(
    stack: EpitaxialStack,
    bounds: Optional[Dict[Tuple[str, str], Tuple[float, float]]] = None,
    tie_by_role: Optional[bool] = None,
    gain: Optional[float] = None,
) -> DesignVector:
    """Design vector of the stack's free parameters.

    All periods of a group share their sublayer parameters; with tie_by_role,
    groups of the same role (e.g. both buffers) share them too. Values on a
    bound are encoded `bound_inset` of the span inside it, so that every entry
    is finite and keeps a gradient.
    """
    tie_by_role = settings.tie_by_role if tie_by_role is None else tie_by_role
    gain = settings.squash_gain if gain is None else gain
    bindings: Dict[tuple, ParamBinding] = {}
    entries: Dict[tuple, float] = {}
    for gi, group in enumerate(stack.groups):
        if group.role not in EPITAXIAL_ROLES:
            continue
        for si, sub in enumerate(group.sublayers):
            for field in ("thickness_nm", "al_fraction"):
                key = (group.role if tie_by_role else gi, si, field)
                value = _f(getattr(sub, field))
                if key in bindings:
                    if abs(entries[key] - value) > 1e-12 * max(1.0, abs(value)):
                        raise StackValidationError(
                            f"group {gi} ({group.role}) sublayer {si}: {field} {value} differs from the "
                            f"tied value {entries[key]}"
                        )
                    bindings[key].targets.append((gi, si))
                    continue
                lo, hi = (bounds or {}).get((group.role, field), default_bounds(group.role, field))
                if not lo < hi:
                    raise DomainError(f"bounds for {group.role}.{field} must satisfy lo < hi, got ({lo}, {hi})")
                if not lo <= value <= hi:
                    raise DomainError(
                        f"group {gi} ({group.role}) sublayer {si}: {field} {value} outside bounds [{lo}, {hi}]"
                    )
                bindings[key] = ParamBinding(key, [(gi, si)], field, lo, hi)
                entries[key] = value

    inset = settings.bound_inset
    values = [_logit((entries[k] - b.lo) / (b.hi - b.lo), inset) / gain for k, b in bindings.items()]
    return DesignVector(torch.tensor(values, dtype=torch.float64), list(bindings.values()), stack, gain)


def decode(v: DesignVector) -> EpitaxialStack:
    """Stack with every bound field replaced by lo + (hi - lo) * sigmoid(gain * v)"""
    physical = {}
    for i, binding in enumerate(v.bindings):
        value = binding.lo + (binding.hi - binding.lo) * torch.sigmoid(v.gain * v.values[i])
        for target in binding.targets:
            physical[(target, binding.field)] = value

    groups = []
    for gi, group in enumerate(v.template.groups):
        sublayers = []
        for si, sub in enumerate(group.sublayers):
            sublayers.append(Sublayer(
                physical.get(((gi, si), "thickness_nm"), sub.thickness_nm),
                physical.get(((gi, si), "al_fraction"), sub.al_fraction),
            ))
        groups.append(LayerGroup(group.role, group.repeat, sublayers))
    return EpitaxialStack(groups, v.template.wavelengths)
