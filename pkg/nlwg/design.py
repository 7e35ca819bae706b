"""
Inverse design of the epitaxial stack

The figure of merit is the nonlinear overlap |Gamma| = |int chi2 E_p E_TE E_TM dx|
of the pump and the two guided modes. On the design path the modes come
from the surrogates, the pump angle from longitudinal phase matching of
their effective indices, and the pump from the differentiable
transfer-matrix solver, so |Gamma| is a differentiable function of the
design vector. The reference path recomputes the same quantity with the
eigensolver for audits.
"""
import csv
import hashlib
import math
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.optim as optim

from nlwg.config import settings
from nlwg.errors import (
    DomainError, IndeterminateDiscrepancyError, ModeSolverError, NoPhaseMatchingError, OptimizationAborted,
    ResolutionError, ShapeError,
)
from nlwg.grad import evaluate_with_gradient
from nlwg.materials import refractive_index
from nlwg.models import Chi2Model, TrajectoryPoint
from nlwg.modes import GuidedMode, fundamental_mode, reconstruct_tm_efield
from nlwg.pump import PumpField, pump_field
from nlwg.stack import (
    EPITAXIAL_ROLES, DesignVector, DesignWavelengths, EpitaxialStack, IndexProfile, LayerGroup, Sublayer,
    build_chi2_profile, build_index_profile, decode, default_bounds, encode, published_stack, total_thickness,
)
from nlwg.surrogate import SurrogateModel, TrainingSample, audit_samples_from_designs, fine_tune, predict, sample_from_mode
import logging

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

Real = Union[float, torch.Tensor]

# penalty target for the phase-matching sine when no real angle exists
SINE_WINDOW = (0.05, 0.95)
DISCREPANCY_EPS = 1e-12


class FigureOfMerit:
    """|Gamma| in pm/V with the angle and the integrand it was computed from"""
    def __init__(self, gamma: torch.Tensor, theta_deg: Real, components: torch.Tensor,
                 n_te: Optional[Real] = None, n_tm: Optional[Real] = None):
        self.gamma = gamma
        self.gamma_abs = gamma.abs()
        self.theta_deg = theta_deg
        self.components = components
        self.n_te = n_te
        self.n_tm = n_tm

    @property
    def value(self) -> float:
        return float(self.gamma_abs)


# ---------------------------------------------------------------------------
# Physics
# ---------------------------------------------------------------------------

def pump_wavelength(signal_nm: float, idler_nm: float) -> float:
    """Energy conservation: 1/lambda_p = 1/lambda_s + 1/lambda_i"""
    if signal_nm <= 0.0 or idler_nm <= 0.0:
        raise DomainError(f"wavelengths must be positive, got ({signal_nm}, {idler_nm})")
    return signal_nm * idler_nm / (signal_nm + idler_nm)


def phase_matching_sine(n_te: Real, n_tm: Real, te_nm: float, tm_nm: float, pump_nm: float) -> Real:
    return pump_nm * (n_te / te_nm - n_tm / tm_nm)


def phase_matching_angle(n_te: Real, n_tm: Real, te_nm: float, tm_nm: float, pump_nm: float) -> Real:
    """Pump angle in degrees from sin(theta) = lambda_p (n_TE/lambda_TE - n_TM/lambda_TM).

    Tensor indices give a differentiable tensor angle. A zero sine is normal
    incidence; negative sines or sines >= 1 have no real angle.
    """
    rhs = phase_matching_sine(n_te, n_tm, te_nm, tm_nm, pump_nm)
    if isinstance(rhs, torch.Tensor):
        if bool((rhs < 0.0) | (rhs >= 1.0)):
            raise NoPhaseMatchingError(float(rhs))
        return torch.rad2deg(torch.asin(rhs))
    if rhs < 0.0 or rhs >= 1.0:
        raise NoPhaseMatchingError(rhs)
    return math.degrees(math.asin(rhs))


def overlap_fom(
    x: np.ndarray,
    te_field: Union[np.ndarray, torch.Tensor],
    tm_efield: Union[np.ndarray, torch.Tensor],
    pump: Union[PumpField, torch.Tensor, np.ndarray],
    chi2: Union[np.ndarray, torch.Tensor],
    theta_deg: Real = 0.0,
) -> FigureOfMerit:
    """Trapezoidal overlap of chi2 E_p E_TE E_TM on one grid"""
    e_p = pump.total if isinstance(pump, PumpField) else torch.as_tensor(pump)
    fields = [torch.as_tensor(te_field), torch.as_tensor(tm_efield), e_p, torch.as_tensor(chi2)]
    shapes = {tuple(f.shape) for f in fields}
    if len(shapes) != 1 or shapes != {(len(x),)}:
        raise ShapeError(f"fields sampled on different grids: {sorted(shapes)} vs {len(x)} points")
    te, tm, e_p, chi = fields
    integrand = chi.to(torch.complex128) * e_p.to(torch.complex128) * (te * tm).to(torch.complex128)
    gamma = torch.trapezoid(integrand, torch.as_tensor(x, dtype=torch.float64))
    return FigureOfMerit(gamma, theta_deg, integrand)


def efficiency_ratio(gamma_a: float, gamma_b: float) -> float:
    """Conversion-efficiency ratio (|Gamma_a| / |Gamma_b|)^2"""
    if gamma_b <= 0.0:
        raise DomainError(f"reference |Gamma| must be positive, got {gamma_b}")
    return (gamma_a / gamma_b) ** 2


def _unit_power(field: torch.Tensor, x: np.ndarray) -> torch.Tensor:
    return field / torch.sqrt(torch.trapezoid(field ** 2, torch.as_tensor(x)))


# ---------------------------------------------------------------------------
# Initial structures and the simulation domain
# ---------------------------------------------------------------------------

def sample_initial_stack(
    seed: Union[int, np.random.Generator],
    pump_nm: Optional[float] = None,
    template: Optional[EpitaxialStack] = None,
    bounds: Optional[dict] = None,
    dispersion_model: Optional[str] = None,
) -> EpitaxialStack:
    """Random start in the template's role layout.

    Al fractions keep the template's alternating pattern, pulled inside the
    bounds by init_al_inset of their span. Bragg sublayers are drawn from
    U(0.75, 1.25) x lambda_p / 4n, core sublayers from U(0.75, 1.25) x
    lambda_p / 2n and buffers from U(50, 200) nm.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    template = template or published_stack()
    pump_nm = template.wavelengths.pump if pump_nm is None else pump_nm
    bounds = bounds or {}

    groups = []
    for group in template.groups:
        if group.role not in EPITAXIAL_ROLES:
            groups.append(LayerGroup(group.role, group.repeat,
                                     [Sublayer(s.thickness_nm, s.al_fraction) for s in group.sublayers]))
            continue
        sublayers = []
        for sub in group.sublayers:
            al_lo, al_hi = bounds.get((group.role, "al_fraction"), default_bounds(group.role, "al_fraction"))
            inset = settings.init_al_inset * (al_hi - al_lo)
            al = float(np.clip(float(sub.al_fraction), al_lo + inset, al_hi - inset))
            if group.role == "buffer":
                thickness = rng.uniform(50.0, 200.0)
            else:
                quarter = 4.0 if group.role.startswith("bragg") else 2.0
                base = pump_nm / (quarter * float(refractive_index(al, pump_nm, dispersion_model)))
                thickness = rng.uniform(0.75, 1.25) * base
            t_lo, t_hi = bounds.get((group.role, "thickness_nm"), default_bounds(group.role, "thickness_nm"))
            margin = 1e-3 * (t_hi - t_lo)
            sublayers.append(Sublayer(float(np.clip(thickness, t_lo + margin, t_hi - margin)), al))
        groups.append(LayerGroup(group.role, group.repeat, sublayers))

    stack = EpitaxialStack(groups, template.wavelengths)
    core = [float(s.al_fraction) for g in groups if g.role == "core" for s in g.sublayers]
    mirror = [float(s.al_fraction) for g in groups if g.role.startswith("bragg") for s in g.sublayers]
    if core and mirror and np.mean(core) >= np.mean(mirror):
        logger.warning(f"Template core Al {np.mean(core):.3f} not below mirror Al {np.mean(mirror):.3f}")
    return stack


def design_domain(
    template: EpitaxialStack,
    slack: Optional[float] = None,
    grid_spacing_nm: Optional[float] = None,
    n_inputs: Optional[int] = None,
) -> Tuple[float, float]:
    """Fixed domain with room for growth; its cell count is a multiple of the surrogate grid"""
    slack = settings.domain_slack if slack is None else slack
    dx = settings.grid_spacing_nm if grid_spacing_nm is None else grid_spacing_nm
    n_inputs = settings.surrogate_grid if n_inputs is None else n_inputs
    x_min = -math.ceil(settings.substrate_padding_nm / dx) * dx
    top = float(total_thickness(template)) * (1.0 + slack) + settings.air_padding_nm
    cells = math.ceil((top - x_min) / dx / n_inputs) * n_inputs
    return x_min, x_min + cells * dx


# ---------------------------------------------------------------------------
# Surrogate and reference evaluation
# ---------------------------------------------------------------------------

class DesignProblem:
    """Surrogates, wavelengths and grid shared by every evaluation of one run"""
    def __init__(
        self,
        te_model: SurrogateModel,
        tm_model: SurrogateModel,
        wavelengths: DesignWavelengths,
        domain_nm: Optional[Tuple[float, float]] = None,
        grid_spacing_nm: Optional[float] = None,
        smoothing_width_nm: Optional[float] = None,
        chi2_model: Optional[Chi2Model] = None,
        dispersion_model: Optional[str] = None,
    ):
        self.te_model = te_model
        self.tm_model = tm_model
        self.wavelengths = wavelengths
        self.domain_nm = tuple(domain_nm or te_model.metadata.domain_nm)
        self.grid_spacing_nm = grid_spacing_nm or te_model.metadata.grid_spacing_nm
        self.smoothing_width_nm = settings.smoothing_width_nm if smoothing_width_nm is None else smoothing_width_nm
        self.chi2_model = chi2_model or Chi2Model.from_settings()
        self.dispersion_model = dispersion_model

    @property
    def model_version(self) -> int:
        return max(self.te_model.metadata.version, self.tm_model.metadata.version)

    def profile(self, stack: EpitaxialStack, wavelength_nm: float, guided: bool = True) -> IndexProfile:
        return build_index_profile(stack, wavelength_nm, self.grid_spacing_nm, self.smoothing_width_nm,
                                   domain=self.domain_nm, isolate_substrate=guided, model=self.dispersion_model)


class _SurrogateState:
    def __init__(self, stack, pump_profile, e_te, e_tm, n_te, n_tm, rhs):
        self.stack = stack
        self.pump_profile = pump_profile
        self.e_te = e_te
        self.e_tm = e_tm
        self.n_te = n_te
        self.n_tm = n_tm
        self.rhs = rhs


def _surrogate_state(v: DesignVector, problem: DesignProblem) -> _SurrogateState:
    w = problem.wavelengths
    stack = decode(v)
    te_profile = problem.profile(stack, w.te)
    tm_profile = problem.profile(stack, w.tm)
    e_te, n_te = predict(problem.te_model, te_profile)
    d_tm, n_tm = predict(problem.tm_model, tm_profile)
    e_tm = _unit_power(d_tm / tm_profile.n ** 2, tm_profile.x)
    rhs = phase_matching_sine(n_te, n_tm, w.te, w.tm, w.pump)
    return _SurrogateState(stack, problem.profile(stack, w.pump, guided=False), e_te, e_tm, n_te, n_tm, rhs)


def _overlap_at(state: _SurrogateState, theta_deg: torch.Tensor, problem: DesignProblem) -> FigureOfMerit:
    profile = state.pump_profile
    pump = pump_field(profile, theta_deg)
    chi2 = build_chi2_profile(state.stack, profile.x, problem.smoothing_width_nm, problem.chi2_model)
    fom = overlap_fom(profile.x, state.e_te, state.e_tm, pump, chi2, theta_deg)
    fom.n_te, fom.n_tm = state.n_te, state.n_tm
    return fom


def design_fom(v: DesignVector, problem: DesignProblem) -> FigureOfMerit:
    """Surrogate-path FOM, differentiable in v.values"""
    state = _surrogate_state(v, problem)
    w = problem.wavelengths
    theta = phase_matching_angle(state.n_te, state.n_tm, w.te, w.tm, w.pump)
    return _overlap_at(state, theta, problem)


class ReferenceEvaluation:
    def __init__(self, fom: FigureOfMerit, te_mode: GuidedMode, tm_mode: GuidedMode,
                 te_profile: IndexProfile, tm_profile: IndexProfile):
        self.fom = fom
        self.te_mode = te_mode
        self.tm_mode = tm_mode
        self.te_profile = te_profile
        self.tm_profile = tm_profile


def reference_fom(stack: EpitaxialStack, problem: DesignProblem) -> ReferenceEvaluation:
    """Audit-path FOM: eigensolver modes, their phase-matching angle and the pump TMM"""
    w = problem.wavelengths
    with torch.no_grad():
        te_profile = problem.profile(stack, w.te)
        tm_profile = problem.profile(stack, w.tm)
        te = fundamental_mode(te_profile, "TE")
        tm = fundamental_mode(tm_profile, "TM")
        for mode, pol, profile in ((te, "TE", te_profile), (tm, "TM", tm_profile)):
            if mode is None:
                n = profile.values()
                raise ModeSolverError(f"no guided {pol} mode", (max(float(n[0]), float(n[-1])), float(n.max())))
        theta = phase_matching_angle(te.n_eff, tm.n_eff, w.te, w.tm, w.pump)
        pump_profile = problem.profile(stack, w.pump, guided=False)
        pump = pump_field(pump_profile, theta)
        chi2 = build_chi2_profile(stack, pump_profile.x, problem.smoothing_width_nm, problem.chi2_model)
        e_tm = reconstruct_tm_efield(tm, tm_profile, normalize=True)
        fom = overlap_fom(pump_profile.x, te.field, e_tm, pump, chi2, theta)
    fom.n_te, fom.n_tm = te.n_eff, tm.n_eff
    return ReferenceEvaluation(fom, te, tm, te_profile, tm_profile)


def relative_discrepancy(surrogate: float, reference: float) -> float:
    return abs(surrogate - reference) / max(reference, DISCREPANCY_EPS)


def audit_discrepancy(v: DesignVector, problem: DesignProblem) -> float:
    """|FOM_surrogate - FOM_reference| / FOM_reference"""
    with torch.no_grad():
        surrogate = design_fom(v, problem).value
    reference = reference_fom(decode(v), problem).fom.value
    if reference < DISCREPANCY_EPS:
        raise IndeterminateDiscrepancyError(f"reference FOM {reference:.3e} pm/V too small for a relative discrepancy")
    return abs(surrogate - reference) / reference


def design_hash(v: Union[DesignVector, torch.Tensor]) -> str:
    """sha256 of the design entries as little-endian float64"""
    values = v.values if isinstance(v, DesignVector) else v
    return hashlib.sha256(np.ascontiguousarray(values.detach().numpy(), dtype="<f8").tobytes()).hexdigest()


# ---------------------------------------------------------------------------
# Optimization loop
# ---------------------------------------------------------------------------

class OptimizerState:
    """Design vector, Adam moments and hyperparameters at one iteration"""
    def __init__(self, design: DesignVector, exp_avg: torch.Tensor, exp_avg_sq: torch.Tensor, iteration: int,
                 lr: float, beta1: float, beta2: float, eps: float, seed: int):
        self.design = design
        self.exp_avg = exp_avg
        self.exp_avg_sq = exp_avg_sq
        self.iteration = iteration
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.seed = seed


class OptimizationResult:
    def __init__(self, trajectory: List[TrajectoryPoint], best_design: Optional[DesignVector],
                 best_fom_reference: Optional[float], initial_fom_reference: Optional[float],
                 final_state: OptimizerState, te_model: SurrogateModel, tm_model: SurrogateModel, stop_reason: str):
        self.trajectory = trajectory
        self.best_design = best_design
        self.best_fom_reference = best_fom_reference
        self.initial_fom_reference = initial_fom_reference
        self.final_state = final_state
        self.te_model = te_model
        self.tm_model = tm_model
        self.stop_reason = stop_reason

    @property
    def best_stack(self) -> Optional[EpitaxialStack]:
        return None if self.best_design is None else detached_stack(self.best_design)

    @property
    def improvement(self) -> Optional[float]:
        if not self.best_fom_reference or not self.initial_fom_reference:
            return None
        return self.best_fom_reference / self.initial_fom_reference


def detached_stack(v: DesignVector) -> EpitaxialStack:
    """Decoded stack with plain float fields"""
    with torch.no_grad():
        stack = decode(v.with_values(v.values.detach().clone()))
    for group in stack.groups:
        for sub in group.sublayers:
            if sub.thickness_nm is not None:
                sub.thickness_nm = float(sub.thickness_nm)
            sub.al_fraction = float(sub.al_fraction)
    return stack


def _penalty(rhs: torch.Tensor) -> torch.Tensor:
    return (rhs - rhs.clamp(*SINE_WINDOW)) ** 2


def _optimizer_state(optimizer: optim.Adam, params: torch.Tensor, v: DesignVector, iteration: int,
                     seed: int) -> OptimizerState:
    group = optimizer.param_groups[0]
    state = optimizer.state.get(params, {})
    zeros = torch.zeros_like(params)
    return OptimizerState(
        v.with_values(params.detach().clone()),
        state.get("exp_avg", zeros).detach().clone(), state.get("exp_avg_sq", zeros).detach().clone(),
        iteration, group["lr"], group["betas"][0], group["betas"][1], group["eps"], seed,
    )


def optimize(
    initial: EpitaxialStack,
    problem: DesignProblem,
    max_iters: int = 300,
    audit_every: Optional[int] = None,
    lr: Optional[float] = None,
    beta1: Optional[float] = None,
    beta2: Optional[float] = None,
    finetune: bool = True,
    seed: int = 0,
    record: Optional[Callable[[TrajectoryPoint], None]] = None,
) -> OptimizationResult:
    """Adam on -|Gamma| over the design vector of `initial`.

    Iteration 0 evaluates the initial design; the final design is evaluated
    and audited as iteration max_iters without a step. The best design is
    the audited one with the largest reference FOM.
    """
    audit_every = audit_every or settings.audit_every
    lr = settings.adam_lr if lr is None else lr
    beta1 = settings.adam_beta1 if beta1 is None else beta1
    beta2 = settings.adam_beta2 if beta2 is None else beta2
    torch.manual_seed(seed % 2 ** 63)

    v = encode(initial)
    params = v.values.detach().clone()
    optimizer = optim.Adam([params], lr=lr, betas=(beta1, beta2), eps=settings.adam_eps)
    w = problem.wavelengths

    trajectory: List[TrajectoryPoint] = []
    best_design: Optional[DesignVector] = None
    best_reference: Optional[float] = None
    initial_reference: Optional[float] = None
    running_best = -math.inf
    last_gain = 0
    recent: List[Tuple[int, TrainingSample, TrainingSample]] = []
    stop_reason = "max_iters"

    logger.info("=" * 60)
    logger.info(f"Optimizing {len(v)} design parameters: {max_iters} iterations, lr {lr:g}, "
                f"audit every {audit_every}")
    logger.info("=" * 60)

    for it in range(max_iters + 1):
        current = v.with_values(params.detach().clone())
        info = {}

        def objective(design: DesignVector) -> torch.Tensor:
            state = _surrogate_state(design, problem)
            info["n_te"], info["n_tm"], info["rhs"] = state.n_te, state.n_tm, state.rhs
            if bool((state.rhs < 0.0) | (state.rhs >= 1.0)):
                return _penalty(state.rhs)
            theta = torch.rad2deg(torch.asin(state.rhs))
            fom = _overlap_at(state, theta, problem)
            info["fom"], info["theta"] = fom.gamma_abs, theta
            return -fom.gamma_abs

        snapshot = _optimizer_state(optimizer, params, v, it, seed)
        try:
            result = evaluate_with_gradient(objective, current)
        except (DomainError, ResolutionError) as e:
            logger.error(f"Iteration {it}: design left the simulation domain ({e}); stopping")
            stop_reason = "domain"
            break
        partial = OptimizationResult(trajectory, best_design, best_reference, initial_reference, snapshot,
                                     problem.te_model, problem.tm_model, "aborted")
        if not result.finite:
            raise OptimizationAborted(f"non-finite FOM or gradient at iteration {it}", last_state=partial)

        matched = "fom" in info
        fom_s = float(info["fom"]) if matched else 0.0
        rhs = float(info["rhs"])
        note = "" if matched else f"no_phase_matching sin={rhs:.6g}"
        if not matched:
            logger.warning(f"Iteration {it}: no real phase-matching angle (sin = {rhs:.6g}), penalty step")
        point = TrajectoryPoint(
            iter=it,
            fom_surrogate_pmV=fom_s,
            theta_deg=float(info["theta"]) if matched else None,
            n_te=float(info["n_te"]),
            n_tm=float(info["n_tm"]),
            model_version=problem.model_version,
            design_hash=design_hash(current),
        )

        if it % audit_every == 0 or it == max_iters:
            try:
                ref = reference_fom(detached_stack(current), problem)
                point.fom_reference_pmV = ref.fom.value
                point.rel_discrepancy = relative_discrepancy(fom_s, ref.fom.value)
                recent.append((it, sample_from_mode(ref.te_profile, ref.te_mode, problem.te_model.n_inputs),
                               sample_from_mode(ref.tm_profile, ref.tm_mode, problem.tm_model.n_inputs)))
                if initial_reference is None:
                    initial_reference = ref.fom.value
                if best_reference is None or ref.fom.value > best_reference:
                    best_reference = ref.fom.value
                    best_design = current
            except (ModeSolverError, NoPhaseMatchingError) as e:
                note = f"{note} audit_failed: {e}".strip()
                logger.warning(f"Iteration {it}: reference audit failed: {e}")
        point.note = note
        trajectory.append(point)
        if record is not None:
            record(point)

        theta_txt = f"{point.theta_deg:.4f}" if point.theta_deg is not None else "-"
        audit_txt = (f", reference {point.fom_reference_pmV:.4f} pm/V ({100 * point.rel_discrepancy:.2f} %)"
                     if point.fom_reference_pmV is not None else "")
        logger.info(f"[{it:4d}] |Gamma| {fom_s:.4f} pm/V, theta {theta_txt} deg{audit_txt}")

        if it == max_iters:
            break

        # plateau on the running maximum of the surrogate FOM
        if fom_s > running_best * (1.0 + settings.plateau_tolerance) or running_best <= 0.0:
            last_gain = it
        running_best = max(running_best, fom_s)
        if it - last_gain >= settings.plateau_window:
            logger.info(f"Plateau: no 0.1 % gain in {settings.plateau_window} iterations")
            stop_reason = "plateau"
            break

        if finetune and it > 0:
            drift = point.rel_discrepancy is not None and point.rel_discrepancy > settings.finetune_trigger
            if it % settings.finetune_every == 0 or drift:
                _fine_tune_models(problem, it, current, recent, reason="audit drift" if drift else "schedule")
                recent = []

        optimizer.zero_grad()
        params.grad = torch.from_numpy(result.gradient).to(params.dtype)
        optimizer.step()

    final_state = _optimizer_state(optimizer, params, v, it, seed)
    logger.info("=" * 60)
    if best_reference is not None and initial_reference:
        logger.info(f"Best reference FOM {best_reference:.4f} pm/V, {best_reference / initial_reference:.2f}x the "
                    f"initial {initial_reference:.4f} pm/V ({stop_reason})")
    logger.info("=" * 60)
    return OptimizationResult(trajectory, best_design, best_reference, initial_reference, final_state,
                              problem.te_model, problem.tm_model, stop_reason)


def _fine_tune_models(problem: DesignProblem, it: int, current: DesignVector,
                      recent: List[Tuple[int, TrainingSample, TrainingSample]], reason: str) -> None:
    """Fine-tune both surrogates on the designs audited since the last fine-tune plus the current one"""
    logger.info(f"Fine-tuning surrogates at iteration {it} ({reason})")
    te_samples = [entry[1] for entry in recent]
    tm_samples = [entry[2] for entry in recent]
    if not recent or recent[-1][0] != it:
        stack = detached_stack(current)
        te_samples += audit_samples_from_designs([stack], problem.te_model, problem.smoothing_width_nm,
                                                 problem.dispersion_model)
        tm_samples += audit_samples_from_designs([stack], problem.tm_model, problem.smoothing_width_nm,
                                                 problem.dispersion_model)
    problem.te_model, _ = fine_tune(problem.te_model, te_samples)
    problem.tm_model, _ = fine_tune(problem.tm_model, tm_samples)


def write_trajectory_csv(trajectory: Sequence[TrajectoryPoint], path: Union[str, Path]) -> None:
    def fmt(value: Optional[float]) -> str:
        return "" if value is None else f"{value:.17g}"

    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["iter", "fom_surrogate_pmV", "fom_reference_pmV", "rel_discrepancy", "theta_deg",
                         "model_version", "design_hash", "note"])
        for p in trajectory:
            writer.writerow([p.iter, fmt(p.fom_surrogate_pmV), fmt(p.fom_reference_pmV), fmt(p.rel_discrepancy),
                             fmt(p.theta_deg), p.model_version, p.design_hash, p.note])


def read_trajectory_csv(path: Union[str, Path]) -> List[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))
