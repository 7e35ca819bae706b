"""
Pydantic models for documents, run configurations and reports
"""
from pydantic import BaseModel, Field, field_validator, model_validator
from typing import Optional, List, Literal

from nlwg.config import settings


Role = Literal["substrate", "bragg_bottom", "buffer", "core", "bragg_top", "air"]
Polarization = Literal["TE", "TM"]


class Chi2Model(BaseModel):
    """Effective d14 endpoints, interpolated in Al fraction"""
    d14_gaas: float = 119.0  # pm/V
    d14_alas: float = 32.0  # pm/V
    interpolation: Literal["linear"] = "linear"

    @classmethod
    def from_settings(cls) -> "Chi2Model":
        return cls(d14_gaas=settings.d14_gaas_pm_per_v, d14_alas=settings.d14_alas_pm_per_v)


# ---------------------------------------------------------------------------
# Stack file
# ---------------------------------------------------------------------------

class SublayerDoc(BaseModel):
    thickness_nm: Optional[float] = None
    al_fraction: float

    class Config:
        extra = "forbid"


class GroupDoc(BaseModel):
    role: Role
    repeat: int = 1
    sublayers: List[SublayerDoc] = []

    class Config:
        extra = "forbid"


class WavelengthsDoc(BaseModel):
    pump: float
    te: float
    tm: float

    class Config:
        extra = "forbid"


class StackDocument(BaseModel):
    """On-disk stack file: design wavelengths and groups from substrate to air"""
    design_wavelengths_nm: WavelengthsDoc
    groups: List[GroupDoc]

    class Config:
        extra = "forbid"


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

class GradientReport(BaseModel):
    """Propagated vs central-difference gradient of one scalar function"""
    value: float
    gradient: List[float]
    fd_gradient: List[float]
    fd_gradient_half: List[float]
    rel_discrepancy: List[float]
    max_rel_discrepancy: float
    max_rel_discrepancy_half: float
    step: float
    norm: Literal["max_rel"] = "max_rel"
    step_sensitive: bool = False


class TrajectoryPoint(BaseModel):
    """One optimizer iteration (trajectory CSV row + run-ledger row)"""
    iter: int
    fom_surrogate_pmV: float
    fom_reference_pmV: Optional[float] = None
    rel_discrepancy: Optional[float] = None
    theta_deg: Optional[float] = None
    n_te: Optional[float] = None  # surrogate indices that set theta
    n_tm: Optional[float] = None
    model_version: int
    design_hash: str
    note: str = ""


class RateFactor(BaseModel):
    name: str
    value: float
    unit: str = ""
    kind: Literal["rate", "probability", "count", "divisor", "window"]
    note: str = ""
    pulse_s: Optional[float] = None  # emission duration a "window" factor must contain

    @model_validator(mode="after")
    def _check_range(self):
        if self.kind == "probability" and not 0.0 <= self.value <= 1.0:
            raise ValueError(f"{self.name}: probability {self.value} outside [0, 1]")
        if self.kind == "divisor" and self.value <= 0.0:
            raise ValueError(f"{self.name}: divisor must be positive, got {self.value}")
        if self.kind == "window" and (self.value <= 0.0 or not self.pulse_s or self.pulse_s <= 0.0):
            raise ValueError(f"{self.name}: a window needs a positive length and pulse_s, "
                             f"got {self.value}, {self.pulse_s}")
        if self.value < 0.0:
            raise ValueError(f"{self.name}: negative {self.kind} {self.value}")
        return self

    @property
    def multiplier(self) -> float:
        """Factor applied to the rate; a window passes the fraction of the pulse it contains"""
        if self.kind == "divisor":
            return 1.0 / self.value
        if self.kind == "window":
            return min(1.0, self.value / self.pulse_s)
        return self.value


class RateLedger(BaseModel):
    """Multiplicative factors of a heralded-entanglement rate estimate"""
    factors: List[RateFactor]
    caveat: bool = False
    reference_note: str = ""

    @field_validator("factors")
    @classmethod
    def _one_rate(cls, factors):
        if sum(1 for f in factors if f.kind == "rate") != 1:
            raise ValueError("ledger needs exactly one attempt-rate factor")
        return factors


class SurrogateMetadata(BaseModel):
    polarization: Polarization
    wavelength_nm: float
    version: int = 0
    epochs: int = 0
    final_mse: Optional[float] = None
    dataset_id: str = ""
    seed: int = 0
    domain_nm: List[float] = []  # x_min, x_max of the fine grid the inputs were pooled from
    grid_spacing_nm: float = 1.0


# ---------------------------------------------------------------------------
# Run configurations (settings <- config file <- command-line flags)
# ---------------------------------------------------------------------------

class RunConfig(BaseModel):
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    out: str = "runs/out"
    stack: Optional[str] = None  # stack file; the packaged published structure when omitted
    grid_spacing_nm: float = Field(default_factory=lambda: settings.grid_spacing_nm, gt=0)
    smoothing_width_nm: float = Field(default_factory=lambda: settings.smoothing_width_nm, ge=0)
    dispersion_model: Literal["gehrsitz", "afromowitz"] = Field(default_factory=lambda: settings.dispersion_model)
    d14_gaas_pm_per_v: float = Field(default_factory=lambda: settings.d14_gaas_pm_per_v)
    d14_alas_pm_per_v: float = Field(default_factory=lambda: settings.d14_alas_pm_per_v)

    class Config:
        extra = "forbid"

    def chi2_model(self) -> Chi2Model:
        return Chi2Model(d14_gaas=self.d14_gaas_pm_per_v, d14_alas=self.d14_alas_pm_per_v)


class DatasetConfig(RunConfig):
    n: int = Field(default=500, ge=1)
    polarization: Polarization = "TE"
    wavelength_nm: Optional[float] = None  # design wavelength of the polarization when omitted
    surrogate_grid: int = Field(default_factory=lambda: settings.surrogate_grid, ge=4)


class TrainConfig(RunConfig):
    dataset: str = "runs/dataset_te/dataset.npz"
    epochs: int = Field(default=2000, ge=0)
    lr: float = Field(default_factory=lambda: settings.training_lr, ge=0)
    hidden: List[int] = Field(default_factory=lambda: list(settings.surrogate_hidden))
    resume: Optional[str] = None


class FinetuneConfig(RunConfig):
    checkpoint: str = "runs/train_te/surrogate.npz"
    designs: List[str] = []  # stack files of the recent designs
    epochs: int = Field(default_factory=lambda: settings.finetune_epochs, ge=0)
    lr: float = Field(default_factory=lambda: settings.training_lr, ge=0)


class OptimizeConfig(RunConfig):
    te_checkpoint: str = "runs/train_te/surrogate.npz"
    tm_checkpoint: str = "runs/train_tm/surrogate.npz"
    initial: Optional[str] = None  # stack file; sampled from the template when omitted
    max_iters: int = Field(default=300, ge=0)
    audit_every: int = Field(default_factory=lambda: settings.audit_every, ge=1)
    lr: float = Field(default_factory=lambda: settings.adam_lr, ge=0)
    beta1: float = Field(default_factory=lambda: settings.adam_beta1, ge=0, lt=1)
    beta2: float = Field(default_factory=lambda: settings.adam_beta2, ge=0, lt=1)
    finetune: bool = True


class AnalyzeConfig(RunConfig):
    theta_min_deg: float = Field(default=30.0, ge=0, lt=90)
    theta_max_deg: float = Field(default=38.0, gt=0, lt=90)
    theta_points: int = Field(default=33, ge=2)
    pump_angles_deg: Optional[List[float]] = None  # both phase-matched angles when omitted
    pump_fwhm_ghz: float = Field(default_factory=lambda: settings.pump_fwhm_ghz, gt=0)
    length_mm: float = Field(default_factory=lambda: settings.interaction_length_mm, gt=0)
    jsa_points: int = Field(default_factory=lambda: settings.jsa_points, ge=3)
    jsa_span_thz: float = Field(default_factory=lambda: settings.jsa_span_thz, gt=0)
    filter_halfwidth_nm: float = Field(default_factory=lambda: settings.filter_halfwidth_nm, gt=0)
    table_halfspan_nm: float = Field(default=40.0, gt=0)

    @model_validator(mode="after")
    def _check_theta(self):
        if self.theta_max_deg <= self.theta_min_deg:
            raise ValueError("theta_max_deg must exceed theta_min_deg")
        return self
