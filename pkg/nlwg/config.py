"""
Configuration management for nlwg
Loads environment variables and provides the physical and numerical defaults
"""
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Application settings loaded from environment variables (prefix NLWG_)"""

    # Design wavelengths (nm)
    signal_wavelength_nm: float = 1092.0  # 88Sr+ 5P1/2 -> 4D3/2
    idler_wavelength_nm: float = 1550.0

    # Materials
    dispersion_model: str = "gehrsitz"  # 'gehrsitz' or 'afromowitz'
    d14_gaas_pm_per_v: float = 119.0
    d14_alas_pm_per_v: float = 32.0
    transparency_margin_ev: float = 0.050
    enforce_transparency: bool = True

    # Index profile
    grid_spacing_nm: float = 1.0
    substrate_padding_nm: float = 2000.0
    air_padding_nm: float = 500.0
    smoothing_width_nm: float = 5.0  # 10-90 % rise distance of each interface
    domain_slack: float = 0.25  # extra room above the initial stack during optimization

    # Design vector
    al_bounds: tuple[float, float] = (0.50, 0.90)
    thickness_bounds_nm: tuple[float, float] = (20.0, 200.0)
    squash_gain: float = 20.0
    bound_inset: float = 1e-3  # values on a bound encode this fraction of the span inside it
    tie_by_role: bool = False  # also share parameters between distinct groups of one role

    # Reference mode solver
    mode_scan_step: float = 1e-4
    mode_bisect_tol: float = 1e-10
    mode_scan_chunk: int = 256
    fundamental_candidates: int = 3

    # Surrogate
    surrogate_grid: int = 256
    surrogate_hidden: list[int] = [512, 512, 512]
    training_lr: float = 1e-3
    mse_threshold: float = 1e-6
    training_patience: int = 200
    validation_fraction: float = 0.1

    # Optimization loop
    adam_lr: float = 5.0e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    audit_every: int = 10
    finetune_every: int = 25
    finetune_trigger: float = 0.02
    finetune_epochs: int = 50
    plateau_window: int = 50
    plateau_tolerance: float = 1e-3
    init_al_inset: float = 0.05  # fraction of the Al span kept away from the bounds at init

    # Spectra
    interaction_length_mm: float = 1.0
    pump_fwhm_ghz: float = 1.0
    dispersion_table_points: int = 16
    jsa_points: int = 601
    jsa_span_thz: float = 1.5
    filter_halfwidth_nm: float = 0.5

    # Runtime
    threads: int = 4
    database_url: str = "sqlite:///./nlwg_runs.db"
    run_slow_tests: bool = False

    class Config:
        env_file = ".env"
        env_prefix = "NLWG_"
        case_sensitive = False


# Global settings instance
settings = Settings()
