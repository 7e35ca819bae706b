"""
Neural-network surrogates for the guided modes

One network per polarization maps the index profile, average-pooled onto a
fixed coarse grid, to the mode's field samples on that grid (TE: E, TM: D)
and its effective index. Targets come from the reference solver; training
is full-batch Adam on MSE(field) + MSE(n_eff) in physical units.
"""
import copy
import hashlib
import io
import json
import math
import zipfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
import torch.optim as optim

from nlwg.config import settings
from nlwg.errors import (
    DatasetGenerationError, DomainError, ModeSolverError, ResolutionError, ShapeError,
    StackFormatError, StackValidationError, TrainingDivergenceError, TransparencyError,
)
from nlwg.models import SurrogateMetadata
from nlwg.modes import GuidedMode, fundamental_mode, normalize_field
from nlwg.stack import DesignVector, EpitaxialStack, IndexProfile, build_index_profile, decode, resample_profile
import logging

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
# fixed zip timestamps keep containers byte-reproducible
ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)
INPUT_SCALE_FLOOR = 1e-6
NEFF_SCALE_FLOOR = 1e-2
FIELD_SCALE_FLOOR = 1e-6

Sampler = Callable[[np.random.Generator], EpitaxialStack]


class TrainingSample:
    """Coarse index samples with the reference mode as target"""
    def __init__(self, input: np.ndarray, target_field: np.ndarray, target_neff: float):
        self.input = np.asarray(input, dtype=np.float64)
        self.target_field = np.asarray(target_field, dtype=np.float64)
        self.target_neff = float(target_neff)


class Dataset:
    """Training samples of one polarization at one wavelength on one fixed domain"""
    def __init__(
        self,
        samples: List[TrainingSample],
        polarization: str,
        wavelength_nm: float,
        domain_nm: Tuple[float, float],
        grid_spacing_nm: float,
        seed: int = 0,
        validation_fraction: Optional[float] = None,
        generator: Optional[dict] = None,
    ):
        fraction = settings.validation_fraction if validation_fraction is None else validation_fraction
        if not 0.0 < fraction <= 0.5:
            raise DomainError(f"validation fraction must lie in (0, 0.5], got {fraction}")
        self.samples = samples
        self.polarization = polarization
        self.wavelength_nm = wavelength_nm
        self.domain_nm = tuple(domain_nm)
        self.grid_spacing_nm = grid_spacing_nm
        self.seed = seed
        self.validation_fraction = fraction
        self.generator = generator or {}

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def n_inputs(self) -> int:
        return len(self.samples[0].input)

    def tensors(self, indices: Optional[Sequence[int]] = None) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        chosen = [self.samples[i] for i in indices] if indices is not None else self.samples
        inputs = torch.as_tensor(np.stack([s.input for s in chosen]))
        fields = torch.as_tensor(np.stack([s.target_field for s in chosen]))
        neffs = torch.as_tensor(np.array([s.target_neff for s in chosen]))
        return inputs, fields, neffs

    def split(self) -> Tuple[List[int], List[int]]:
        """Last ceil(fraction * n) samples validate; a single sample serves both roles"""
        count = len(self.samples)
        if count < 2:
            return list(range(count)), list(range(count))
        n_val = min(max(1, math.ceil(self.validation_fraction * count)), count - 1)
        return list(range(count - n_val)), list(range(count - n_val, count))


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

class SurrogateModel(nn.Module):
    """Fully connected tanh network with a field head and an effective-index head"""
    def __init__(self, polarization: str, n_inputs: int, hidden: Sequence[int],
                 metadata: Optional[SurrogateMetadata] = None):
        super(SurrogateModel, self).__init__()
        self.polarization = polarization
        self.n_inputs = n_inputs
        self.hidden = list(hidden)

        layers: List[nn.Module] = []
        width = n_inputs
        for size in self.hidden:
            layers += [nn.Linear(width, size), nn.Tanh()]
            width = size
        self.trunk = nn.Sequential(*layers)
        self.field_head = nn.Linear(width, n_inputs)
        self.neff_head = nn.Linear(width, 1)

        self.register_buffer("input_mean", torch.zeros(n_inputs))
        self.register_buffer("input_scale", torch.ones(n_inputs))
        self.register_buffer("field_scale", torch.ones(()))
        self.register_buffer("neff_mean", torch.zeros(()))
        self.register_buffer("neff_scale", torch.ones(()))
        self.double()
        self.metadata = metadata or SurrogateMetadata(polarization=polarization, wavelength_nm=0.0)

    @property
    def layer_sizes(self) -> List[int]:
        return [self.n_inputs] + self.hidden + [self.n_inputs + 1]

    def forward(self, profiles: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        h = self.trunk((profiles - self.input_mean) / self.input_scale)
        field = self.field_head(h) * self.field_scale
        neff = self.neff_head(h).squeeze(-1) * self.neff_scale + self.neff_mean
        return field, neff

    def set_normalization(self, inputs: torch.Tensor, fields: torch.Tensor, neffs: torch.Tensor) -> None:
        """Input standardization and output scales from a training set"""
        with torch.no_grad():
            self.input_mean.copy_(inputs.mean(dim=0))
            self.input_scale.copy_(inputs.std(dim=0, unbiased=False).clamp_min(INPUT_SCALE_FLOOR))
            self.field_scale.copy_(fields.std(unbiased=False).clamp_min(FIELD_SCALE_FLOOR))
            self.neff_mean.copy_(neffs.mean())
            self.neff_scale.copy_(neffs.std(unbiased=False).clamp_min(NEFF_SCALE_FLOOR))

    def weights_finite(self) -> bool:
        return all(bool(torch.isfinite(p).all()) for p in self.parameters())


def build_model(polarization: str, n_inputs: Optional[int] = None, hidden: Optional[Sequence[int]] = None,
                seed: int = 0, metadata: Optional[SurrogateMetadata] = None) -> SurrogateModel:
    """Freshly initialized surrogate; weights are a function of the seed"""
    torch.manual_seed(seed % 2 ** 63)
    n_inputs = settings.surrogate_grid if n_inputs is None else n_inputs
    hidden = settings.surrogate_hidden if hidden is None else hidden
    return SurrogateModel(polarization, n_inputs, hidden, metadata)


# ---------------------------------------------------------------------------
# Samples from the reference solver
# ---------------------------------------------------------------------------

def sample_from_mode(profile: IndexProfile, mode: GuidedMode, n_inputs: int) -> TrainingSample:
    """Pool profile and mode onto n_inputs coarse cells; the target is renormalized there"""
    coarse = resample_profile(profile, n_inputs)
    pooled = F.adaptive_avg_pool1d(torch.as_tensor(mode.field).view(1, 1, -1), n_inputs).view(-1).numpy()
    return TrainingSample(coarse.values(), normalize_field(pooled, coarse.x), mode.n_eff)


def reference_sample(
    stack: EpitaxialStack,
    polarization: str,
    wavelength_nm: float,
    domain_nm: Tuple[float, float],
    grid_spacing_nm: Optional[float] = None,
    smoothing_width_nm: Optional[float] = None,
    n_inputs: Optional[int] = None,
    dispersion_model: Optional[str] = None,
) -> Optional[TrainingSample]:
    """Training sample of one stack, None when the fundamental mode is not guided"""
    profile = build_index_profile(stack, wavelength_nm, grid_spacing_nm, smoothing_width_nm,
                                  domain=tuple(domain_nm), isolate_substrate=True, model=dispersion_model)
    mode = fundamental_mode(profile, polarization)
    if mode is None:
        return None
    return sample_from_mode(profile, mode, n_inputs or settings.surrogate_grid)


def audit_samples_from_designs(
    designs: Sequence[Union[DesignVector, EpitaxialStack]],
    model: SurrogateModel,
    smoothing_width_nm: Optional[float] = None,
    dispersion_model: Optional[str] = None,
) -> List[TrainingSample]:
    """Fresh reference samples of recent designs on the model's own grid"""
    meta = model.metadata
    samples = []
    with torch.no_grad():
        for design in designs:
            stack = decode(design) if isinstance(design, DesignVector) else design
            try:
                sample = reference_sample(stack, meta.polarization, meta.wavelength_nm, tuple(meta.domain_nm),
                                          meta.grid_spacing_nm, smoothing_width_nm, model.n_inputs,
                                          dispersion_model)
            except (DomainError, ResolutionError, ModeSolverError) as e:
                logger.warning(f"Skipping design for {meta.polarization} fine-tune: {e}")
                continue
            if sample is None:
                logger.warning(f"Skipping design without a guided {meta.polarization} mode")
                continue
            samples.append(sample)
    return samples


def generate_dataset(
    n: int,
    sampler: Sampler,
    wavelength_nm: float,
    polarization: str,
    seed: int,
    domain_nm: Tuple[float, float],
    grid_spacing_nm: Optional[float] = None,
    smoothing_width_nm: Optional[float] = None,
    n_inputs: Optional[int] = None,
    dispersion_model: Optional[str] = None,
    validation_fraction: Optional[float] = None,
    max_workers: Optional[int] = None,
) -> Dataset:
    """Reference-solved samples of sampled stacks.

    Attempt k draws from the k-th child of SeedSequence(seed), and samples
    are accepted in attempt order, so the result does not depend on the
    worker count. Unguided, out-of-domain and duplicate structures are
    discarded.
    """
    if n < 1:
        raise DomainError(f"dataset size must be >= 1, got {n}")
    dx = settings.grid_spacing_nm if grid_spacing_nm is None else grid_spacing_nm
    n_inputs = settings.surrogate_grid if n_inputs is None else n_inputs
    workers = max_workers or settings.threads
    root = np.random.SeedSequence(seed)
    max_attempts = 100 * n

    def attempt(child: np.random.SeedSequence) -> Optional[TrainingSample]:
        rng = np.random.default_rng(child)
        try:
            stack = sampler(rng)
            return reference_sample(stack, polarization, wavelength_nm, domain_nm, dx, smoothing_width_nm,
                                    n_inputs, dispersion_model)
        except (DomainError, ResolutionError, ModeSolverError, StackValidationError, TransparencyError) as e:
            logger.debug(f"Discarded sample: {e}")
            return None

    logger.info("=" * 60)
    logger.info(f"Generating {n} {polarization} samples at {wavelength_nm:.2f} nm (seed {seed})")
    samples: List[TrainingSample] = []
    seen = set()
    attempts = 0
    discarded = 0
    with ThreadPoolExecutor(max_workers=workers) as pool:
        while len(samples) < n:
            if attempts >= max_attempts:
                raise DatasetGenerationError(
                    f"only {len(samples)} of {n} guided structures after {attempts} attempts"
                )
            batch = min(max(n - len(samples), workers), max_attempts - attempts)
            results = list(pool.map(attempt, root.spawn(batch)))
            attempts += batch
            for sample in results:
                if sample is None:
                    discarded += 1
                    continue
                key = sample.input.tobytes()
                if key in seen:
                    discarded += 1
                    continue
                seen.add(key)
                samples.append(sample)
                if len(samples) == n:
                    break
    if discarded:
        logger.warning(f"Discarded {discarded} of {attempts} sampled structures")
    logger.info(f"Dataset complete: {len(samples)} samples")
    logger.info("=" * 60)

    return Dataset(
        samples, polarization, wavelength_nm, tuple(domain_nm), dx, seed, validation_fraction,
        generator={"n": n, "attempts": attempts, "discarded": discarded, "n_inputs": n_inputs,
                   "smoothing_width_nm": smoothing_width_nm, "dispersion_model": dispersion_model},
    )


def dataset_statistics(dataset: Dataset) -> dict:
    neffs = np.array([s.target_neff for s in dataset.samples])
    return {
        "n": len(dataset),
        "polarization": dataset.polarization,
        "wavelength_nm": dataset.wavelength_nm,
        "neff_mean": float(neffs.mean()),
        "neff_min": float(neffs.min()),
        "neff_max": float(neffs.max()),
        "neff_spread": float(neffs.max() - neffs.min()),
        "dataset_id": dataset_hash(dataset),
    }


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _loss(model: SurrogateModel, inputs: torch.Tensor, fields: torch.Tensor, neffs: torch.Tensor) -> torch.Tensor:
    field, neff = model(inputs)
    return F.mse_loss(field, fields) + F.mse_loss(neff, neffs)


def _fit(
    model: SurrogateModel,
    train_set: Tuple[torch.Tensor, ...],
    val_set: Tuple[torch.Tensor, ...],
    epochs: int,
    lr: float,
    threshold: float,
    patience: int,
    start_epoch: int = 0,
) -> List[dict]:
    """Full-batch Adam; the best-validation weights are restored on exit"""
    optimizer = optim.Adam(model.parameters(), lr=lr, betas=(settings.adam_beta1, settings.adam_beta2))
    history: List[dict] = []
    best_val = math.inf
    best_state = copy.deepcopy(model.state_dict())
    initial = None
    stale = 0

    for epoch in range(epochs):
        model.train()
        optimizer.zero_grad()
        loss = _loss(model, *train_set)
        train_mse = float(loss)
        if initial is None:
            initial = max(train_mse, 1e-300)
        if not math.isfinite(train_mse) or train_mse > 1e3 * initial:
            raise TrainingDivergenceError(
                f"training loss {train_mse:.3e} at epoch {start_epoch + epoch} exceeds 1e3 x initial "
                f"{initial:.3e}; reduce the learning rate (currently {lr:g})"
            )
        loss.backward()
        optimizer.step()

        model.eval()
        with torch.no_grad():
            val_mse = float(_loss(model, *val_set))
        history.append({"epoch": start_epoch + epoch, "train_mse": train_mse, "val_mse": val_mse})

        if val_mse < best_val:
            best_val = val_mse
            best_state = copy.deepcopy(model.state_dict())
            stale = 0
        else:
            stale += 1
        if val_mse < threshold:
            logger.info(f"MSE threshold reached at epoch {start_epoch + epoch}: {val_mse:.3e}")
            break
        if stale >= patience:
            logger.info(f"No validation improvement for {patience} epochs, stopping at {start_epoch + epoch}")
            break
        if (epoch + 1) % 100 == 0:
            logger.info(f"Epoch {start_epoch + epoch + 1}: train {train_mse:.3e} val {val_mse:.3e}")

    if history and best_val <= history[-1]["val_mse"]:
        model.load_state_dict(best_state)
    return history


def train(
    model: SurrogateModel,
    dataset: Dataset,
    epochs: int,
    lr: Optional[float] = None,
    seed: int = 0,
    patience: Optional[int] = None,
    threshold: Optional[float] = None,
) -> Tuple[SurrogateModel, List[dict]]:
    """Train in place; a model with no prior epochs takes its normalization from the dataset"""
    if not len(dataset):
        raise DomainError("cannot train on an empty dataset")
    if dataset.n_inputs != model.n_inputs:
        raise ShapeError(f"dataset has {dataset.n_inputs} inputs, model expects {model.n_inputs}")
    lr = settings.training_lr if lr is None else lr
    threshold = settings.mse_threshold if threshold is None else threshold
    patience = settings.training_patience if patience is None else patience
    torch.manual_seed(seed % 2 ** 63)

    train_idx, val_idx = dataset.split()
    train_set = dataset.tensors(train_idx)
    val_set = dataset.tensors(val_idx)
    meta = model.metadata
    if meta.epochs == 0:
        model.set_normalization(*train_set)

    logger.info(f"Training {model.polarization} surrogate on {len(train_idx)} samples "
                f"({len(val_idx)} validation), {epochs} epochs at lr {lr:g}")
    history = _fit(model, train_set, val_set, epochs, lr, threshold, patience, start_epoch=meta.epochs)

    model.metadata = meta.model_copy(update={
        "polarization": dataset.polarization,
        "wavelength_nm": dataset.wavelength_nm,
        "epochs": meta.epochs + len(history),
        "final_mse": min((h["val_mse"] for h in history), default=meta.final_mse),
        "dataset_id": dataset_hash(dataset),
        "seed": seed,
        "domain_nm": list(dataset.domain_nm),
        "grid_spacing_nm": dataset.grid_spacing_nm,
    })
    return model, history


def fine_tune(
    model: SurrogateModel,
    recent_designs: Sequence[Union[DesignVector, EpitaxialStack, TrainingSample]],
    epochs_budget: Optional[int] = None,
    lr: Optional[float] = None,
    smoothing_width_nm: Optional[float] = None,
    dispersion_model: Optional[str] = None,
) -> Tuple[SurrogateModel, List[dict]]:
    """Short retraining on reference solutions of recent designs.

    Returns a new model with the version incremented; a zero budget (or no
    usable design) returns the model unchanged.
    """
    epochs = settings.finetune_epochs if epochs_budget is None else epochs_budget
    lr = settings.training_lr if lr is None else lr
    if epochs <= 0:
        return model, []

    samples = [d for d in recent_designs if isinstance(d, TrainingSample)]
    others = [d for d in recent_designs if not isinstance(d, TrainingSample)]
    samples += audit_samples_from_designs(others, model, smoothing_width_nm, dispersion_model)
    if not samples:
        logger.warning(f"No usable designs for the {model.polarization} fine-tune")
        return model, []

    tuned = copy.deepcopy(model)
    meta = model.metadata
    data = (
        torch.as_tensor(np.stack([s.input for s in samples])),
        torch.as_tensor(np.stack([s.target_field for s in samples])),
        torch.as_tensor(np.array([s.target_neff for s in samples])),
    )
    history = _fit(tuned, data, data, epochs, lr, settings.mse_threshold, patience=epochs, start_epoch=meta.epochs)
    tuned.metadata = meta.model_copy(update={
        "version": meta.version + 1,
        "epochs": meta.epochs + len(history),
        "final_mse": history[-1]["val_mse"] if history else meta.final_mse,
    })
    logger.info(f"Fine-tuned {model.polarization} surrogate to v{tuned.metadata.version} on {len(samples)} "
                f"design(s): MSE {history[0]['train_mse']:.3e} -> {tuned.metadata.final_mse:.3e}")
    return tuned, history


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def _interpolation(coarse_x: np.ndarray, fine_x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    idx = np.clip(np.searchsorted(coarse_x, fine_x) - 1, 0, len(coarse_x) - 2)
    weight = np.clip((fine_x - coarse_x[idx]) / (coarse_x[idx + 1] - coarse_x[idx]), 0.0, 1.0)
    return idx, weight


def predict(model: SurrogateModel, profile: IndexProfile, resample: bool = True) -> Tuple[torch.Tensor, torch.Tensor]:
    """(field on the profile grid with unit power, n_eff), differentiable in profile.n"""
    meta = model.metadata
    if meta.domain_nm:
        lo, hi = profile.domain
        if abs(lo - meta.domain_nm[0]) > 1e-6 or abs(hi - meta.domain_nm[1]) > 1e-6:
            raise ShapeError(
                f"profile domain ({lo:g}, {hi:g}) nm differs from the surrogate's "
                f"({meta.domain_nm[0]:g}, {meta.domain_nm[1]:g}) nm"
            )
    if len(profile) == model.n_inputs:
        coarse = profile
    elif resample:
        coarse = resample_profile(profile, model.n_inputs)
    else:
        raise ShapeError(f"profile has {len(profile)} samples, model expects {model.n_inputs}")

    field, neff = model(coarse.n)
    if coarse is not profile:
        idx, weight = _interpolation(coarse.x, profile.x)
        w = torch.as_tensor(weight)
        lower = torch.as_tensor(idx)
        field = field[lower] * (1.0 - w) + field[lower + 1] * w
    x = torch.as_tensor(profile.x)
    field = field / torch.sqrt(torch.trapezoid(field ** 2, x))
    return field, neff


# ---------------------------------------------------------------------------
# Containers: zip of little-endian float64 .npy arrays plus meta.json
# ---------------------------------------------------------------------------

def _write_container(path: Union[str, Path], arrays: Dict[str, np.ndarray], meta: dict) -> None:
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr(zipfile.ZipInfo("meta.json", date_time=ZIP_EPOCH),
                    json.dumps(meta, indent=2, sort_keys=True) + "\n")
        for name in sorted(arrays):
            buffer = io.BytesIO()
            np.save(buffer, np.ascontiguousarray(arrays[name], dtype="<f8"), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=ZIP_EPOCH), buffer.getvalue())


def _read_container(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], dict]:
    try:
        with np.load(path, allow_pickle=False) as archive:
            meta = json.loads(archive["meta.json"])
            arrays = {name: archive[name] for name in archive.files if name != "meta.json"}
    except (OSError, ValueError, KeyError, zipfile.BadZipFile) as e:
        raise StackFormatError(f"unreadable container: {e}", path=str(path)) from e
    if meta.get("format_version") != FORMAT_VERSION:
        raise StackFormatError(f"unsupported format_version {meta.get('format_version')!r}", path=str(path))
    return arrays, meta


def save_checkpoint(model: SurrogateModel, path: Union[str, Path]) -> None:
    arrays = {name: tensor.detach().numpy() for name, tensor in model.state_dict().items()}
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": "surrogate",
        "polarization": model.polarization,
        "layer_sizes": model.layer_sizes,
        "metadata": model.metadata.model_dump(),
    }
    _write_container(path, arrays, meta)


def load_checkpoint(path: Union[str, Path]) -> SurrogateModel:
    arrays, meta = _read_container(path)
    if meta.get("kind") != "surrogate":
        raise StackFormatError("not a surrogate checkpoint", path=str(path))
    sizes = meta["layer_sizes"]
    model = SurrogateModel(meta["polarization"], sizes[0], sizes[1:-1], SurrogateMetadata(**meta["metadata"]))
    state = {name: torch.from_numpy(np.array(arrays[name], dtype=np.float64)) for name in arrays}
    model.load_state_dict(state)
    if not model.weights_finite():
        raise StackFormatError("checkpoint holds non-finite weights", path=str(path))
    return model


def save_dataset(dataset: Dataset, path: Union[str, Path]) -> None:
    inputs, fields, neffs = dataset.tensors()
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": "dataset",
        "polarization": dataset.polarization,
        "wavelength_nm": dataset.wavelength_nm,
        "domain_nm": list(dataset.domain_nm),
        "grid_spacing_nm": dataset.grid_spacing_nm,
        "seed": dataset.seed,
        "validation_fraction": dataset.validation_fraction,
        "generator": dataset.generator,
    }
    _write_container(path, {"inputs": inputs.numpy(), "fields": fields.numpy(), "neffs": neffs.numpy()}, meta)


def load_dataset(path: Union[str, Path]) -> Dataset:
    arrays, meta = _read_container(path)
    if meta.get("kind") != "dataset":
        raise StackFormatError("not a dataset container", path=str(path))
    samples = [TrainingSample(i, f, n) for i, f, n in zip(arrays["inputs"], arrays["fields"], arrays["neffs"])]
    return Dataset(samples, meta["polarization"], meta["wavelength_nm"], tuple(meta["domain_nm"]),
                   meta["grid_spacing_nm"], meta["seed"], meta["validation_fraction"], meta["generator"])


def dataset_hash(dataset: Dataset) -> str:
    """sha256 over polarization, wavelength, domain and the sample arrays"""
    digest = hashlib.sha256()
    digest.update(f"{dataset.polarization}|{dataset.wavelength_nm!r}|{dataset.domain_nm!r}|"
                  f"{dataset.grid_spacing_nm!r}".encode())
    for sample in dataset.samples:
        digest.update(np.ascontiguousarray(sample.input, dtype="<f8").tobytes())
        digest.update(np.ascontiguousarray(sample.target_field, dtype="<f8").tobytes())
        digest.update(np.float64(sample.target_neff).astype("<f8").tobytes())
    return digest.hexdigest()
