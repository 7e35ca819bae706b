"""
Tests for the mode surrogates: datasets, training, prediction and containers
"""
import filecmp
import json
import os
import sys
import tempfile

import numpy as np
import torch

from nlwg.errors import DomainError, ShapeError, StackFormatError
from nlwg.models import SurrogateMetadata
from nlwg.stack import layered_profile, parse_stack
from nlwg.surrogate import (
    Dataset, TrainingSample, build_model, dataset_hash, dataset_statistics, fine_tune, generate_dataset,
    load_checkpoint, load_dataset, predict, save_checkpoint, save_dataset, train,
)

N_INPUTS = 8
HIDDEN = [16, 16]


def synthetic_dataset(count=20, seed=0):
    rng = np.random.default_rng(seed)
    samples = []
    x = np.linspace(-1.0, 1.0, N_INPUTS)
    for _ in range(count):
        width = rng.uniform(0.3, 0.6)
        inputs = 3.2 + 0.3 * (np.abs(x) < width)
        field = np.exp(-(x / width) ** 2)
        samples.append(TrainingSample(inputs, field, 3.2 + 0.2 * width))
    return Dataset(samples, "TE", 1092.0, (-100.0, 100.0), 1.0, seed=seed)


def expect(exc, fn, *args, **kwargs):
    try:
        fn(*args, **kwargs)
    except exc as e:
        return e
    raise AssertionError(f"expected {exc.__name__}")


def test_split_keeps_a_validation_tail():
    data = synthetic_dataset(20)
    train_idx, val_idx = data.split()
    assert train_idx == list(range(18)) and val_idx == [18, 19]
    single = synthetic_dataset(1)
    assert single.split() == ([0], [0])


def test_model_shape_and_seed():
    a = build_model("TE", N_INPUTS, HIDDEN, seed=3)
    b = build_model("TE", N_INPUTS, HIDDEN, seed=3)
    assert a.layer_sizes == [8, 16, 16, 9]
    inputs = torch.full((2, N_INPUTS), 3.3, dtype=torch.float64)
    assert torch.equal(a(inputs)[0], b(inputs)[0])
    field, neff = a(inputs)
    assert field.shape == (2, N_INPUTS) and neff.shape == (2,)


def test_training_lowers_loss():
    data = synthetic_dataset()
    model = build_model("TE", N_INPUTS, HIDDEN, seed=1)
    model, history = train(model, data, epochs=200, lr=1e-2, seed=1, patience=200, threshold=0.0)
    assert history[0]["epoch"] == 0
    assert history[-1]["train_mse"] < 0.2 * history[0]["train_mse"]
    meta = model.metadata
    assert meta.epochs == len(history)
    assert meta.final_mse == min(h["val_mse"] for h in history)
    assert meta.dataset_id == dataset_hash(data)


def test_resumed_training_continues_epoch_count():
    data = synthetic_dataset()
    model, first = train(build_model("TE", N_INPUTS, HIDDEN), data, epochs=5, lr=1e-3, threshold=0.0)
    model, second = train(model, data, epochs=5, lr=1e-3, threshold=0.0)
    assert second[0]["epoch"] == 5
    assert model.metadata.epochs == 10


def test_train_rejects_bad_inputs():
    expect(ShapeError, train, build_model("TE", 4, HIDDEN), synthetic_dataset(), 1)
    empty = Dataset([], "TE", 1092.0, (-1.0, 1.0), 1.0)
    expect(DomainError, train, build_model("TE", N_INPUTS, HIDDEN), empty, 1)
    expect(DomainError, Dataset, [], "TE", 1092.0, (-1.0, 1.0), 1.0, validation_fraction=0.9)


def test_fine_tune_bumps_version():
    data = synthetic_dataset()
    model, _ = train(build_model("TE", N_INPUTS, HIDDEN), data, epochs=20, lr=1e-3, threshold=0.0)
    tuned, history = fine_tune(model, data.samples[:3], epochs_budget=10)
    assert tuned.metadata.version == model.metadata.version + 1
    assert len(history) > 0 and tuned is not model
    same, none = fine_tune(model, data.samples[:3], epochs_budget=0)
    assert same is model and none == []


def test_predict_is_normalized_and_differentiable():
    model = build_model("TE", N_INPUTS, HIDDEN, metadata=SurrogateMetadata(polarization="TE", wavelength_nm=1092.0))
    profile = layered_profile([200.0], [3.2, 3.5, 1.0], 1092.0, grid_spacing_nm=2.0, padding_nm=(100.0, 100.0))
    n = profile.n.clone().requires_grad_(True)
    profile.n = n
    field, neff = predict(model, profile)
    assert field.shape == (len(profile),)
    power = torch.trapezoid(field ** 2, torch.as_tensor(profile.x))
    assert abs(float(power) - 1.0) < 1e-9
    neff.backward()
    assert torch.all(torch.isfinite(n.grad))


def test_predict_rejects_foreign_domain():
    meta = SurrogateMetadata(polarization="TE", wavelength_nm=1092.0, domain_nm=[-500.0, 500.0])
    model = build_model("TE", N_INPUTS, HIDDEN, metadata=meta)
    profile = layered_profile([200.0], [3.2, 3.5, 1.0], 1092.0, padding_nm=(100.0, 100.0))
    expect(ShapeError, predict, model, profile)


def test_checkpoint_round_trip_is_exact():
    model, _ = train(build_model("TE", N_INPUTS, HIDDEN), synthetic_dataset(), epochs=3, threshold=0.0)
    with tempfile.TemporaryDirectory() as tmp:
        first, second = os.path.join(tmp, "a.npz"), os.path.join(tmp, "b.npz")
        save_checkpoint(model, first)
        save_checkpoint(model, second)
        assert filecmp.cmp(first, second, shallow=False)
        loaded = load_checkpoint(first)
    inputs = torch.full((1, N_INPUTS), 3.3, dtype=torch.float64)
    assert torch.equal(loaded(inputs)[0], model(inputs)[0])
    assert loaded.metadata == model.metadata
    assert loaded.polarization == "TE"


def test_unreadable_container():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "junk.npz")
        with open(path, "w") as f:
            f.write("not a zip")
        expect(StackFormatError, load_checkpoint, path)
        data_path = os.path.join(tmp, "data.npz")
        save_dataset(synthetic_dataset(), data_path)
        expect(StackFormatError, load_checkpoint, data_path)


def test_dataset_round_trip_keeps_hash():
    data = synthetic_dataset()
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "dataset.npz")
        save_dataset(data, path)
        loaded = load_dataset(path)
    assert dataset_hash(loaded) == dataset_hash(data)
    assert loaded.domain_nm == (-100.0, 100.0)
    stats = dataset_statistics(loaded)
    assert stats["n"] == 20 and stats["neff_min"] <= stats["neff_mean"] <= stats["neff_max"]


def slab_sampler(rng):
    core = float(rng.uniform(150.0, 200.0))
    return parse_stack(json.dumps({
        "design_wavelengths_nm": {"pump": 640.651022, "te": 1092.0, "tm": 1550.0},
        "groups": [
            {"role": "substrate", "repeat": 1, "sublayers": [{"thickness_nm": None, "al_fraction": 0.0}]},
            {"role": "bragg_bottom", "repeat": 1, "sublayers": [{"thickness_nm": 400.0, "al_fraction": 0.8}]},
            {"role": "core", "repeat": 1, "sublayers": [{"thickness_nm": core, "al_fraction": 0.55}]},
            {"role": "bragg_top", "repeat": 1, "sublayers": [{"thickness_nm": 300.0, "al_fraction": 0.8}]},
            {"role": "air", "repeat": 1, "sublayers": []},
        ],
    }))


def test_generated_dataset_independent_of_workers():
    kwargs = dict(n=2, sampler=slab_sampler, wavelength_nm=1092.0, polarization="TE", seed=7,
                  domain_nm=(-1000.0, 1600.0), grid_spacing_nm=2.0, n_inputs=32)
    one = generate_dataset(max_workers=1, **kwargs)
    many = generate_dataset(max_workers=3, **kwargs)
    assert len(one) == 2
    assert dataset_hash(one) == dataset_hash(many)
    for sample in one.samples:
        assert 3.0 < sample.target_neff < 3.4
        assert sample.input.shape == (32,)


def test_generate_dataset_needs_samples():
    expect(DomainError, generate_dataset, 0, slab_sampler, 1092.0, "TE", 0, (-1000.0, 1600.0))


if __name__ == "__main__":
    print("=" * 60)
    print("Surrogates")
    print("=" * 60)
    failed = 0
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            try:
                fn()
                print(f"✓ {name}")
            except Exception as e:
                failed += 1
                print(f"❌ {name}: {e!r}")
    sys.exit(1 if failed else 0)
