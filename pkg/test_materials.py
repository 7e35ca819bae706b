"""
Tests for the AlGaAs optical constants
"""
import sys

import numpy as np
import torch

from nlwg.errors import DispersionRangeError, DomainError
from nlwg.materials import bandgap_energy, chi2_profile, is_transparent, refractive_index
from nlwg.models import Chi2Model


def test_gaas_index_at_1550():
    n = refractive_index(0.0, 1550.0, "gehrsitz")
    assert abs(n - 3.37) < 0.03, n


def test_index_decreases_with_aluminum():
    assert refractive_index(0.9, 640.0) < refractive_index(0.5, 640.0)
    xs = np.linspace(0.0, 1.0, 11)
    n = refractive_index(xs, 1550.0)
    assert np.all(np.diff(n) < 0.0), n


def test_normal_dispersion():
    assert refractive_index(0.5, 1092.0) > refractive_index(0.5, 1550.0)


def test_both_models_finite_over_window():
    for model in ("gehrsitz", "afromowitz"):
        x, lam = np.meshgrid(np.linspace(0.0, 1.0, 11), np.linspace(500.0, 2000.0, 16))
        n = refractive_index(x, lam, model)
        assert np.all(np.isfinite(n)) and np.all(n > 1.0), model


def test_models_agree_roughly():
    for x in (0.5, 0.7, 0.9):
        a = refractive_index(x, 1550.0, "gehrsitz")
        b = refractive_index(x, 1550.0, "afromowitz")
        assert abs(a - b) < 0.15, (x, a, b)


def test_out_of_window_raises():
    try:
        refractive_index(0.5, 400.0)
    except DispersionRangeError as e:
        assert "500" in str(e) and "2000" in str(e)
    else:
        raise AssertionError("expected DispersionRangeError")


def test_composition_out_of_range_raises():
    try:
        refractive_index(1.2, 1550.0)
    except DomainError:
        pass
    else:
        raise AssertionError("expected DomainError")


def test_index_continuous_in_composition():
    for x in (0.1, 0.5, 0.8):
        assert abs(refractive_index(x + 1e-6, 1092.0) - refractive_index(x, 1092.0)) < 1e-4


def test_tensor_inputs_stay_differentiable():
    x = torch.tensor([0.5, 0.7], dtype=torch.float64, requires_grad=True)
    lam = torch.tensor(1092.0, dtype=torch.float64, requires_grad=True)
    n = refractive_index(x, lam)
    assert isinstance(n, torch.Tensor)
    n.sum().backward()
    assert torch.all(x.grad < 0.0)
    assert lam.grad < 0.0


def test_transparency_examples():
    assert is_transparent(0.5, 640.0)
    assert not is_transparent(0.2, 640.0)
    assert is_transparent(0.5, 1550.0)


def test_transparency_monotone_in_composition():
    mask = is_transparent(np.linspace(0.0, 1.0, 101), 640.0)
    first = int(np.argmax(mask))
    assert mask[first:].all()


def test_absorption_edge_is_minimum_gap():
    gaps = bandgap_energy(0.5)
    assert gaps["edge"] == min(gaps["gamma"], gaps["x"], gaps["l"])
    assert abs(bandgap_energy(0.0)["gamma"] - 1.424) < 1e-12


def test_chi2_profile_endpoints_and_midpoint():
    model = Chi2Model(d14_gaas=119.0, d14_alas=32.0)
    assert np.allclose(chi2_profile(np.zeros(5), model), 119.0)
    assert np.allclose(chi2_profile(np.ones(5), model), 32.0)
    assert np.allclose(chi2_profile(np.full(5, 0.5), model), 75.5)


def test_chi2_profile_is_affine():
    model = Chi2Model()
    x1, x2, a = 0.2, 0.9, 0.3
    mixed = chi2_profile(np.array([a * x1 + (1 - a) * x2]), model)[0]
    expected = a * chi2_profile(np.array([x1]), model)[0] + (1 - a) * chi2_profile(np.array([x2]), model)[0]
    assert abs(mixed - expected) < 1e-12


if __name__ == "__main__":
    print("=" * 60)
    print("Materials")
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
