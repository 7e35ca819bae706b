"""
Tests for the pump transfer-matrix solver
"""
import json
import math
import os
import sys
import tempfile

import torch

from nlwg.errors import DomainError, TransparencyError
from nlwg.pump import cavity_resonance_scan, core_energy, pump_field, write_pump_csv, write_scan_csv
from nlwg.stack import build_index_profile, layered_profile, parse_stack, serialize_stack, published_stack


def bragg_mirror(pairs=10, wavelength_nm=1000.0):
    thicknesses, indices = [], [1.5]
    for _ in range(pairs):
        thicknesses += [wavelength_nm / 12.0, wavelength_nm / 6.0]
        indices += [3.0, 1.5]
    return layered_profile(thicknesses, indices + [1.0], wavelength_nm, padding_nm=(500.0, 500.0))


def test_matched_medium_has_no_reflection():
    p = layered_profile([], [1.0, 1.0], 1000.0)
    field = pump_field(p, 35.0)
    assert float(field.reflectance) < 1e-20
    assert abs(float(field.transmittance) - 1.0) < 1e-12
    assert torch.allclose(field.phi_plus.abs(), torch.ones(len(p), dtype=torch.float64))


def test_fresnel_single_interface():
    p = layered_profile([], [2.0, 2.0], 1000.0)
    for theta in (0.0, 40.0):
        field = pump_field(p, theta)
        c = math.cos(math.radians(theta))
        root = math.sqrt(4.0 - math.sin(math.radians(theta)) ** 2)
        expected = ((c - root) / (c + root)) ** 2
        assert abs(float(field.reflectance) - expected) < 1e-12, (theta, float(field.reflectance), expected)


def test_energy_conservation():
    p = layered_profile([300.0, 120.0], [3.2, 3.5, 3.0, 1.0], 700.0)
    for theta in (0.0, 20.0, 60.0):
        field = pump_field(p, theta)
        assert abs(float(field.reflectance + field.transmittance) - 1.0) < 1e-10


def test_reflectance_independent_of_side():
    thicknesses = [300.0, 120.0, 210.0]
    indices = [3.2, 3.5, 3.0]
    forward = layered_profile(thicknesses, [1.0] + indices + [1.0], 700.0)
    backward = layered_profile(thicknesses[::-1], [1.0] + indices[::-1] + [1.0], 700.0)
    for theta in (0.0, 30.0):
        r_forward = float(pump_field(forward, theta).reflectance)
        r_backward = float(pump_field(backward, theta).reflectance)
        assert abs(r_forward - r_backward) < 1e-8, (theta, r_forward, r_backward)


def test_bragg_mirror_reflects():
    field = pump_field(bragg_mirror(), 0.0)
    assert float(field.reflectance) > 0.9


def test_thick_stack_stays_finite():
    field = pump_field(bragg_mirror(pairs=60), 0.0)
    assert torch.all(torch.isfinite(field.total.abs()))
    assert abs(float(field.reflectance + field.transmittance) - 1.0) < 1e-8


def test_gradients_reach_angle_and_index():
    base = layered_profile([300.0], [3.2, 3.5, 1.0], 700.0)
    n = base.n.clone().requires_grad_(True)
    base.n = n
    theta = torch.tensor(30.0, dtype=torch.float64, requires_grad=True)
    energy = core_energy(pump_field(base, theta), base)
    energy.backward()
    assert torch.isfinite(theta.grad) and float(theta.grad) != 0.0
    assert torch.all(torch.isfinite(n.grad)) and torch.any(n.grad != 0.0)


def test_invalid_inputs():
    p = layered_profile([], [2.0, 2.0], 1000.0)
    for kwargs in ({"theta_deg": 90.0}, {"theta_deg": -1.0}, {"theta_deg": 10.0, "polarization": "p"}):
        try:
            pump_field(p, **kwargs)
        except DomainError:
            continue
        raise AssertionError(f"expected DomainError for {kwargs}")


def test_absorbing_layer_rejected():
    doc = json.loads(serialize_stack(published_stack()))
    doc["groups"][3]["sublayers"][0]["al_fraction"] = 0.1
    stack = parse_stack(json.dumps(doc), check_transparency=False)
    profile = build_index_profile(stack, stack.wavelengths.pump)
    try:
        pump_field(profile, 30.0, check_transparency=True)
    except TransparencyError as e:
        assert "(core)" in str(e)
    else:
        raise AssertionError("expected TransparencyError")


def test_resonance_scan_and_csv():
    p = layered_profile([300.0], [3.2, 3.5, 1.0], 700.0)
    scan = cavity_resonance_scan(p, 20.0, (690.0, 710.0), 5)
    assert [round(w, 6) for w, _ in scan] == [690.0, 695.0, 700.0, 705.0, 710.0]
    assert all(e > 0.0 for _, e in scan)
    with tempfile.TemporaryDirectory() as tmp:
        write_scan_csv(scan, os.path.join(tmp, "scan.csv"))
        write_pump_csv(pump_field(p, 20.0), os.path.join(tmp, "pump.csv"))
        with open(os.path.join(tmp, "pump.csv"), encoding="utf-8") as f:
            lines = f.read().splitlines()
        assert lines[4] == "x_nm,re_phi_plus,im_phi_plus,re_phi_minus,im_phi_minus"
        assert len(lines) == 5 + len(p)


if __name__ == "__main__":
    print("=" * 60)
    print("Pump transfer matrix")
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
