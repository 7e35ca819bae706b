"""
Tests for the reference guided-mode solver
"""
import math
import os
import sys
import tempfile
from unittest import SkipTest

import numpy as np
from scipy.integrate import trapezoid

from nlwg.config import settings
from nlwg.errors import DomainError
from nlwg.modes import (
    birefringence, confinement_fraction, fundamental_mode, reconstruct_tm_efield, slab_te_neff,
    solve_modes, write_mode_csv,
)
from nlwg.stack import build_index_profile, layered_profile, published_stack

N_CORE, N_CLAD = 3.5, 3.2


def slab(thickness_nm=400.0, wavelength_nm=1550.0):
    return layered_profile([thickness_nm], [N_CLAD, N_CORE, N_CLAD], wavelength_nm, padding_nm=(2000.0, 2000.0))


def require_slow():
    if not settings.run_slow_tests:
        raise SkipTest("set NLWG_RUN_SLOW_TESTS=true")


def test_slab_matches_analytic_te():
    mode = fundamental_mode(slab(), "TE")
    expected = slab_te_neff(N_CORE, N_CLAD, 400.0, 1550.0)
    assert abs(mode.n_eff - expected) < 1e-6, (mode.n_eff, expected)


def test_higher_order_slab_modes():
    modes = solve_modes(slab(2000.0), "TE")
    v = math.pi / 1550.0 * 2000.0 * math.sqrt(N_CORE ** 2 - N_CLAD ** 2)
    assert len(modes) == int(2.0 * v / math.pi) + 1
    assert abs(modes[1].n_eff - slab_te_neff(N_CORE, N_CLAD, 2000.0, 1550.0, order=1)) < 1e-6
    assert all(a.n_eff > b.n_eff for a, b in zip(modes, modes[1:]))


def test_distinct_te_modes_are_orthogonal():
    modes = solve_modes(slab(2000.0), "TE", max_modes=3)
    assert len(modes) == 3
    for i in range(3):
        for j in range(i + 1, 3):
            overlap = trapezoid(modes[i].field * modes[j].field, modes[i].x)
            assert abs(overlap) < 1e-6, (i, j, overlap)


def test_tm_below_te():
    p = slab()
    n_te, n_tm = birefringence(p, p)
    assert N_CLAD < n_tm < n_te < N_CORE


def test_field_normalized_and_positive():
    mode = fundamental_mode(slab(), "TE")
    assert abs(trapezoid(mode.field ** 2, mode.x) - 1.0) < 1e-9
    assert mode.field[int(np.argmax(np.abs(mode.field)))] > 0


def test_fundamental_has_no_node():
    mode = fundamental_mode(slab(), "TE")
    significant = mode.field[np.abs(mode.field) > 1e-3 * np.abs(mode.field).max()]
    assert np.all(significant > 0)


def test_confinement_in_core():
    mode = fundamental_mode(slab(), "TE")
    inside = confinement_fraction(mode, (0.0, 400.0))
    assert 0.5 < inside < 1.0
    assert abs(confinement_fraction(mode, (-2000.0, 2400.0)) - 1.0) < 1e-6


def test_uniform_profile_guides_nothing():
    p = layered_profile([400.0], [3.2, 3.2, 3.2], 1550.0)
    assert solve_modes(p, "TE") == []
    assert fundamental_mode(p, "TM") is None


def test_tm_efield_jumps_at_interface():
    p = slab()
    mode = fundamental_mode(p, "TM")
    e = reconstruct_tm_efield(mode, p)
    i = int(np.searchsorted(p.x, 0.0))
    ratio = e[i - 1] / e[i]
    assert abs(ratio - (N_CORE / N_CLAD) ** 2) < 0.01, ratio


def test_efield_needs_tm():
    p = slab()
    try:
        reconstruct_tm_efield(fundamental_mode(p, "TE"), p)
    except DomainError:
        pass
    else:
        raise AssertionError("expected DomainError")


def test_unknown_polarization():
    try:
        solve_modes(slab(), "TX")
    except DomainError:
        pass
    else:
        raise AssertionError("expected DomainError")


def test_mode_csv_header():
    mode = fundamental_mode(slab(), "TE")
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "mode.csv")
        write_mode_csv(mode, path)
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
    assert lines[0] == "# wavelength_nm=1550"
    assert lines[1] == "# polarization=TE"
    assert lines[3] == "x_nm,field"
    assert len(lines) == 4 + len(mode.x)


def test_published_guides_both_polarizations():
    require_slow()
    stack = published_stack()
    te = build_index_profile(stack, 1092.0, isolate_substrate=True)
    tm = build_index_profile(stack, 1550.0, isolate_substrate=True)
    n_te, n_tm = birefringence(te, tm)
    assert 3.0 < n_te < 3.4 and 2.9 < n_tm < 3.3, (n_te, n_tm)
    mode = fundamental_mode(te, "TE")
    assert confinement_fraction(mode, te.core_span_nm) > 0.3


if __name__ == "__main__":
    print("=" * 60)
    print("Mode solver")
    print("=" * 60)
    failed = 0
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            try:
                fn()
                print(f"✓ {name}")
            except SkipTest as e:
                print(f"⏭ {name}: skipped ({e})")
            except Exception as e:
                failed += 1
                print(f"❌ {name}: {e!r}")
    sys.exit(1 if failed else 0)
