"""
Tests for the command-line surface: config resolution and exit codes
"""
import json
import os
import sys
import tempfile
from unittest import SkipTest

os.environ.setdefault("NLWG_DATABASE_URL", f"sqlite:///{tempfile.gettempdir()}/nlwg_test_runs.db")

from nlwg.cli import EXIT_MODULE_ERROR, EXIT_OK, EXIT_USAGE, build_parser, main, resolve_config
from nlwg.config import settings
from nlwg.database import Run, get_db


def require_slow():
    if not settings.run_slow_tests:
        raise SkipTest("set NLWG_RUN_SLOW_TESTS=true")


def test_help_and_version_exit_cleanly():
    assert main(["--version"]) == EXIT_OK
    assert main(["dataset", "--help"]) == EXIT_OK


def test_bad_flags_are_usage_errors():
    assert main([]) == EXIT_USAGE
    assert main(["dataset", "--no-such-flag"]) == EXIT_USAGE
    assert main(["dataset", "--polarization", "TX"]) == EXIT_USAGE


def test_invalid_values_are_usage_errors():
    with tempfile.TemporaryDirectory() as tmp:
        assert main(["dataset", "--n", "0", "--out", tmp]) == EXIT_USAGE
        assert not os.path.exists(os.path.join(tmp, "run_config.json"))


def test_unknown_config_key_rejected():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "run.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"n": 3, "learning_rate": 0.1}, f)
        assert main(["dataset", "--config", path, "--out", tmp]) == EXIT_USAGE


def test_flags_override_config_file():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "run.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"n": 3, "seed": 11, "polarization": "TM"}, f)
        args = build_parser().parse_args(["dataset", "--config", path, "--seed", "5"])
        config = resolve_config(args)
    assert config.seed == 5 and config.n == 3 and config.polarization == "TM"
    assert config.grid_spacing_nm == settings.grid_spacing_nm


def test_module_error_exit_code_and_meta():
    with tempfile.TemporaryDirectory() as tmp:
        junk = os.path.join(tmp, "junk.npz")
        with open(junk, "w") as f:
            f.write("not a zip")
        out = os.path.join(tmp, "train")
        assert main(["train", "--dataset", junk, "--out", out]) == EXIT_MODULE_ERROR
        with open(os.path.join(out, "run_meta.json"), encoding="utf-8") as f:
            meta = json.load(f)
        with open(os.path.join(out, "run_config.json"), encoding="utf-8") as f:
            resolved = json.load(f)
    assert meta["status"] == "error" and "unreadable container" in meta["message"]
    assert resolved["dataset"] == junk and "started_at" not in resolved
    db = next(get_db())
    try:
        run = db.query(Run).filter(Run.id == meta["run_id"]).one()
        assert run.command == "train" and run.status == "error" and run.finished_at is not None
    finally:
        db.close()


def test_missing_stack_file_is_module_error():
    with tempfile.TemporaryDirectory() as tmp:
        code = main(["dataset", "--n", "1", "--stack", os.path.join(tmp, "missing.json"), "--out", tmp])
    assert code == EXIT_MODULE_ERROR


def test_analyze_published_structure():
    require_slow()
    with tempfile.TemporaryDirectory() as tmp:
        assert main(["analyze", "--out", tmp]) == EXIT_OK
        for name in ("tuning_curves.csv", "jsi.csv", "rate_ledger.txt", "run_config.json", "run_meta.json"):
            assert os.path.exists(os.path.join(tmp, name)), name


if __name__ == "__main__":
    print("=" * 60)
    print("Command line")
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
