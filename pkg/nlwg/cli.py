"""
Command-line entry point

    python -m nlwg.cli dataset  --polarization TE --n 500 --seed 1 --out runs/dataset_te
    python -m nlwg.cli train    --dataset runs/dataset_te/dataset.npz --out runs/train_te
    python -m nlwg.cli finetune --checkpoint runs/train_te/surrogate.npz --designs best_stack.json
    python -m nlwg.cli optimize --te-checkpoint ... --tm-checkpoint ... --out runs/optimize
    python -m nlwg.cli analyze  --stack runs/optimize/best_stack.json --out runs/analyze

Run parameters resolve as settings defaults <- JSON config file (--config)
<- flags, and the resolved configuration is written to run_config.json in
the output directory. Timestamps go to run_meta.json only. Exit status is
0 on success, 1 when a module reports an error and 2 for usage or
configuration errors.
"""
import argparse
import csv
import json
import sys
from datetime import datetime
from pathlib import Path
from typing import Callable, Dict, List, Optional, Type

import torch
from pydantic import ValidationError

from nlwg import __version__
from nlwg.analysis import (
    NeffDispersion, branch_splitting, count_lobes, filter_jsa, filter_window, ion_photon_state, jsa, marginal,
    published_rate_ledger, phase_matched_angles, polarization_state, rate_budget, tuning_curves, write_jsi_csv,
    write_ledger, write_marginal_csv, write_tuning_csv,
)
from nlwg.config import settings
from nlwg.database import (
    SessionLocal, finish_run, init_db, record_surrogate_version, record_trajectory_point, start_run,
)
from nlwg.design import (
    DesignProblem, efficiency_ratio, optimize, reference_fom, sample_initial_stack, design_domain,
    write_trajectory_csv,
)
from nlwg.errors import NlwgError, ShapeError
from nlwg.models import (
    AnalyzeConfig, DatasetConfig, FinetuneConfig, OptimizeConfig, RunConfig, SurrogateMetadata, TrainConfig,
)
from nlwg.modes import reconstruct_tm_efield
from nlwg.plots import plot_jsi, plot_marginal, plot_profiles, plot_trajectory, plot_tuning_curves
from nlwg.stack import EpitaxialStack, read_stack, published_stack, write_stack
from nlwg.surrogate import (
    build_model, dataset_statistics, fine_tune, generate_dataset, load_checkpoint, load_dataset,
    save_checkpoint, save_dataset, train,
)
import logging

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_MODULE_ERROR = 1
EXIT_USAGE = 2


def _write_json(data: dict, path: Path) -> None:
    path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


def _template(config: RunConfig) -> EpitaxialStack:
    return read_stack(config.stack) if config.stack else published_stack()


def write_loss_csv(history: List[dict], path: Path, previous: Optional[Path] = None) -> None:
    """Loss history; rows of an earlier run are carried over when resuming"""
    rows = []
    if previous is not None and previous.exists():
        with open(previous, newline="", encoding="utf-8") as f:
            rows = [[r["epoch"], r["train_mse"], r["val_mse"]] for r in csv.DictReader(f)]
    rows += [[h["epoch"], f"{h['train_mse']:.17g}", f"{h['val_mse']:.17g}"] for h in history]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["epoch", "train_mse", "val_mse"])
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_dataset(config: DatasetConfig, out: Path, db, run) -> dict:
    template = _template(config)
    ws = template.wavelengths
    wavelength = config.wavelength_nm or (ws.te if config.polarization == "TE" else ws.tm)
    domain = design_domain(template, grid_spacing_nm=config.grid_spacing_nm, n_inputs=config.surrogate_grid)

    def sampler(rng):
        return sample_initial_stack(rng, template=template, dispersion_model=config.dispersion_model)

    dataset = generate_dataset(
        config.n, sampler, wavelength, config.polarization, config.seed, domain,
        grid_spacing_nm=config.grid_spacing_nm, smoothing_width_nm=config.smoothing_width_nm,
        n_inputs=config.surrogate_grid, dispersion_model=config.dispersion_model,
    )
    save_dataset(dataset, out / "dataset.npz")
    stats = dataset_statistics(dataset)
    _write_json(stats, out / "dataset_stats.json")
    logger.info(f"Dataset {stats['dataset_id'][:12]}: {stats['n']} samples, "
                f"n_eff {stats['neff_min']:.5f}-{stats['neff_max']:.5f}")
    return stats


def cmd_train(config: TrainConfig, out: Path, db, run) -> dict:
    dataset = load_dataset(config.dataset)
    previous = None
    if config.resume:
        model = load_checkpoint(config.resume)
        if model.polarization != dataset.polarization:
            raise ShapeError(f"checkpoint is {model.polarization}, dataset is {dataset.polarization}")
        previous = Path(config.resume).with_name("loss.csv")
        logger.info(f"Resuming {model.polarization} surrogate at epoch {model.metadata.epochs}")
    else:
        metadata = SurrogateMetadata(polarization=dataset.polarization, wavelength_nm=dataset.wavelength_nm,
                                     seed=config.seed)
        model = build_model(dataset.polarization, dataset.n_inputs, config.hidden, config.seed, metadata)

    model, history = train(model, dataset, config.epochs, config.lr, config.seed)
    checkpoint = out / "surrogate.npz"
    save_checkpoint(model, checkpoint)
    write_loss_csv(history, out / "loss.csv", previous)
    record_surrogate_version(db, run.id, model.metadata, str(checkpoint))
    return model.metadata.model_dump()


def cmd_finetune(config: FinetuneConfig, out: Path, db, run) -> dict:
    model = load_checkpoint(config.checkpoint)
    designs = [read_stack(path) for path in config.designs]
    tuned, history = fine_tune(model, designs, config.epochs, config.lr, config.smoothing_width_nm,
                               config.dispersion_model)
    checkpoint = out / "surrogate.npz"
    save_checkpoint(tuned, checkpoint)
    write_loss_csv(history, out / "loss.csv")
    record_surrogate_version(db, run.id, tuned.metadata, str(checkpoint))
    return tuned.metadata.model_dump()


def _check_pair(te, tm) -> None:
    if te.polarization != "TE" or tm.polarization != "TM":
        raise ShapeError(f"expected a TE and a TM surrogate, got {te.polarization} and {tm.polarization}")
    if te.metadata.domain_nm != tm.metadata.domain_nm:
        raise ShapeError(f"surrogates trained on different domains: {te.metadata.domain_nm} vs {tm.metadata.domain_nm}")


def cmd_optimize(config: OptimizeConfig, out: Path, db, run) -> dict:
    te_model = load_checkpoint(config.te_checkpoint)
    tm_model = load_checkpoint(config.tm_checkpoint)
    _check_pair(te_model, tm_model)
    template = _template(config)
    if config.initial:
        initial = read_stack(config.initial)
    else:
        initial = sample_initial_stack(config.seed, template=template, dispersion_model=config.dispersion_model)
    write_stack(initial, out / "initial_stack.json")

    problem = DesignProblem(te_model, tm_model, initial.wavelengths, grid_spacing_nm=config.grid_spacing_nm,
                            smoothing_width_nm=config.smoothing_width_nm, chi2_model=config.chi2_model(),
                            dispersion_model=config.dispersion_model)
    result = optimize(initial, problem, config.max_iters, config.audit_every, config.lr, config.beta1,
                      config.beta2, config.finetune, config.seed,
                      record=lambda point: record_trajectory_point(db, run.id, point))

    write_trajectory_csv(result.trajectory, out / "trajectory.csv")
    plot_trajectory(result.trajectory, out / "fom.svg")
    for model, name in ((result.te_model, "te"), (result.tm_model, "tm")):
        if model.metadata.version > 0:
            path = out / f"{name}_surrogate.npz"
            save_checkpoint(model, path)
            record_surrogate_version(db, run.id, model.metadata, str(path))

    summary = {
        "stop_reason": result.stop_reason,
        "iterations": len(result.trajectory),
        "initial_fom_reference_pmV": result.initial_fom_reference,
        "best_fom_reference_pmV": result.best_fom_reference,
        "improvement": result.improvement,
        "efficiency_ratio": (efficiency_ratio(result.best_fom_reference, result.initial_fom_reference)
                             if result.improvement else None),
    }
    best = result.best_stack
    if best is not None:
        write_stack(best, out / "best_stack.json")
        ws = problem.wavelengths
        start = problem.profile(initial, ws.pump, guided=False)
        plot_profiles(start.x, {
            "initial": start.values(),
            "best": problem.profile(best, ws.pump, guided=False).values(),
        }, out / "profiles.svg")
        ref = reference_fom(best, problem)
        plot_profiles(ref.te_profile.x, {
            "TE E": ref.te_mode.field,
            "TM E": reconstruct_tm_efield(ref.tm_mode, ref.tm_profile, normalize=True),
        }, out / "fields.svg", ylabel="normalized field")
        summary["best_theta_deg"] = float(ref.fom.theta_deg)
    _write_json(summary, out / "summary.json")
    return summary


def cmd_analyze(config: AnalyzeConfig, out: Path, db, run) -> dict:
    stack = _template(config)
    ws = stack.wavelengths
    dispersion = NeffDispersion.from_stack(stack, config.table_halfspan_nm, grid_spacing_nm=config.grid_spacing_nm,
                                           smoothing_width_nm=config.smoothing_width_nm,
                                           model=config.dispersion_model)
    angles = phase_matched_angles(dispersion)
    logger.info(f"Phase matching at ({ws.te:g}, {ws.tm:g}) nm: HV {angles['HV']:.4f} deg, "
                f"VH {angles['VH']:.4f} deg (splitting {angles['splitting_deg']:.4f} deg)")

    hv, vh = tuning_curves(dispersion, (config.theta_min_deg, config.theta_max_deg), config.theta_points)
    write_tuning_csv([hv, vh], out / "tuning_curves.csv")
    plot_tuning_curves(hv, vh, out / "tuning_curves.svg", target_nm=ws.te)

    pump_angles = config.pump_angles_deg or [angles["HV"], angles["VH"]]
    amplitude = jsa(dispersion, pump_angles, config.pump_fwhm_ghz, config.length_mm, config.jsa_points,
                    config.jsa_span_thz)
    write_jsi_csv(amplitude, out / "jsi.csv")
    plot_jsi(amplitude, out / "jsi.svg", title="joint spectral intensity")

    filtered = filter_jsa(amplitude, filter_window(ws.te, config.filter_halfwidth_nm),
                          filter_window(ws.tm, config.filter_halfwidth_nm))
    write_jsi_csv(filtered, out / "jsi_filtered.csv")
    plot_jsi(filtered, out / "jsi_filtered.svg", title="filtered")

    spectra = {axis: marginal(filtered, axis) for axis in ("signal", "idler")}
    for axis, spectrum in spectra.items():
        write_marginal_csv(spectrum, out / f"marginal_{axis}.csv")
    plot_marginal(spectra["signal"], out / "marginal_signal.svg", target_nm=ws.te)

    state = polarization_state(filtered)
    ion = ion_photon_state()
    budget = rate_budget(published_rate_ledger(wavelengths=ws))
    write_ledger(budget, out / "rate_ledger.txt")

    report = {
        "theta_hv_deg": angles["HV"],
        "theta_vh_deg": angles["VH"],
        "splitting_deg": angles["splitting_deg"],
        "pump_angles_deg": list(pump_angles),
        "tuning_gaps": {"HV": hv.gaps, "VH": vh.gaps},
        "branch_splitting_rad_s": [[theta, d] for theta, d in branch_splitting(hv, vh)],
        "lobes_unfiltered": count_lobes(amplitude),
        "lobes_filtered": count_lobes(filtered),
        "heralding_kept_fraction": filtered.kept_fraction,
        "signal_peak_nm": spectra["signal"].peak_wavelength_nm,
        "idler_peak_nm": spectra["idler"].peak_wavelength_nm,
        "c_hv": abs(state.c_hv),
        "c_vh": abs(state.c_vh),
        "overlap_abs": abs(state.overlap),
        "purity": state.purity,
        "concurrence": state.concurrence,
        "ion_photon_concurrence": ion.concurrence,
        "rate_hz": budget.rate_hz,
        "rate_per_minute": budget.events_per_minute,
        "rate_caveat": budget.ledger.caveat,
    }
    _write_json(report, out / "state_report.json")
    logger.info(f"Concurrence {state.concurrence:.6f} after filtering (kept {filtered.kept_fraction:.3f}), "
                f"{report['lobes_unfiltered']} lobe(s) before, {report['lobes_filtered']} after")
    return report


COMMANDS: Dict[str, Callable] = {
    "dataset": cmd_dataset,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "optimize": cmd_optimize,
    "analyze": cmd_analyze,
}

CONFIGS: Dict[str, Type[RunConfig]] = {
    "dataset": DatasetConfig,
    "train": TrainConfig,
    "finetune": FinetuneConfig,
    "optimize": OptimizeConfig,
    "analyze": AnalyzeConfig,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlwg", description="Inverse design of counterpropagating SPDC waveguides")
    parser.add_argument("--version", action="version", version=f"nlwg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--stack", help="stack file (the packaged published structure when omitted)")
        p.add_argument("--grid-spacing-nm", type=float)
        p.add_argument("--smoothing-width-nm", type=float)
        p.add_argument("--dispersion-model", choices=["gehrsitz", "afromowitz"])
        return p

    p = command("dataset", "reference-solved training samples")
    p.add_argument("--n", type=int)
    p.add_argument("--polarization", choices=["TE", "TM"])
    p.add_argument("--wavelength-nm", type=float)
    p.add_argument("--surrogate-grid", type=int)

    p = command("train", "train a surrogate on a dataset")
    p.add_argument("--dataset")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--hidden", type=int, nargs="+")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = command("finetune", "fine-tune a surrogate on recent designs")
    p.add_argument("--checkpoint")
    p.add_argument("--designs", nargs="+")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)

    p = command("optimize", "surrogate-assisted Adam optimization of the stack")
    p.add_argument("--te-checkpoint")
    p.add_argument("--tm-checkpoint")
    p.add_argument("--initial", help="initial stack file (sampled from the template when omitted)")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--audit-every", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--no-finetune", dest="finetune", action="store_const", const=False)

    p = command("analyze", "tuning curves, joint spectra, entanglement and rate ledger")
    p.add_argument("--theta-min-deg", type=float)
    p.add_argument("--theta-max-deg", type=float)
    p.add_argument("--theta-points", type=int)
    p.add_argument("--pump-angles-deg", type=float, nargs="+")
    p.add_argument("--pump-fwhm-ghz", type=float)
    p.add_argument("--length-mm", type=float)
    p.add_argument("--jsa-points", type=int)
    p.add_argument("--jsa-span-thz", type=float)
    p.add_argument("--filter-halfwidth-nm", type=float)
    p.add_argument("--table-halfspan-nm", type=float)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Settings defaults <- config file <- flags"""
    data = {}
    flags = vars(args).copy()
    command = flags.pop("command")
    path = flags.pop("config", None)
    if path:
        data.update(json.loads(Path(path).read_text(encoding="utf-8")))
    data.update({k: v for k, v in flags.items() if v is not None})
    return CONFIGS[command](**data)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    try:
        config = resolve_config(args)
    except (ValidationError, OSError, json.JSONDecodeError, TypeError) as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_USAGE

    torch.set_num_threads(max(settings.threads, 1))
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = config.model_dump(mode="json")
    _write_json(resolved, out / "run_config.json")

    init_db()
    db = SessionLocal()
    run = start_run(db, args.command, config.seed, resolved, str(out))
    started = datetime.utcnow()
    logger.info("=" * 60)
    logger.info(f"nlwg {args.command} (seed {config.seed}) -> {out}")
    logger.info("=" * 60)

    status, code, message = "success", EXIT_OK, None
    try:
        COMMANDS[args.command](config, out, db, run)
    except (NlwgError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        status, code, message = "error", EXIT_MODULE_ERROR, str(e)
    finally:
        finish_run(db, run, status, message)
        _write_json({
            "command": args.command,
            "run_id": run.id,
            "status": status,
            "message": message,
            "started_at": started.isoformat(),
            "finished_at": datetime.utcnow().isoformat(),
            "nlwg_version": __version__,
        }, out / "run_meta.json")
        db.close()
    logger.info(f"{args.command} finished: {status}")
    return code


if __name__ == "__main__":
    sys.exit(main())
