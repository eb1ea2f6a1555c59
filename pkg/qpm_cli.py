#!/usr/bin/env python3
"""
QPM Simulator CLI
Batch front end for the NPP electro-optic photon model: dispersion and field
scans, calibration, Hueckel densities, classical reference values and beam
flux. Every output file gets a manifest so the run can be replayed exactly.
"""

import argparse
import logging
import math
import sys
import tempfile
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from qpm.calibration import fit_field_coupling, fit_shape, load_targets, simulated_indices
from qpm.classical import load_material, retardation_components
from qpm.config import RunConfig, Settings, load_run_config
from qpm.crystal import molecular_density, molecule_cross_section
from qpm.exceptions import ConfigError, PhysicsDomainError, QPMError
from qpm.huckel import density_asymmetry, homo_lumo_gap, load_pi_system, solve
from qpm.manifest import RunManifest, atomic_write, load_manifest, version_mismatch, write_manifest
from qpm.transport import (
    EO_COLUMNS,
    check_nonresonant,
    eo_response,
    interaction_interval,
    interaction_rate,
    photon_energy_ev,
    photon_flux,
    run_dispersion,
)

logger = logging.getLogger('qpm_cli')

FLOAT_FORMAT = '%.17g'

DEFAULT_OUTPUTS = {
    'dispersion': 'dispersion.csv',
    'eo-scan': 'eo_scan.csv',
    'angle-scan': 'angle_scan.csv',
    'calibrate': 'calibration.csv',
    'huckel': 'huckel_orbitals.csv',
    'classical': 'classical.csv',
    'flux': 'flux.csv',
}


def parse_floats(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(',') if part.strip()]
    except ValueError as e:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}", key_path='fields') from e


def inclusive_range(start: float, stop: float, step: float) -> List[float]:
    """start, start + step, ... up to stop inclusive, without accumulated drift"""
    if step <= 0 or stop < start:
        raise ConfigError(f"invalid range {start}..{stop} step {step}", key_path='range')
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [start + i * step for i in range(count)]


class RunContext:
    """Resolved settings shared by every subcommand"""

    def __init__(self, args: argparse.Namespace, command_line: Sequence[str], settings: Settings):
        self.args = args
        self.command_line = list(command_line)
        self.settings = settings
        config_path = args.config or settings.QPM_CONFIG
        seed = args.seed if args.seed is not None else settings.QPM_SEED
        trials = args.trials if args.trials is not None else settings.QPM_TRIALS
        workers = args.workers if args.workers is not None else settings.QPM_WORKERS
        self.run_config: RunConfig = load_run_config(config_path).with_overrides(seed, trials, workers)

    @property
    def seed(self) -> int:
        return self.run_config.simulation.seed

    @property
    def trials(self) -> int:
        return self.run_config.simulation.trials

    def output_path(self, default_name: str) -> Path:
        if self.args.out:
            return Path(self.args.out)
        directory = Path(self.settings.QPM_OUTPUT_DIR) if self.settings.QPM_OUTPUT_DIR else Path('.')
        return directory / default_name

    def manifest(self) -> RunManifest:
        return RunManifest.create(self.command_line, self.run_config.snapshot(), self.seed, self.trials)

    def write_csv(self, frame: pd.DataFrame, path: Path) -> Path:
        manifest = self.manifest()
        atomic_write(path, lambda tmp: frame.to_csv(tmp, index=False, float_format=FLOAT_FORMAT))
        write_manifest(path, manifest)
        logger.info(f"Saved {len(frame)} rows to {path}")
        return path

    def write_text(self, text: str, path: Path) -> Path:
        manifest = self.manifest()
        atomic_write(path, lambda tmp: tmp.write_text(text, encoding='utf-8'))
        write_manifest(path, manifest)
        return path


def cmd_dispersion(ctx: RunContext) -> int:
    args = ctx.args
    wavelengths = inclusive_range(args.start, args.stop, args.step)
    cell = ctx.run_config.unit_cell()
    outside = [w for w in wavelengths if not cell.transmits(w)]
    if outside:
        low, high = cell.transparency_window
        raise PhysicsDomainError(f"wavelengths {outside} nm outside transparency window {low}-{high} um")

    config = ctx.run_config.simulation_config()
    for wavelength in wavelengths:
        check_nonresonant(ctx.run_config.beam_spec(wavelength), config.homo_lumo_gap)

    frame = run_dispersion(config, wavelengths)
    path = ctx.write_csv(frame, ctx.output_path(DEFAULT_OUTPUTS['dispersion']))
    print(f"Dispersion: {len(frame)} wavelengths, {ctx.trials} trials -> {path}")
    return 0


def _kappa(ctx: RunContext) -> float:
    kappa = ctx.args.kappa
    return ctx.run_config.orbit.kappa_per_v_um if kappa is None else kappa


def cmd_eo_scan(ctx: RunContext) -> int:
    args = ctx.args
    fields = parse_floats(args.fields)
    if 0.0 not in fields:
        raise ConfigError("field list must include 0 V/um", key_path='fields')
    psi = ctx.run_config.simulation.field_angle_deg if args.psi is None else args.psi

    response = eo_response(ctx.run_config.simulation_config(), fields, psi, kappa=_kappa(ctx))
    path = ctx.write_csv(response[EO_COLUMNS], ctx.output_path(DEFAULT_OUTPUTS['eo-scan']))
    print(f"EO scan: {len(fields)} fields at psi={psi} deg -> {path}")
    return 0


def cmd_angle_scan(ctx: RunContext) -> int:
    args = ctx.args
    if not args.field > 0:
        raise ConfigError(f"field must be positive, got {args.field}", key_path='field')
    config = ctx.run_config.simulation_config()
    kappa = _kappa(ctx)

    rows = []
    for psi in inclusive_range(args.psi_start, args.psi_stop, args.psi_step):
        response = eo_response(config, [0.0, args.field], psi, kappa=kappa)
        row = response.iloc[-1]
        rows.append({
            'psi_deg': psi,
            'field_v_per_um': args.field,
            'delta_rad': float(row['delta_rad']),
            'stderr_rad': float(row['stderr_rad']),
        })
    frame = pd.DataFrame(rows, columns=['psi_deg', 'field_v_per_um', 'delta_rad', 'stderr_rad'])
    path = ctx.write_csv(frame, ctx.output_path(DEFAULT_OUTPUTS['angle-scan']))
    peak = frame.loc[frame['delta_rad'].abs().idxmax(), 'psi_deg']
    print(f"Angle scan: {len(frame)} angles at E={args.field} V/um, max |delta| at psi={peak} deg -> {path}")
    return 0


def cmd_calibrate(ctx: RunContext) -> int:
    args = ctx.args
    cal = ctx.run_config.calibration
    targets_path = args.targets or (str(ctx.run_config.resolve_path(cal.targets_csv)) if cal.targets_csv else None)
    if targets_path is None:
        raise ConfigError("no calibration targets given (--targets or calibration.targets_csv)",
                          key_path='calibration.targets_csv')
    targets = load_targets(targets_path)

    base = ctx.run_config.simulation_config()
    fit_trials = cal.fit_trials
    result = fit_shape(
        targets,
        ctx.run_config.parameter_bounds(),
        base,
        initial=ctx.run_config.orbit_shape(),
        trials=fit_trials,
        report_trials=cal.report_trials,
        free_parameters=cal.free_parameters,
        max_evaluations=cal.max_evaluations,
    )

    shape = result.shape
    row = {
        'eccentricity': shape.eccentricity,
        'semimajor_angstrom': shape.semimajor,
        'z_eff': shape.z_eff,
        'charge_ratio_angstrom2': result.charge_ratio,
        'residual_rms': result.residual_rms,
        'fit_residual_rms': result.fit_residual_rms,
        'iterations': result.iterations,
        'evaluations': result.evaluations,
        'converged': result.converged,
        'identifiable': result.identifiable,
    }
    coupling = None
    if args.fit_coupling is not None:
        coupling = fit_field_coupling(
            args.fit_coupling,
            base.model_copy(update={'shape': shape, 'trials': fit_trials}),
            psi=ctx.run_config.simulation.field_angle_deg,
            kappa_max=cal.kappa_max,
        )
        row.update({
            'kappa_per_v_um': coupling.kappa,
            'r_eff_pm_per_v': coupling.r_eff_pm_per_v,
            'holdout_error': coupling.holdout_error,
        })

    path = ctx.output_path(DEFAULT_OUTPUTS['calibrate'])
    ctx.write_csv(pd.DataFrame([row]), path)

    report_trials = cal.report_trials
    simulated = simulated_indices(targets, shape, base, report_trials)
    residuals = pd.DataFrame({
        'wavelength_nm': [t.wavelength for t in targets],
        'polarization': [t.polarization for t in targets],
        'n_target': [t.n_target for t in targets],
        'n_simulated': simulated,
        'residual': simulated - np.array([t.n_target for t in targets]),
    })
    ctx.write_csv(residuals, path.with_name(f"{path.stem}_residuals.csv"))

    lines = [
        "QPM calibration summary",
        f"  targets:        {len(targets)} from {targets_path}",
        f"  free:           {', '.join(result.free_parameters)}",
        f"  eccentricity:   {shape.eccentricity:.6f}",
        f"  semimajor:      {shape.semimajor:.6f} A",
        f"  z_eff:          {shape.z_eff:.6f}",
        f"  u^2/Z:          {result.charge_ratio:.6f} A^2",
        f"  residual rms:   {result.residual_rms:.3e} ({report_trials} trials)",
        f"  converged:      {result.converged} after {result.iterations} iterations",
    ]
    if not result.identifiable:
        lines.append("  note:           u and Z enter only as u^2/Z; pin one of them to fit the other")
    if coupling is not None:
        lines.append(f"  kappa:          {coupling.kappa:.6e} per V/um (R_eff {coupling.r_eff_pm_per_v:.2f} pm/V)")
        lines.append(f"  held-out E:     {coupling.holdout_field} V/um, error {coupling.holdout_error:.2%}")
    summary = '\n'.join(lines) + '\n'
    ctx.write_text(summary, path.with_name(f"{path.stem}_summary.txt"))
    print(summary, end='')
    return 0


def cmd_huckel(ctx: RunContext) -> int:
    args = ctx.args
    system_path = args.system or str(ctx.run_config.resolve_path(ctx.run_config.material.pi_system))
    system = load_pi_system(system_path)
    result = solve(system)

    n = system.atom_count
    orbitals = pd.DataFrame(result.coefficients, columns=[f"c_{i}" for i in range(n)])
    orbitals.insert(0, 'occupation', [2 if k < result.occupied else 0 for k in range(n)])
    orbitals.insert(0, 'energy_abs_beta', result.energies)
    orbitals.insert(0, 'orbital', range(n))
    path = ctx.output_path(DEFAULT_OUTPUTS['huckel'])
    ctx.write_csv(orbitals, path)

    densities = pd.DataFrame({
        'atom': range(n),
        'label': system.labels or [f"C{i + 1}" for i in range(n)],
        'density': result.densities,
    })
    ctx.write_csv(densities, path.with_name(f"{path.stem}_densities.csv"))

    print(f"Hueckel: {n} atoms, {system.electron_count} pi electrons, "
          f"HOMO-LUMO gap {homo_lumo_gap(result):.6f} |beta|")
    if args.acceptor is not None and args.donor is not None:
        print(f"Density asymmetry q[{args.acceptor}] - q[{args.donor}] = "
              f"{density_asymmetry(result, args.acceptor, args.donor):.6f}")
    return 0


def cmd_classical(ctx: RunContext) -> int:
    args = ctx.args
    material_path = args.material or str(ctx.run_config.resolve_path(ctx.run_config.material.path))
    material = load_material(material_path)
    wavelength = args.wavelength if args.wavelength is not None else ctx.run_config.beam.wavelength_nm
    length = args.length if args.length is not None else ctx.run_config.simulation.length_um

    ellipsoid = material.ellipsoid(wavelength)
    gamma = retardation_components(ellipsoid, args.field, length, wavelength, crystal=args.crystal)
    frame = pd.DataFrame([{
        'crystal': args.crystal,
        'wavelength_nm': wavelength,
        'field_v_per_um': args.field,
        'length_um': length,
        'n_x': ellipsoid.n_x,
        'n_y': ellipsoid.n_y,
        'gamma_rad': gamma.total,
        'gamma_wrapped_rad': gamma.wrapped,
        'birefringence_rad': gamma.birefringence,
        'delta_rad': gamma.electro_optic,
    }])
    ctx.write_csv(frame, ctx.output_path(DEFAULT_OUTPUTS['classical']))
    print(f"{args.crystal.upper()} {wavelength} nm, E={args.field} V/um, l={length} um: "
          f"Gamma={gamma.total:.9e} rad (mod 2pi {gamma.wrapped:.9e}), "
          f"birefringence={gamma.birefringence:.9e} rad, delta={gamma.electro_optic:.9e} rad")
    return 0


def cmd_flux(ctx: RunContext) -> int:
    args = ctx.args
    beam = ctx.run_config.beam_spec(args.wavelength, args.power, args.beamwidth)
    cell = ctx.run_config.unit_cell()

    flux = photon_flux(beam)
    area = molecule_cross_section(cell)
    rate = interaction_rate(flux, area)
    interval = interaction_interval(flux, area)

    frame = pd.DataFrame([{
        'wavelength_nm': beam.wavelength,
        'power_mw': beam.power,
        'beamwidth_um': beam.beamwidth,
        'photon_energy_ev': photon_energy_ev(beam.wavelength),
        'flux_per_cm2_s': flux,
        'cross_section_angstrom2': area,
        'rate_per_s': rate,
        'interval_ns': interval,
        'molecular_density_per_cm3': molecular_density(cell),
    }])
    ctx.write_csv(frame, ctx.output_path(DEFAULT_OUTPUTS['flux']))

    print(f"flux: {flux:.4e} photons/s/cm^2")
    print(f"rate: {rate:.4e} photons/s per molecule ({area:.3f} A^2)")
    print("interval: infinite" if math.isinf(interval) else f"interval: {interval:.3f} ns")
    return 0


def cmd_replay(args: argparse.Namespace, settings: Settings) -> int:
    manifest = load_manifest(args.manifest)
    mismatch = version_mismatch(manifest)
    if mismatch:
        logger.warning(mismatch)

    parser = build_parser()
    recorded = parser.parse_args(manifest.command_line)
    if recorded.command == 'replay':
        raise ConfigError("a replay manifest cannot point at another replay", key_path='manifest')

    with tempfile.TemporaryDirectory() as workdir:
        snapshot = Path(workdir) / 'config.cfg'
        snapshot.write_text(manifest.config_snapshot, encoding='utf-8')
        # the snapshot already holds the effective seed and trial counts
        recorded.config = str(snapshot)
        recorded.seed = None
        recorded.trials = None
        if args.out:
            recorded.out = args.out
        logger.info(f"Replaying '{' '.join(manifest.command_line)}' (seed {manifest.seed})")
        isolated = settings.model_copy(update={'QPM_CONFIG': None, 'QPM_SEED': None, 'QPM_TRIALS': None})
        return dispatch(recorded, manifest.command_line, isolated)


COMMANDS = {
    'dispersion': cmd_dispersion,
    'eo-scan': cmd_eo_scan,
    'angle-scan': cmd_angle_scan,
    'calibrate': cmd_calibrate,
    'huckel': cmd_huckel,
    'classical': cmd_classical,
    'flux': cmd_flux,
}


def dispatch(args: argparse.Namespace, command_line: Sequence[str], settings: Settings) -> int:
    if args.command == 'replay':
        return cmd_replay(args, settings)
    ctx = RunContext(args, command_line, settings)
    return COMMANDS[args.command](ctx)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='qpm_cli.py',
        description='Quantum photon model of the transverse electro-optic effect in NPP',
    )
    parser.add_argument('--config', help='INI run configuration (default: built-in NPP values)')
    parser.add_argument('--seed', type=int, help='Random seed')
    parser.add_argument('--trials', type=int, help='Monte-Carlo trials')
    parser.add_argument('--out', help='Output file')
    parser.add_argument('--workers', type=int, help='Worker threads for trials')
    parser.add_argument('--verbose', action='store_true', help='Debug logging')

    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('dispersion', help='Refractive indices and retardation over a wavelength range')
    p.add_argument('--start', type=float, default=600.0, help='First wavelength (nm)')
    p.add_argument('--stop', type=float, default=1100.0, help='Last wavelength (nm)')
    p.add_argument('--step', type=float, default=100.0, help='Wavelength step (nm)')

    p = sub.add_parser('eo-scan', help='Field-induced retardation over field magnitudes')
    p.add_argument('--fields', default='0,0.5,1,1.5,2', help='Comma-separated signed fields (V/um), must include 0; write --fields=-1,0,1 for negatives')
    p.add_argument('--psi', type=float, help='Angle between field and CT axis (deg)')
    p.add_argument('--kappa', type=float, help='Field coupling per V/um (default: config orbit.kappa_per_v_um)')

    p = sub.add_parser('angle-scan', help='Field-induced retardation over field angles')
    p.add_argument('--field', type=float, default=1.0, help='Field magnitude (V/um)')
    p.add_argument('--psi-start', type=float, default=0.0)
    p.add_argument('--psi-stop', type=float, default=180.0)
    p.add_argument('--psi-step', type=float, default=15.0)
    p.add_argument('--kappa', type=float, help='Field coupling per V/um')

    p = sub.add_parser('calibrate', help='Fit the orbit shape to measured refractive indices')
    p.add_argument('--targets', help='CSV with wavelength_nm, polarization, n_target')
    p.add_argument('--fit-coupling', type=float, metavar='R_PM_PER_V',
                   help='Also fit the field coupling to this effective EO coefficient')

    p = sub.add_parser('huckel', help='Hueckel orbitals and pi densities')
    p.add_argument('--system', help='pi system JSON (default: config material.pi_system)')
    p.add_argument('--acceptor', type=int, help='Acceptor atom index for the density asymmetry')
    p.add_argument('--donor', type=int, help='Donor atom index for the density asymmetry')

    p = sub.add_parser('classical', help='Closed-form retardation for NPP or MNA')
    p.add_argument('--material', help='Material data file (default: config material.path)')
    p.add_argument('--crystal', choices=['npp', 'mna'], default='npp')
    p.add_argument('--field', type=float, default=0.0, help='Field (V/um)')
    p.add_argument('--length', type=float, help='Crystal length (um)')
    p.add_argument('--wavelength', type=float, help='Wavelength (nm)')

    p = sub.add_parser('flux', help='Photon flux and per-molecule interaction interval')
    p.add_argument('--wavelength', type=float, help='Wavelength (nm)')
    p.add_argument('--power', type=float, help='Average power (mW)')
    p.add_argument('--beamwidth', type=float, help='Beam diameter (um)')

    p = sub.add_parser('replay', help='Re-run the command recorded in a manifest')
    p.add_argument('manifest', help='Path to <output>.manifest.json')

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    command_line = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(command_line)

    settings = Settings()
    level = logging.DEBUG if args.verbose else getattr(logging, settings.QPM_LOG_LEVEL.upper(), logging.INFO)
    logging.basicConfig(level=level, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    try:
        return dispatch(args, command_line, settings)
    except QPMError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except ValidationError as e:
        logger.error(f"Invalid input: {e}")
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
