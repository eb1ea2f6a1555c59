"""
Monte-Carlo photon transport through the layered NPP crystal.

A photon crosses the stack one molecular layer at a time. In every layer it
interacts once with the pi-electron of the nearest molecule, whose position
on its Kepler orbit is sampled, and is delayed by an attosecond-scale amount.
Summed delays give the refractive indices; the signed x/y delay difference
gives the phase retardation.

The geometric part of a run (anomaly sampling and the normalized r^2 sums)
depends only on the eccentricity, the layer count and the random streams.
It is computed once per (eps, layers, trials, seed) and then scaled exactly
for any wavelength, semimajor axis or effective charge.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from sklearn.linear_model import LinearRegression

from qpm.constants import (
    ANGSTROM2_TO_CM2,
    CODATA,
    MICROMETER,
    NANOMETER,
    PhysicalConstants,
    V_PER_UM_TO_V_PER_M,
)
from qpm.crystal import LayerStack
from qpm.exceptions import ConfigError, PhysicsDomainError
from qpm.orbit import (
    FieldPerturbation,
    OrbitShape,
    apply_field,
    field_eccentricity,
    radius_ratio,
    sample_anomaly,
)
from qpm.streams import trial_uniforms

logger = logging.getLogger(__name__)

DEFAULT_GAP_EV = 3.0

EO_COLUMNS = ['field_v_per_um', 'psi_deg', 'delta_phi_rad', 'delta_rad', 'stderr_rad']
DISPERSION_COLUMNS = ['wavelength_nm', 'n_x', 'n_y', 'delta_phi_rad', 'stderr_rad']


class BeamSpec(BaseModel):
    """Laser beam: wavelength (nm), average power (mW), beam diameter (um)"""

    model_config = ConfigDict(frozen=True)

    wavelength: float = Field(gt=0)
    power: float = Field(default=10.0, ge=0)
    beamwidth: float = Field(default=20.0, gt=0)

    @property
    def frequency(self) -> float:
        return CODATA.c0 / (self.wavelength * NANOMETER)

    @property
    def angular_frequency(self) -> float:
        return 2.0 * math.pi * self.frequency


class SimulationConfig(BaseModel):
    """Everything a Monte-Carlo run needs"""

    model_config = ConfigDict(frozen=True)

    trials: int = Field(ge=1)
    seed: int = 0
    beam: BeamSpec
    stack: LayerStack
    shape: OrbitShape
    field: Optional[FieldPerturbation] = None
    homo_lumo_gap: float = Field(default=DEFAULT_GAP_EV, gt=0)
    workers: int = Field(default=1, ge=1)
    transparency_window: Optional[Tuple[float, float]] = None  # um
    # Diagnostic hook: place every electron at this anomaly instead of sampling
    fixed_anomaly: Optional[float] = None


class SimulationResult(BaseModel):
    """Trial-averaged output of one run"""

    model_config = ConfigDict(frozen=True)

    n_x: float
    n_y: float
    delta_phi: float
    tau_x_mean: float
    tau_y_mean: float
    tau_x_total: float
    tau_y_total: float
    stderr_delta_phi: float
    stderr_n_x: float
    stderr_n_y: float
    trials_used: int
    clamp_events: int
    eccentricity: float
    photon_energy_ev: float


class GeometrySums(NamedTuple):
    """Per-trial sums over layers of |cos|rho^2, |sin|rho^2, (cos - sin)rho^2 and cos rho^2 (rho = r/u)"""

    abs_x: np.ndarray
    abs_y: np.ndarray
    signed_diff: np.ndarray
    signed_x: np.ndarray


def photon_energy_j(wavelength_nm: float, constants: PhysicalConstants = CODATA) -> float:
    return constants.h * constants.c0 / (wavelength_nm * NANOMETER)


def photon_energy_ev(wavelength_nm: float, constants: PhysicalConstants = CODATA) -> float:
    return photon_energy_j(wavelength_nm, constants) / constants.e


def angular_frequency(wavelength_nm: float, constants: PhysicalConstants = CODATA) -> float:
    return 2.0 * math.pi * constants.c0 / (wavelength_nm * NANOMETER)


def refractive_index(total_delay: float, length: float, constants: PhysicalConstants = CODATA) -> float:
    """n = 1 + c0 * sum(tau) / L, with the total delay in s and the length in um"""
    return 1.0 + constants.c0 * total_delay / (length * MICROMETER)


def photon_flux(beam: BeamSpec, constants: PhysicalConstants = CODATA) -> float:
    """
    Mean photon flux I/(h*nu) of a uniform beam

    Returns:
        photons per second per cm^2
    """
    radius_cm = 0.5 * beam.beamwidth * 1e-4
    intensity_w_cm2 = (beam.power * 1e-3) / (math.pi * radius_cm ** 2)
    return intensity_w_cm2 / photon_energy_j(beam.wavelength, constants)


def interaction_rate(flux: float, cross_section: float) -> float:
    """Photons hitting one molecule per second (cross_section in A^2)"""
    return flux * cross_section * ANGSTROM2_TO_CM2


def interaction_interval(flux: float, cross_section: float) -> float:
    """
    Mean time between two photons reaching the same molecule

    Args:
        flux: photons / s / cm^2
        cross_section: per-molecule area (A^2)

    Returns:
        Interval in ns; infinite for zero flux
    """
    if flux < 0 or cross_section <= 0:
        raise PhysicsDomainError("flux must be non-negative and cross-section positive")
    rate = interaction_rate(flux, cross_section)
    if rate == 0.0:
        return math.inf
    return 1e9 / rate


def check_nonresonant(beam: BeamSpec, gap: float = DEFAULT_GAP_EV, constants: PhysicalConstants = CODATA) -> float:
    """
    Gate a run on the nonresonant condition E_photon < HOMO-LUMO gap

    Returns:
        Photon energy in eV

    Raises:
        PhysicsDomainError: photon energy reaches the gap
    """
    if not gap > 0:
        raise PhysicsDomainError(f"HOMO-LUMO gap must be positive, got {gap} eV")
    energy = photon_energy_ev(beam.wavelength, constants)
    if energy >= gap:
        raise PhysicsDomainError(
            f"resonant regime: QPM linear model invalid (photon {energy:.3f} eV >= gap {gap} eV)"
        )
    return energy


def delay_prefactor(frequency: float, z_eff: float, constants: PhysicalConstants = CODATA) -> float:
    """C = sqrt(2 h nu m) / (K Z e^2), in s/m^2"""
    momentum = math.sqrt(2.0 * constants.h * frequency * constants.m_e)
    return momentum / (constants.K * z_eff * constants.e ** 2)


def layer_delay(theta, shape: OrbitShape, frequency: float, constants: PhysicalConstants = CODATA):
    """
    Delays of one photon-electron interaction

    Returns:
        (tau_x, tau_y, signed_x, signed_y) in seconds; tau_* are magnitudes
    """
    C = delay_prefactor(frequency, shape.z_eff, constants)
    r = np.asarray(radius_ratio(theta, shape.eccentricity)) * shape.semimajor_m
    signed_x = C * np.cos(theta) * r ** 2
    signed_y = C * np.sin(theta) * r ** 2
    return np.abs(signed_x), np.abs(signed_y), signed_x, signed_y


def expected_layer_delay(shape: OrbitShape, frequency: float, constants: PhysicalConstants = CODATA) -> float:
    """Orbit-averaged signed x delay, C u^2 <rho^2 cos theta> = -C u^2 (2 eps + eps^3 / 2)"""
    eps = shape.eccentricity
    C = delay_prefactor(frequency, shape.z_eff, constants)
    return -C * shape.semimajor_m ** 2 * (2.0 * eps + 0.5 * eps ** 3)


def _trial_geometry(eps: float, layers: int, seed: int, trial: int,
                    fixed_anomaly: Optional[float]) -> Tuple[float, float, float, float]:
    if fixed_anomaly is None:
        theta = sample_anomaly(eps, trial_uniforms(seed, trial, layers))
    else:
        theta = np.full(layers, fixed_anomaly, dtype=float)
    rho2 = np.asarray(radius_ratio(theta, eps)) ** 2
    cos_t = np.cos(theta)
    sin_t = np.sin(theta)
    return (
        float(np.sum(np.abs(cos_t) * rho2)),
        float(np.sum(np.abs(sin_t) * rho2)),
        float(np.sum((cos_t - sin_t) * rho2)),
        float(np.sum(cos_t * rho2)),
    )


@lru_cache(maxsize=256)
def simulate_geometry(eps: float, layers: int, trials: int, seed: int, workers: int = 1,
                      fixed_anomaly: Optional[float] = None) -> GeometrySums:
    """
    Geometric Monte-Carlo pass shared by every wavelength, u and Z

    Trials run on a thread pool when workers > 1. Each trial works on an
    array of the same shape whichever worker runs it, and the per-trial
    values land in trial order, so the output is bit-identical for any
    worker count.
    """
    logger.debug(f"Geometry pass: eps={eps}, layers={layers}, trials={trials}, seed={seed}, workers={workers}")

    def one(trial: int) -> Tuple[float, float, float, float]:
        return _trial_geometry(eps, layers, seed, trial, fixed_anomaly)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, range(trials)))
    else:
        rows = [one(trial) for trial in range(trials)]

    table = np.array(rows, dtype=float).reshape(trials, 4)
    columns = []
    for k in range(4):
        column = np.ascontiguousarray(table[:, k])
        column.setflags(write=False)
        columns.append(column)
    return GeometrySums(*columns)


def _stderr(values: np.ndarray) -> float:
    if values.size < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(values.size))


def _effective_shape(config: SimulationConfig) -> Tuple[OrbitShape, int]:
    if config.field is None:
        return config.shape, 0
    _, clamped = field_eccentricity(config.shape, config.field)
    return apply_field(config.shape, config.field), int(clamped)


def simulate(config: SimulationConfig, constants: PhysicalConstants = CODATA) -> Tuple[SimulationResult, np.ndarray]:
    """Silent run that also returns the per-trial phase retardations (rad)"""
    energy = check_nonresonant(config.beam, config.homo_lumo_gap, constants)
    if config.transparency_window is not None:
        low, high = config.transparency_window
        if not low <= config.beam.wavelength / 1000.0 <= high:
            raise PhysicsDomainError(
                f"wavelength {config.beam.wavelength} nm outside transparency window {low}-{high} um"
            )
    layers = config.stack.layer_count
    if layers < 1:
        raise PhysicsDomainError("stack has no layers")

    shape, clamp_events = _effective_shape(config)
    geometry = simulate_geometry(shape.eccentricity, layers, config.trials, config.seed,
                                 config.workers, config.fixed_anomaly)

    frequency = config.beam.frequency
    scale = delay_prefactor(frequency, shape.z_eff, constants) * shape.semimajor_m ** 2
    omega = angular_frequency(config.beam.wavelength, constants)
    index_scale = constants.c0 / config.stack.length_m

    tau_x = scale * geometry.abs_x
    tau_y = scale * geometry.abs_y
    delta_phi = omega * scale * geometry.signed_diff

    tau_x_total = float(np.mean(tau_x))
    tau_y_total = float(np.mean(tau_y))
    result = SimulationResult(
        n_x=refractive_index(tau_x_total, config.stack.crystal_length, constants),
        n_y=refractive_index(tau_y_total, config.stack.crystal_length, constants),
        delta_phi=float(np.mean(delta_phi)),
        tau_x_mean=tau_x_total / layers,
        tau_y_mean=tau_y_total / layers,
        tau_x_total=tau_x_total,
        tau_y_total=tau_y_total,
        stderr_delta_phi=_stderr(delta_phi),
        stderr_n_x=index_scale * _stderr(tau_x),
        stderr_n_y=index_scale * _stderr(tau_y),
        trials_used=config.trials,
        clamp_events=clamp_events,
        eccentricity=shape.eccentricity,
        photon_energy_ev=energy,
    )
    return result, delta_phi


def run(config: SimulationConfig, constants: PhysicalConstants = CODATA) -> SimulationResult:
    """
    Monte-Carlo run of one crystal at one wavelength

    Args:
        config: Simulation settings (beam, stack, orbit, optional field)
        constants: Physical constants

    Returns:
        SimulationResult with indices, retardation and standard errors

    Raises:
        PhysicsDomainError: Resonant beam or empty stack
    """
    logger.info(
        f"Run: {config.trials} trials x {config.stack.layer_count} layers at {config.beam.wavelength} nm "
        f"(seed {config.seed}, eps {config.shape.eccentricity})"
    )
    result, _ = simulate(config, constants)
    logger.info(f"Run done: n_x={result.n_x:.6f}, n_y={result.n_y:.6f}, delta_phi={result.delta_phi:.6e} rad")
    return result


def run_dispersion(config: SimulationConfig, wavelengths: Sequence[float],
                   constants: PhysicalConstants = CODATA) -> pd.DataFrame:
    """Run at each wavelength with common random numbers; rows ascending in wavelength"""
    rows = []
    for wavelength in sorted(wavelengths):
        beam = config.beam.model_copy(update={'wavelength': float(wavelength)})
        result, _ = simulate(config.model_copy(update={'beam': beam}), constants)
        rows.append({
            'wavelength_nm': float(wavelength),
            'n_x': result.n_x,
            'n_y': result.n_y,
            'delta_phi_rad': result.delta_phi,
            'stderr_rad': result.stderr_delta_phi,
        })
    return pd.DataFrame(rows, columns=DISPERSION_COLUMNS)


def eo_response(config: SimulationConfig, fields: Sequence[float], psi: float,
                kappa: Optional[float] = None, constants: PhysicalConstants = CODATA) -> pd.DataFrame:
    """
    Electro-optic response delta(E) = delta_phi(E) - delta_phi(0)

    All field values share the same seed and trial streams, so delta is a
    paired difference and is exactly zero whenever the orbit is unchanged.

    Args:
        config: Base simulation (its field, if any, supplies kappa)
        fields: Signed fields in V/um, must include 0; a negative value
            points against the field direction (angle 180 - psi)
        psi: Angle between field and CT axis (degrees)
        kappa: Field coupling per V/um; defaults to config.field.coupling

    Returns:
        DataFrame with EO_COLUMNS plus eccentricity and clamped
    """
    fields = [float(f) for f in fields]
    if not fields:
        raise ConfigError("at least one field value is required", key_path='fields')
    if 0.0 not in fields:
        raise ConfigError("field list must include 0 V/um for the paired difference", key_path='fields')
    if kappa is None:
        kappa = config.field.coupling if config.field is not None else 0.0

    baseline, baseline_trials = simulate(config.model_copy(update={'field': None}), constants)

    rows = []
    for value in fields:
        pert = FieldPerturbation.signed(value, psi, coupling=kappa)
        result, trials = simulate(config.model_copy(update={'field': pert}), constants)
        paired = trials - baseline_trials
        rows.append({
            'field_v_per_um': value,
            'psi_deg': float(psi),
            'delta_phi_rad': result.delta_phi,
            'delta_rad': result.delta_phi - baseline.delta_phi,
            'stderr_rad': _stderr(paired),
            'eccentricity': result.eccentricity,
            'clamped': result.clamp_events,
        })
    logger.info(f"EO response over {len(fields)} fields at psi={psi} deg, kappa={kappa}")
    return pd.DataFrame(rows, columns=EO_COLUMNS + ['eccentricity', 'clamped'])


def effective_r_coefficient(response: pd.DataFrame, beam: BeamSpec, length: float) -> float:
    """
    Effective EO coefficient from a delta(E) table

    Fits delta = (omega l / c) * R_eff * E / 2 through the origin.

    Args:
        response: Table with field_v_per_um and delta_rad columns
        beam: Beam (wavelength sets omega)
        length: Crystal length (um)

    Returns:
        |R_eff| in pm/V
    """
    fields = response['field_v_per_um'].to_numpy(dtype=float)
    deltas = response['delta_rad'].to_numpy(dtype=float)
    if fields.size < 2 or np.ptp(fields) == 0.0:
        raise PhysicsDomainError("degenerate fit: need at least two distinct field values")

    model = LinearRegression(fit_intercept=False).fit(fields.reshape(-1, 1), deltas)
    slope = float(model.coef_[0])  # rad per V/um
    length_m = length * MICROMETER
    r_eff = 2.0 * CODATA.c0 * slope / (beam.angular_frequency * length_m * V_PER_UM_TO_V_PER_M)
    return abs(r_eff) * 1e12


def eo_linearity(response: pd.DataFrame) -> float:
    """R^2 of a straight-line fit of delta against E"""
    fields = response['field_v_per_um'].to_numpy(dtype=float).reshape(-1, 1)
    deltas = response['delta_rad'].to_numpy(dtype=float)
    if np.ptp(deltas) == 0.0:
        return 1.0
    return float(LinearRegression().fit(fields, deltas).score(fields, deltas))
