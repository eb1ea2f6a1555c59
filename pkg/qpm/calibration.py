"""
Fitting of the microscopic orbit parameters.

fit_shape adjusts (eccentricity, semimajor axis, effective charge) so the
simulated refractive indices match measured ones, using a bounded
Nelder-Mead simplex on a common-random-numbers objective.
fit_field_coupling finds the field coupling kappa that reproduces a
measured effective electro-optic coefficient.

Every simulated index depends on u and Z only through u^2/Z, so at most one
of the two can be fitted at a time; the other has to be pinned.
"""
import logging
import math
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.optimize import brentq

from qpm.classical import field_retardation
from qpm.exceptions import ConfigError, ConvergenceError, PhysicsDomainError
from qpm.orbit import EPS_MAX, OrbitShape
from qpm.transport import SimulationConfig, effective_r_coefficient, eo_response, simulate

logger = logging.getLogger(__name__)

FREE_PARAMETERS = ('eccentricity', 'semimajor', 'z_eff')
TARGET_COLUMNS = ['wavelength_nm', 'polarization', 'n_target']

MIN_TARGETS = 3
SIMPLEX_TOLERANCE = 1e-4
INITIAL_STEP = 0.2

# Nelder-Mead coefficients
REFLECT = 1.0
EXPAND = 2.0
CONTRACT = 0.5
SHRINK = 0.5


class CalibrationTarget(BaseModel):
    """Measured refractive index at one wavelength (nm) and polarization"""

    model_config = ConfigDict(frozen=True)

    wavelength: float = Field(gt=0)
    polarization: Literal['x', 'y']
    n_target: float = Field(gt=1.0)


class ParameterBounds(BaseModel):
    """Search box: eccentricity, semimajor axis (A), effective charge"""

    model_config = ConfigDict(frozen=True)

    eccentricity: Tuple[float, float] = (0.01, 0.6)
    semimajor: Tuple[float, float] = (1.33, 1.52)
    z_eff: Tuple[float, float] = (1.0, 6.0)

    @model_validator(mode='after')
    def _ordered(self) -> 'ParameterBounds':
        for name in FREE_PARAMETERS:
            low, high = getattr(self, name)
            if low > high:
                raise ValueError(f"{name} bounds reversed: {low} > {high}")
        if self.eccentricity[0] < 0.0 or self.eccentricity[1] > EPS_MAX:
            raise ValueError(f"eccentricity bounds must lie in [0, {EPS_MAX}]")
        if self.semimajor[0] <= 0.0 or self.z_eff[0] <= 0.0:
            raise ValueError("semimajor and z_eff bounds must be positive")
        return self

    @property
    def lower(self) -> np.ndarray:
        return np.array([getattr(self, name)[0] for name in FREE_PARAMETERS])

    @property
    def upper(self) -> np.ndarray:
        return np.array([getattr(self, name)[1] for name in FREE_PARAMETERS])

    def contains(self, shape: OrbitShape) -> bool:
        values = _shape_vector(shape)
        return bool(np.all(values >= self.lower) and np.all(values <= self.upper))


class CalibrationResult(BaseModel):
    """Outcome of fit_shape"""

    model_config = ConfigDict(frozen=True)

    shape: OrbitShape
    residual_rms: float = Field(ge=0)
    fit_residual_rms: float = Field(ge=0)
    iterations: int
    evaluations: int
    converged: bool
    free_parameters: Tuple[str, ...]
    identifiable: bool
    trajectory: List[Tuple[float, float, float]] = Field(default_factory=list)

    @property
    def charge_ratio(self) -> float:
        return self.shape.charge_ratio


class CouplingResult(BaseModel):
    """Outcome of fit_field_coupling"""

    model_config = ConfigDict(frozen=True)

    kappa: float = Field(ge=0)
    r_eff_pm_per_v: float
    holdout_field: float
    holdout_delta: float
    predicted_delta: float
    holdout_error: float
    evaluations: int


def _shape_vector(shape: OrbitShape) -> np.ndarray:
    return np.array([shape.eccentricity, shape.semimajor, shape.z_eff])


def _fold(x: np.ndarray) -> np.ndarray:
    """Reflect unbounded scaled coordinates into [0, 1]"""
    y = np.mod(x, 2.0)
    return np.where(y > 1.0, 2.0 - y, y)


def check_identifiable(targets: Sequence[CalibrationTarget], free_parameters: Sequence[str]) -> bool:
    """
    Whether the free parameters can be recovered from these targets

    u and Z only enter as u^2/Z, and the eccentricity shows up only in the
    ratio of x and y indices.
    """
    free = set(free_parameters)
    if {'semimajor', 'z_eff'} <= free:
        return False
    if 'eccentricity' in free and len({t.polarization for t in targets}) < 2:
        return False
    return True


def simulated_indices(targets: Sequence[CalibrationTarget], shape: OrbitShape,
                      base: SimulationConfig, trials: int) -> np.ndarray:
    """Engine index for each target, one run per distinct wavelength"""
    by_wavelength: Dict[float, Tuple[float, float]] = {}
    for wavelength in sorted({t.wavelength for t in targets}):
        beam = base.beam.model_copy(update={'wavelength': wavelength})
        config = base.model_copy(update={'beam': beam, 'shape': shape, 'trials': trials, 'field': None})
        result, _ = simulate(config)
        by_wavelength[wavelength] = (result.n_x, result.n_y)
    return np.array([by_wavelength[t.wavelength][0 if t.polarization == 'x' else 1] for t in targets])


def _residual_rms(targets: Sequence[CalibrationTarget], shape: OrbitShape,
                  base: SimulationConfig, trials: int) -> float:
    measured = np.array([t.n_target for t in targets])
    diff = simulated_indices(targets, shape, base, trials) - measured
    return float(np.sqrt(np.mean(diff ** 2)))


def fit_shape(targets: Sequence[CalibrationTarget], bounds: ParameterBounds, base: SimulationConfig,
              initial: Optional[OrbitShape] = None, trials: int = 2000, report_trials: Optional[int] = None,
              free_parameters: Sequence[str] = FREE_PARAMETERS, max_evaluations: int = 500,
              tolerance: float = SIMPLEX_TOLERANCE) -> CalibrationResult:
    """
    Fit the orbit shape to refractive-index targets

    The simplex lives in scaled coordinates where each bound box side is
    [0, 1]; trial points outside are reflected back in, so every evaluated
    shape satisfies the bounds. The objective uses the fixed seed and trial
    count of base, which makes it deterministic.

    Args:
        targets: At least three measured indices
        bounds: Search box
        base: Simulation settings (stack, seed, gap, workers); its shape is ignored
        initial: Start point, reflected into the box; defaults to the box centre
        trials: Trials per objective evaluation
        report_trials: Trials for the final reported residual (defaults to trials)
        free_parameters: Names to fit; the rest stay at their initial value
        max_evaluations: Evaluation budget
        tolerance: Simplex diameter (scaled units) that counts as converged

    Returns:
        CalibrationResult, with converged=False when the budget ran out

    Raises:
        ConfigError: Fewer than three targets or unknown parameter names
    """
    targets = list(targets)
    if len(targets) < MIN_TARGETS:
        raise ConfigError(f"need at least {MIN_TARGETS} calibration targets, got {len(targets)}", key_path='targets')
    unknown = [name for name in free_parameters if name not in FREE_PARAMETERS]
    if unknown:
        raise ConfigError(f"unknown parameters {unknown}", key_path='calibration.free_parameters')
    if base.transparency_window is not None:
        low, high = base.transparency_window
        outside = [t.wavelength for t in targets if not low <= t.wavelength / 1000.0 <= high]
        if outside:
            raise PhysicsDomainError(f"target wavelengths {outside} nm outside transparency window {low}-{high} um")

    identifiable = check_identifiable(targets, free_parameters)
    if not identifiable:
        logger.warning(
            f"Parameters {list(free_parameters)} are not all identifiable from these targets; "
            f"only eps and u^2/Z are determined"
        )

    lower, upper = bounds.lower, bounds.upper
    width = upper - lower
    if initial is None:
        start = 0.5 * (lower + upper)
    else:
        start = _shape_vector(initial)
    scaled_start = np.divide(start - lower, width, out=np.zeros(3), where=width > 0)
    if np.any((scaled_start < 0.0) | (scaled_start > 1.0)):
        start = lower + width * _fold(scaled_start)
        scaled_start = _fold(scaled_start)
    start = np.where(width > 0, start, lower)

    free_index = [i for i, name in enumerate(FREE_PARAMETERS) if name in free_parameters and width[i] > 0]

    x_start = scaled_start[free_index]
    start_shape = OrbitShape(eccentricity=start[0], semimajor=start[1], z_eff=start[2])

    def to_shape(x: np.ndarray) -> OrbitShape:
        # the start vertex maps back to the start shape exactly
        if np.array_equal(x, x_start):
            return start_shape
        values = start.copy()
        if free_index:
            values[free_index] = lower[free_index] + width[free_index] * _fold(x)
        return OrbitShape(eccentricity=values[0], semimajor=values[1], z_eff=values[2])

    evaluations = 0

    def objective(x: np.ndarray) -> float:
        nonlocal evaluations
        evaluations += 1
        shape = to_shape(x)
        value = _residual_rms(targets, shape, base, trials)
        logger.debug(f"eval {evaluations}: eps={shape.eccentricity:.6f} u={shape.semimajor:.6f} "
                     f"Z={shape.z_eff:.6f} rms={value:.3e}")
        return value

    x0 = x_start
    best_value = objective(x0)
    trajectory = [tuple(_shape_vector(to_shape(x0)))]
    iterations = 0
    converged = True

    if free_index and best_value > 0.0:
        dim = len(free_index)
        simplex = [x0]
        for i in range(dim):
            vertex = x0.copy()
            vertex[i] += INITIAL_STEP if vertex[i] + INITIAL_STEP <= 1.0 else -INITIAL_STEP
            simplex.append(vertex)
        values = [best_value] + [objective(v) for v in simplex[1:]]
        converged = False

        while evaluations < max_evaluations:
            order = np.argsort(values, kind='stable')
            simplex = [simplex[i] for i in order]
            values = [values[i] for i in order]

            diameter = max(np.max(np.abs(v - simplex[0])) for v in simplex[1:])
            if diameter < tolerance or values[0] == 0.0:
                converged = True
                break
            iterations += 1

            centroid = np.mean(simplex[:-1], axis=0)
            worst = simplex[-1]

            reflected = centroid + REFLECT * (centroid - worst)
            reflected_value = objective(reflected)
            if values[0] <= reflected_value < values[-2]:
                simplex[-1], values[-1] = reflected, reflected_value
            elif reflected_value < values[0]:
                expanded = centroid + EXPAND * (centroid - worst)
                expanded_value = objective(expanded)
                if expanded_value < reflected_value:
                    simplex[-1], values[-1] = expanded, expanded_value
                else:
                    simplex[-1], values[-1] = reflected, reflected_value
            else:
                contracted = centroid + CONTRACT * (worst - centroid)
                contracted_value = objective(contracted)
                if contracted_value < values[-1]:
                    simplex[-1], values[-1] = contracted, contracted_value
                else:
                    best = simplex[0]
                    simplex = [best] + [best + SHRINK * (v - best) for v in simplex[1:]]
                    values = [values[0]] + [objective(v) for v in simplex[1:]]

            lead = int(np.argmin(values))
            trajectory.append(tuple(_shape_vector(to_shape(simplex[lead]))))
            logger.debug(f"iteration {iterations}: best rms {values[lead]:.3e}")

        lead = int(np.argmin(values))
        x0, best_value = simplex[lead], values[lead]

    shape = to_shape(x0)
    fit_residual = best_value
    residual = fit_residual
    if report_trials is not None and report_trials != trials:
        residual = _residual_rms(targets, shape, base, report_trials)

    if converged:
        logger.info(f"Calibration converged after {iterations} iterations ({evaluations} evaluations): "
                    f"eps={shape.eccentricity:.5f}, u={shape.semimajor:.5f} A, Z={shape.z_eff:.5f}, rms={residual:.3e}")
    else:
        logger.warning(f"Calibration stopped at the evaluation budget ({max_evaluations}); rms={residual:.3e}")

    return CalibrationResult(
        shape=shape,
        residual_rms=residual,
        fit_residual_rms=fit_residual,
        iterations=iterations,
        evaluations=evaluations,
        converged=converged,
        free_parameters=tuple(name for name in FREE_PARAMETERS if name in free_parameters),
        identifiable=identifiable,
        trajectory=trajectory,
    )


def fit_field_coupling(target_r_eff: float, base: SimulationConfig, psi: float = 0.0,
                       fields: Sequence[float] = (0.0, 0.5, 1.0), holdout_field: float = 0.75,
                       kappa_max: float = 1e-2, holdout_tolerance: float = 0.10) -> CouplingResult:
    """
    Find kappa so the simulated effective EO coefficient equals a target

    Args:
        target_r_eff: Measured |n_y^3 r22 - n_x^3 r12| (pm/V)
        base: Simulation with the calibrated shape; its beam sets the wavelength
        psi: Field angle to the CT axis (degrees)
        fields: Field magnitudes used in the fit (V/um), including 0
        holdout_field: Field magnitude kept out of the fit for validation
        kappa_max: Upper end of the kappa search interval
        holdout_tolerance: Allowed relative mismatch at the held-out field

    Returns:
        CouplingResult

    Raises:
        ConvergenceError: target not reachable for kappa in [0, kappa_max]
    """
    if target_r_eff < 0:
        raise PhysicsDomainError(f"target effective coefficient must be non-negative, got {target_r_eff}")
    if holdout_field in fields:
        raise ConfigError("held-out field must not be one of the fit fields", key_path='holdout_field')

    length = base.stack.crystal_length
    evaluations = 0

    def r_eff(kappa: float) -> float:
        nonlocal evaluations
        evaluations += 1
        response = eo_response(base, fields, psi, kappa=kappa)
        value = effective_r_coefficient(response, base.beam, length)
        logger.debug(f"kappa={kappa:.6e} -> R_eff={value:.4f} pm/V")
        return value

    if target_r_eff == 0.0:
        kappa = 0.0
    else:
        high = r_eff(kappa_max) - target_r_eff
        low = r_eff(0.0) - target_r_eff
        if not (low <= 0.0 <= high):
            raise ConvergenceError(
                f"cannot bracket R_eff={target_r_eff} pm/V: R_eff(0)={low + target_r_eff:.4g}, "
                f"R_eff({kappa_max})={high + target_r_eff:.4g} pm/V"
            )
        kappa = brentq(lambda k: r_eff(k) - target_r_eff, 0.0, kappa_max, xtol=1e-14, rtol=1e-10)

    fitted = r_eff(kappa)
    holdout = eo_response(base, [0.0, holdout_field], psi, kappa=kappa)
    holdout_delta = float(holdout['delta_rad'].iloc[-1])
    predicted = field_retardation(target_r_eff, holdout_field, length, base.beam.wavelength)
    if predicted == 0.0:
        error = abs(holdout_delta)
    else:
        error = abs(abs(holdout_delta) - predicted) / predicted

    if error > holdout_tolerance:
        logger.warning(f"Held-out field {holdout_field} V/um off by {error:.1%} from the classical prediction")
    logger.info(f"Field coupling kappa={kappa:.6e} per V/um gives R_eff={fitted:.3f} pm/V "
                f"(held-out error {error:.2%}, {evaluations} evaluations)")

    return CouplingResult(
        kappa=kappa,
        r_eff_pm_per_v=fitted,
        holdout_field=holdout_field,
        holdout_delta=holdout_delta,
        predicted_delta=predicted,
        holdout_error=error,
        evaluations=evaluations,
    )


def load_targets(path: str) -> List[CalibrationTarget]:
    """
    Read calibration targets from CSV (wavelength_nm, polarization, n_target)

    Raises:
        ConfigError: Missing file, missing columns or invalid rows
    """
    csv_path = Path(path)
    if not csv_path.is_file():
        raise ConfigError(f"targets file not found: {path}", key_path='calibration.targets_csv')
    frame = pd.read_csv(csv_path, skipinitialspace=True)
    missing = [column for column in TARGET_COLUMNS if column not in frame.columns]
    if missing:
        raise ConfigError(f"targets file lacks columns {missing}", key_path='calibration.targets_csv')

    targets = []
    for row_number, row in enumerate(frame.itertuples(index=False), start=2):
        try:
            targets.append(CalibrationTarget(
                wavelength=float(row.wavelength_nm),
                polarization=str(row.polarization).strip(),
                n_target=float(row.n_target),
            ))
        except (ValidationError, ValueError) as e:
            raise ConfigError(f"invalid target on line {row_number}: {e}",
                              key_path='calibration.targets_csv') from e
    logger.info(f"Loaded {len(targets)} calibration targets from {csv_path}")
    return targets


def targets_from_shape(shape: OrbitShape, base: SimulationConfig, wavelengths: Sequence[float],
                       polarizations: Sequence[str] = ('x', 'y'), trials: Optional[int] = None) -> List[CalibrationTarget]:
    """Synthetic targets generated by the engine itself"""
    blanks = [CalibrationTarget(wavelength=w, polarization=p, n_target=2.0)
              for w in wavelengths for p in polarizations]
    values = simulated_indices(blanks, shape, base, trials or base.trials)
    return [blank.model_copy(update={'n_target': float(n)}) for blank, n in zip(blanks, values)]
