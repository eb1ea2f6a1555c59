"""
Kepler-orbit model of the delocalized pi-electron.

The electron moves on an ellipse with the effective positive charge at one
focus. theta is the true anomaly measured from perigee (prolinol side,
theta=0) towards apogee (nitro side, theta=pi). All time quantities are
fractions of the orbital period, so the period itself never appears.

Every function accepts scalars or numpy arrays.
"""
import logging
import math
from typing import Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from qpm.constants import ANGSTROM
from qpm.exceptions import ConvergenceError, PhysicsDomainError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

EPS_MAX = 0.95
TWO_PI = 2.0 * math.pi

NEWTON_TOLERANCE = 1e-12
NEWTON_MAX_ITER = 50


class OrbitShape(BaseModel):
    """Ellipse of the pi-electron: eccentricity, semimajor axis (A), effective charge"""

    model_config = ConfigDict(frozen=True)

    eccentricity: float = Field(ge=0.0, le=EPS_MAX)
    semimajor: float = Field(gt=0.0)
    z_eff: float = Field(gt=0.0)

    @property
    def semimajor_m(self) -> float:
        return self.semimajor * ANGSTROM

    @property
    def charge_ratio(self) -> float:
        """u^2/Z (A^2), the only combination of u and Z the delays depend on"""
        return self.semimajor ** 2 / self.z_eff


class FieldPerturbation(BaseModel):
    """Applied transverse field: magnitude (V/um), angle psi to the CT axis (deg), coupling kappa"""

    model_config = ConfigDict(frozen=True)

    field_magnitude: float = Field(ge=0.0)
    field_angle: float = Field(default=0.0, ge=0.0, le=180.0)
    coupling: float = Field(default=0.0, ge=0.0)

    @classmethod
    def signed(cls, field: float, psi: float, coupling: float = 0.0) -> 'FieldPerturbation':
        """A field of either sign at psi; a negative field points along 180 - psi"""
        if field < 0:
            return cls(field_magnitude=-field, field_angle=180.0 - psi, coupling=coupling)
        return cls(field_magnitude=field, field_angle=psi, coupling=coupling)

    @property
    def cos_psi(self) -> float:
        # sin(90 - psi) is exactly 0 at 90 deg and exactly odd about it
        return math.sin(math.radians(90.0 - self.field_angle))


CALIBRATED_NPP = OrbitShape(eccentricity=0.26, semimajor=1.4, z_eff=3.9)


def _check_eccentricity(eps: ArrayLike) -> None:
    eps_arr = np.asarray(eps, dtype=float)
    if np.any(~np.isfinite(eps_arr)) or np.any(eps_arr < 0.0) or np.any(eps_arr > EPS_MAX):
        raise PhysicsDomainError(f"eccentricity must lie in [0, {EPS_MAX}], got {eps}")


def _scalar_or_array(value: np.ndarray) -> ArrayLike:
    return float(value) if np.ndim(value) == 0 else value


def eccentric_anomaly(theta: ArrayLike, eps: float) -> ArrayLike:
    """True anomaly -> eccentric anomaly, lifted continuously onto [0, 2*pi]"""
    _check_eccentricity(eps)
    theta = np.asarray(theta, dtype=float)
    half = 0.5 * theta
    E = 2.0 * np.arctan2(math.sqrt(1.0 - eps) * np.sin(half), math.sqrt(1.0 + eps) * np.cos(half))
    return _scalar_or_array(E)


def true_anomaly(E: ArrayLike, eps: float) -> ArrayLike:
    """Eccentric anomaly -> true anomaly on [0, 2*pi]"""
    _check_eccentricity(eps)
    E = np.asarray(E, dtype=float)
    half = 0.5 * E
    theta = 2.0 * np.arctan2(math.sqrt(1.0 + eps) * np.sin(half), math.sqrt(1.0 - eps) * np.cos(half))
    return _scalar_or_array(theta)


def kepler_time_fraction(theta: ArrayLike, eps: float) -> ArrayLike:
    """
    Fraction of the period t/T needed to sweep from perigee to theta

    Continuous and strictly increasing on [0, 2*pi); identical to the
    two-term arctan expression on (0, pi).

    Args:
        theta: True anomaly (radians) in [0, 2*pi)
        eps: Eccentricity in [0, 0.95]

    Returns:
        t/T in [0, 1)
    """
    E = np.asarray(eccentric_anomaly(theta, eps))
    mean_anomaly = E - eps * np.sin(E)
    return _scalar_or_array(mean_anomaly / TWO_PI)


def literal_time_fraction(theta: ArrayLike, eps: float) -> ArrayLike:
    """Two-term arctan form of t/T, valid on (0, pi) only"""
    _check_eccentricity(eps)
    theta = np.asarray(theta, dtype=float)
    first = 2.0 * np.arctan(math.sqrt((1.0 - eps) / (1.0 + eps)) * np.tan(0.5 * theta))
    second = eps * math.sqrt(1.0 - eps ** 2) * np.sin(theta) / (1.0 + eps * np.cos(theta))
    return _scalar_or_array((first - second) / TWO_PI)


def orbit_pdf(theta: ArrayLike, eps: float) -> ArrayLike:
    """
    Density of the electron position in theta, d(t/T)/d(theta)

    Largest at apogee (theta=pi), smallest at perigee (theta=0).
    """
    _check_eccentricity(eps)
    theta = np.asarray(theta, dtype=float)
    density = (1.0 - eps ** 2) ** 1.5 / (TWO_PI * (1.0 + eps * np.cos(theta)) ** 2)
    return _scalar_or_array(density)


def solve_kepler(mean_anomaly: ArrayLike, eps: float) -> ArrayLike:
    """
    Solve M = E - eps*sin(E) for E by safeguarded Newton iteration

    Each element keeps a bracket [lo, hi]; a Newton step that leaves it is
    replaced by bisection. Stops once every |dE| < 1e-12.

    Raises:
        ConvergenceError: No convergence within 50 iterations
    """
    _check_eccentricity(eps)
    M = np.asarray(mean_anomaly, dtype=float)
    lo = np.zeros_like(M)
    hi = np.full_like(M, TWO_PI)
    E = np.clip(M + 0.85 * eps * np.sign(np.sin(M)), lo, hi)

    for _ in range(NEWTON_MAX_ITER):
        f = E - eps * np.sin(E) - M
        lo = np.where(f < 0.0, E, lo)
        hi = np.where(f > 0.0, E, hi)
        E_next = E - f / (1.0 - eps * np.cos(E))
        outside = (E_next < lo) | (E_next > hi)
        E_next = np.where(outside, 0.5 * (lo + hi), E_next)
        step = np.max(np.abs(E_next - E)) if E.size else 0.0
        E = E_next
        if step < NEWTON_TOLERANCE:
            return _scalar_or_array(E)

    raise ConvergenceError(
        f"Kepler solver did not converge in {NEWTON_MAX_ITER} iterations (eps={eps}, last step {step:.3e})"
    )


def sample_anomaly(eps: float, uniform_draw: ArrayLike) -> ArrayLike:
    """
    Inverse-transform sample of the true anomaly

    Args:
        eps: Eccentricity
        uniform_draw: s in [0, 1), scalar or array

    Returns:
        theta with kepler_time_fraction(theta) == s
    """
    s = np.asarray(uniform_draw, dtype=float)
    if np.any(s < 0.0) or np.any(s >= 1.0):
        raise PhysicsDomainError("uniform draws must lie in [0, 1)")
    E = solve_kepler(TWO_PI * s, eps)
    return true_anomaly(E, eps)


def radius_ratio(theta: ArrayLike, eps: float) -> ArrayLike:
    """Conic radius in units of the semimajor axis, (1 - eps^2) / (1 + eps cos theta)"""
    theta = np.asarray(theta, dtype=float)
    return _scalar_or_array((1.0 - eps ** 2) / (1.0 + eps * np.cos(theta)))


def radius(theta: ArrayLike, shape: OrbitShape) -> ArrayLike:
    """Focal distance of the electron at theta (A)"""
    return _scalar_or_array(np.asarray(radius_ratio(theta, shape.eccentricity)) * shape.semimajor)


def mean_cos_anomaly(eps: float) -> float:
    """Time average of cos(theta) over one orbit"""
    _check_eccentricity(eps)
    return -eps


def field_eccentricity(shape: OrbitShape, pert: FieldPerturbation) -> Tuple[float, bool]:
    """
    Eccentricity under an applied field

    Returns:
        (eps', clamped) where clamped reports that [0, 0.95] cut the value
    """
    raw = shape.eccentricity + pert.coupling * pert.field_magnitude * pert.cos_psi
    eps = min(max(raw, 0.0), EPS_MAX)
    return eps, eps != raw


def apply_field(shape: OrbitShape, pert: FieldPerturbation) -> OrbitShape:
    """Deform the ellipse: only the eccentricity moves, u and Z are kept"""
    eps, clamped = field_eccentricity(shape, pert)
    if clamped:
        logger.warning(f"Field-perturbed eccentricity clamped to {eps}")
    if eps == shape.eccentricity:
        return shape
    return shape.model_copy(update={'eccentricity': eps})
