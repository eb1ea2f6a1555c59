"""
NPP crystal geometry.
Holds the monoclinic unit cell and molecular orientation, and builds the
stack of molecular interaction layers a photon crosses along the b axis.
"""
import logging
import math
from typing import Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from qpm.constants import ANGSTROM2_TO_CM2, MICROMETER
from qpm.exceptions import PhysicsDomainError

logger = logging.getLogger(__name__)

SUPPORTED_AXIS = 'b'

# 1 um = 1e4 Angstrom
ANGSTROM_PER_UM = 1e4

# Guards floor() against round-off when the length is an exact multiple of b
_FLOOR_SLACK = 1e-9


class UnitCell(BaseModel):
    """Monoclinic unit cell (lengths in Angstrom, beta in degrees)"""

    model_config = ConfigDict(frozen=True)

    a: float = Field(gt=0)
    b: float = Field(gt=0)
    c: float = Field(gt=0)
    beta: float = Field(gt=0, lt=180)
    molecules_per_cell: int = Field(default=2, ge=1)
    transparency_window: Tuple[float, float] = (0.5, 2.0)

    @field_validator('transparency_window')
    @classmethod
    def _window_ordered(cls, window: Tuple[float, float]) -> Tuple[float, float]:
        if not 0 < window[0] < window[1]:
            raise ValueError(f"transparency window must satisfy 0 < min < max, got {window}")
        return window

    @property
    def beta_rad(self) -> float:
        """Beta in radians; the one place degrees become radians for the cell"""
        return math.radians(self.beta)

    def transmits(self, wavelength_nm: float) -> bool:
        """True when the wavelength lies inside the transparency window"""
        wavelength_um = wavelength_nm / 1000.0
        return self.transparency_window[0] <= wavelength_um <= self.transparency_window[1]


class MolecularFrame(BaseModel):
    """Orientation of the NPP molecule inside the cell (degrees)"""

    model_config = ConfigDict(frozen=True)

    ct_axis_angle: float = Field(default=58.6, ge=0, le=90)
    mean_plane_angle: float = Field(default=11.0, ge=0, le=90)


class LayerStack(BaseModel):
    """Evenly spaced molecular layers along the propagation axis"""

    model_config = ConfigDict(frozen=True)

    crystal_length: float = Field(gt=0)  # um
    layer_spacing: float = Field(gt=0)   # Angstrom
    layer_count: int = Field(ge=1)

    @model_validator(mode='after')
    def _consistent(self) -> 'LayerStack':
        total = self.layer_count * self.layer_spacing
        expected = self.crystal_length * ANGSTROM_PER_UM
        if abs(total - expected) > 1e-9 * expected:
            raise ValueError("layer_count * layer_spacing must equal crystal_length")
        return self

    @property
    def length_m(self) -> float:
        return self.crystal_length * MICROMETER


NPP_CELL = UnitCell(a=5.261, b=14.908, c=7.185, beta=105.18, molecules_per_cell=2,
                    transparency_window=(0.5, 2.0))
NPP_FRAME = MolecularFrame(ct_axis_angle=58.6, mean_plane_angle=11.0)


def build_stack(cell: UnitCell, length: float, axis: str = SUPPORTED_AXIS) -> LayerStack:
    """
    Build the layer stack for a crystal of the given thickness

    Each molecule is one interaction layer: the count is the number of
    whole unit cells along b times the molecules per cell, and the layers
    are spread evenly over the full length.

    Args:
        cell: Unit cell
        length: Crystal length along the propagation axis (um)
        axis: Propagation axis tag, only 'b' is supported

    Returns:
        LayerStack

    Raises:
        PhysicsDomainError: Unsupported axis or crystal thinner than one cell
    """
    if axis != SUPPORTED_AXIS:
        raise PhysicsDomainError(f"unsupported propagation axis '{axis}': only '{SUPPORTED_AXIS}' is modeled")
    if not length > 0:
        raise PhysicsDomainError(f"crystal length must be positive, got {length} um")

    length_angstrom = length * ANGSTROM_PER_UM
    cells = math.floor(length_angstrom / cell.b + _FLOOR_SLACK)
    if cells < 1:
        raise PhysicsDomainError(
            f"crystal too thin: {length_angstrom:.3f} A is less than one unit cell ({cell.b} A)"
        )

    layer_count = cells * cell.molecules_per_cell
    stack = LayerStack(
        crystal_length=length,
        layer_spacing=length_angstrom / layer_count,
        layer_count=layer_count,
    )
    logger.debug(f"Built stack: {layer_count} layers over {length} um (spacing {stack.layer_spacing:.4f} A)")
    return stack


def molecule_cross_section(cell: UnitCell) -> float:
    """Per-molecule cross-section a*c*sin(beta) seen by a beam along b (A^2)"""
    return cell.a * cell.c * math.sin(cell.beta_rad)


def cell_volume(cell: UnitCell) -> float:
    """Monoclinic cell volume a*b*c*sin(beta) in A^3"""
    return molecule_cross_section(cell) * cell.b


def molecular_density(cell: UnitCell) -> float:
    """Molecules per cm^3"""
    volume_cm3 = cell_volume(cell) * ANGSTROM2_TO_CM2 * 1e-8
    return cell.molecules_per_cell / volume_cm3


def ct_axis_components(frame: MolecularFrame) -> Tuple[float, float]:
    """
    Unit charge-transfer axis projected on the dielectric frame

    Returns:
        (component along Y = b axis, component along transverse X)
    """
    angle = math.radians(frame.ct_axis_angle)
    return math.cos(angle), math.sin(angle)


def field_angle_to_ct(frame: MolecularFrame, lab_angle_from_b: float) -> float:
    """
    Angle psi between an in-plane field and the CT axis

    Args:
        frame: Molecular orientation
        lab_angle_from_b: Field direction measured from the b axis (degrees)

    Returns:
        psi folded into [0, 180] degrees
    """
    psi = abs(lab_angle_from_b - frame.ct_axis_angle) % 360.0
    if psi > 180.0:
        psi = 360.0 - psi
    return psi
