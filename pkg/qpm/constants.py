"""
CODATA physical constants used by the photon-transport engine.
"""
from pydantic import BaseModel, ConfigDict
from scipy import constants as codata

# Unit conversions
ANGSTROM = 1e-10
NANOMETER = 1e-9
MICROMETER = 1e-6
ANGSTROM2_TO_CM2 = 1e-16
V_PER_UM_TO_V_PER_M = 1e6
PM_PER_V_TO_M_PER_V = 1e-12


class PhysicalConstants(BaseModel):
    """Planck constant, electron mass, elementary charge, Coulomb constant, light speed (SI)"""

    model_config = ConfigDict(frozen=True)

    h: float = codata.h
    m_e: float = codata.m_e
    e: float = codata.e
    K: float = 1.0 / (4.0 * codata.pi * codata.epsilon_0)
    c0: float = codata.c


CODATA = PhysicalConstants()
