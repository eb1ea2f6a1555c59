"""
Hueckel molecular-orbital solver for conjugated pi systems.

Energies follow E = alpha + x*beta with beta < 0, reported as x in units of
|beta| relative to alpha and sorted from most bonding to most antibonding.
A positive alpha shift h marks an electronegative site: it lowers that
site's energy and pulls pi density towards it.
"""
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from qpm.exceptions import ConfigError, PhysicsDomainError

logger = logging.getLogger(__name__)

DEGENERACY_TOLERANCE = 1e-8


class PiSystem(BaseModel):
    """Conjugated framework: atoms, bonds, heteroatom parameters and pi electrons"""

    model_config = ConfigDict(frozen=True)

    atom_count: int = Field(ge=1)
    bonds: List[Tuple[int, int]]
    electron_count: int = Field(ge=0)
    alpha_shift: Dict[int, float] = Field(default_factory=dict)
    bond_factor: Dict[Tuple[int, int], float] = Field(default_factory=dict)
    labels: Optional[List[str]] = None

    @model_validator(mode='after')
    def _indices_in_range(self) -> 'PiSystem':
        n = self.atom_count
        for i, j in self.bonds:
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise ValueError(f"bond ({i}, {j}) invalid for {n} atoms")
        for atom in self.alpha_shift:
            if not 0 <= atom < n:
                raise ValueError(f"alpha_shift atom {atom} out of range")
        bond_set = {frozenset(b) for b in self.bonds}
        for pair in self.bond_factor:
            if frozenset(pair) not in bond_set:
                raise ValueError(f"bond_factor given for non-bond {pair}")
        if self.electron_count > 2 * n:
            raise ValueError(f"electron_count {self.electron_count} exceeds 2 * atom_count")
        if self.labels is not None and len(self.labels) != n:
            raise ValueError("labels must name every atom")
        return self

    def hamiltonian(self) -> np.ndarray:
        """Hueckel matrix in units of beta (alpha = 0): diagonal h_i, off-diagonal k_ij"""
        H = np.zeros((self.atom_count, self.atom_count))
        for atom, h in self.alpha_shift.items():
            H[atom, atom] = h
        for i, j in self.bonds:
            k = self.bond_factor.get((i, j), self.bond_factor.get((j, i), 1.0))
            H[i, j] = H[j, i] = k
        return H


class MOResult(BaseModel):
    """Orbital energies (|beta| units, ascending), coefficients (orbital x atom) and densities"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    energies: np.ndarray
    coefficients: np.ndarray
    densities: np.ndarray
    electron_count: int

    @property
    def occupied(self) -> int:
        return self.electron_count // 2


def is_connected(system: PiSystem) -> bool:
    if system.atom_count == 1:
        return True
    if not system.bonds:
        return False
    rows, cols = zip(*system.bonds)
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(system.atom_count, system.atom_count))
    count, _ = connected_components(graph, directed=False)
    return count == 1


def solve(system: PiSystem) -> MOResult:
    """
    Diagonalize the Hueckel matrix and fill the lowest orbitals pairwise

    Args:
        system: pi system

    Returns:
        MOResult with q_i = 2 * sum over occupied |C_oi|^2

    Raises:
        PhysicsDomainError: Disconnected framework or odd electron count
    """
    if not is_connected(system):
        raise PhysicsDomainError("pi system is disconnected")
    if system.electron_count % 2:
        raise PhysicsDomainError(f"odd electron count {system.electron_count}: closed-shell filling only")

    # E = alpha + x beta with beta < 0, so energy order is ascending in -H
    energies, vectors = np.linalg.eigh(-system.hamiltonian())
    coefficients = vectors.T.copy()
    for row in coefficients:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0

    occupied = system.electron_count // 2
    densities = 2.0 * np.sum(coefficients[:occupied] ** 2, axis=0)
    logger.debug(f"Solved {system.atom_count}-atom pi system, {occupied} doubly occupied orbitals")
    return MOResult(energies=energies, coefficients=coefficients, densities=densities,
                    electron_count=system.electron_count)


def density_asymmetry(result: MOResult, acceptor_atom: int, donor_atom: int) -> float:
    """q_acceptor - q_donor"""
    n = result.densities.size
    for atom in (acceptor_atom, donor_atom):
        if not 0 <= atom < n:
            raise PhysicsDomainError(f"atom index {atom} out of range for {n} atoms")
    return float(result.densities[acceptor_atom] - result.densities[donor_atom])


def symmetrized_weights(result: MOResult) -> np.ndarray:
    """|C|^2 per orbital, averaged over each degenerate level"""
    weights = result.coefficients ** 2
    symmetrized = weights.copy()
    energies = result.energies
    start = 0
    while start < energies.size:
        stop = start + 1
        while stop < energies.size and abs(energies[stop] - energies[start]) < DEGENERACY_TOLERANCE:
            stop += 1
        symmetrized[start:stop] = weights[start:stop].mean(axis=0)
        start = stop
    return symmetrized


def homo_lumo_gap(result: MOResult) -> float:
    """LUMO - HOMO in units of |beta|"""
    homo = result.occupied - 1
    if homo < 0 or result.occupied >= result.energies.size:
        raise PhysicsDomainError("HOMO-LUMO gap undefined: no occupied or no virtual orbital")
    return float(result.energies[homo + 1] - result.energies[homo])


def ring(n: int, electron_count: Optional[int] = None, alpha_shift: Optional[Dict[int, float]] = None) -> PiSystem:
    """n-membered ring, one electron per atom unless given"""
    if n < 3:
        raise PhysicsDomainError(f"a ring needs at least 3 atoms, got {n}")
    bonds = [(i, (i + 1) % n) for i in range(n)]
    return PiSystem(atom_count=n, bonds=bonds, electron_count=n if electron_count is None else electron_count,
                    alpha_shift=alpha_shift or {})


def load_pi_system(path: str) -> PiSystem:
    """
    Read a pi system description from JSON

    Keys: atom_count, bonds ([[i, j], ...]), electron_count, optional
    alpha_shift ({"atom": h}), bond_factor ({"i-j": k}) and labels.

    Raises:
        ConfigError: Missing file or invalid description
    """
    system_path = Path(path)
    if not system_path.is_file():
        raise ConfigError(f"pi system file not found: {path}", key_path='material.pi_system')
    try:
        with open(system_path, 'r', encoding='utf-8') as f:
            data = json.load(f)
        bond_factor = {}
        for key, value in data.get('bond_factor', {}).items():
            i, j = key.split('-')
            bond_factor[(int(i), int(j))] = float(value)
        system = PiSystem(
            atom_count=data['atom_count'],
            bonds=[tuple(bond) for bond in data['bonds']],
            electron_count=data['electron_count'],
            alpha_shift={int(atom): float(h) for atom, h in data.get('alpha_shift', {}).items()},
            bond_factor=bond_factor,
            labels=data.get('labels'),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, ValidationError) as e:
        raise ConfigError(f"invalid pi system description: {e}", key_path='material.pi_system') from e
    logger.info(f"Loaded {system.atom_count}-atom pi system from {system_path}")
    return system
