"""
QPM: quantum photon model of the transverse electro-optic effect in NPP crystals.
"""
__version__ = "1.0.0"
