"""Mutual coupling in linear dipole arrays.

Thin-wire method-of-moments reference solver, a network that regresses the
factored Green's matrix, an LSTM two-port impedance model built on it, and
large-array synthesis from two-element predictions.
"""
__version__ = "0.1.0"

from .errors import (ConstraintError, ConversionError, DomainError,
                     ReductionError, ShapeError, SolverError, TrainingError)
from .geometry import (ArrayGeometry, DipoleSpec, GreenKind, GreenMatrix,
                       green_matrix, half_wave_dipole, pack_upper, unpack_upper)
from .mom import (PortImpedance, assemble_impedance, frequency_sweep,
                  port_reduce, solve_ports, z_to_s)

__all__ = [
    "ArrayGeometry", "ConstraintError", "ConversionError", "DipoleSpec",
    "DomainError", "GreenKind", "GreenMatrix", "PortImpedance",
    "ReductionError", "ShapeError", "SolverError", "TrainingError",
    "assemble_impedance", "frequency_sweep", "green_matrix",
    "half_wave_dipole", "pack_upper", "port_reduce", "solve_ports",
    "unpack_upper", "z_to_s",
]
