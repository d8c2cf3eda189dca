"""Thermoacoustic tomography in media with memory-kernel attenuation.

Forward modelling of the attenuated wave equation on a Cartesian box,
boundary traces on a circle, and reconstruction of the initial pressure by
a time-reversal Neumann series.
"""
from .geometry import (DomainDisk, GeometryError, Grid, SpeedConditionError, TimeBounds,
                       boundary_sampling, build_grid, check_margin, grid_for_disk, make_disk,
                       uniqueness_times, wall_margin)
from .medium import (CoefficientSpec, Medium, MediumError, MemoryKernel, Phantom, PhantomError,
                     check_attenuation_condition, check_speed_condition, exponential_kernel,
                     make_medium, make_phantom, random_phantom)
from .memory_ops import (MemoryAccumulator, convolve_adjoint, convolve_forward, exp_memory_step,
                         psi_exponential, psi_tabulated, quadratic_form)
from .forward import (BlowUpError, BoundaryTrace, EnergyTrace, SolverError, energy,
                      integrate_trace, solve_forward, solve_integrated_forward, trace_h1_norm)
from .reconstruct import (DivergenceError, HarmonicExtension, ReconstructionError,
                          ReconstructionReport, apply_A, apply_K, contraction_estimate,
                          energy_partition, harmonic_extension, measure, neumann_reconstruct,
                          solve_time_reversal, weighted_norm)

__all__ = ["DomainDisk", "GeometryError", "Grid", "SpeedConditionError", "TimeBounds",
           "boundary_sampling", "build_grid", "check_margin", "grid_for_disk", "make_disk",
           "uniqueness_times", "wall_margin", "CoefficientSpec", "Medium", "MediumError",
           "MemoryKernel", "Phantom", "PhantomError", "check_attenuation_condition",
           "check_speed_condition", "exponential_kernel", "make_medium", "make_phantom",
           "random_phantom", "MemoryAccumulator", "convolve_adjoint", "convolve_forward",
           "exp_memory_step", "psi_exponential", "psi_tabulated", "quadratic_form",
           "BlowUpError", "BoundaryTrace", "EnergyTrace", "SolverError", "energy",
           "integrate_trace", "solve_forward", "solve_integrated_forward", "trace_h1_norm",
           "DivergenceError", "HarmonicExtension", "ReconstructionError", "ReconstructionReport",
           "apply_A", "apply_K", "contraction_estimate", "energy_partition",
           "harmonic_extension", "measure", "neumann_reconstruct", "solve_time_reversal",
           "weighted_norm"]

__version__ = "0.1.0"
