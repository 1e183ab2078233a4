"""Radial Euler-Poisson evolution and stability experiments."""
from .experiments import (HydroConfig, drift_bound, energy_tolerance, Perturbation, Setup, Trajectory, eigenmode_cells, evolve,
                          make_initial, make_setup, run, stability_experiment)
from .scheme import Grid, Scheme, SchemeOptions

__all__ = [
    "Grid", "HydroConfig", "Perturbation", "Scheme", "SchemeOptions", "Setup", "Trajectory",
    "drift_bound", "eigenmode_cells", "energy_tolerance", "evolve", "make_initial", "make_setup", "run", "stability_experiment",
]
