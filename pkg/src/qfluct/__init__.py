"""Quantum-jump simulation of a driven qubit and trajectory thermodynamics."""

from .bath import BathSpec, RatePoint, effective_temperature, nbar, rates_for, thermal_population
from .drive import DriveKind, DriveProtocol, Frame
from .engine import Outcome, SimConfig, TrajectoryRecord, integrate_lindblad, run_trajectory

__version__ = "0.1.0"
