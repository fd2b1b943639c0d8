"""Simulation and analysis toolkit for dispersively read out Cooper-pair box qubits."""

__version__ = "0.1.0"
