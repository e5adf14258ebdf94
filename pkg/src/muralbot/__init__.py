"""Mural-painting cable robot toolkit: simulation, control, calibration,
artwork compilation, session coordination, and an operator console server.
"""

__version__ = "0.1.0"
