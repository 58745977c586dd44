"""Total HSIC sensitivity indices with augmented kernels.

Streaming HSIC estimation in linear memory, benchmark models (Ishigami,
correlated portfolio, cholera ODE), calibration, and a reproduction CLI.
"""

__version__ = "0.1.0"
