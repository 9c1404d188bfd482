"""Space-time finite element methods for 1D periodic multisymplectic PDEs."""

__version__ = "0.1.0"
