"""Mesh-bound Gaussian splatting of URDF robot arms with a learned kinematic residual."""

__version__ = "0.1.0"
