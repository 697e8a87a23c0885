"""Ordered upwind method for anisotropic static HJB problems on triangle meshes."""
__version__ = "0.1.0"
