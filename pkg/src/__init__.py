# Bridgecraft - diffusion bridge sampling toolkit
__version__ = "0.1.0"
