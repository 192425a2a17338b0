"""Image segmentation by virtual carrier drift and diffusion"""

__version__ = "0.1.0"
