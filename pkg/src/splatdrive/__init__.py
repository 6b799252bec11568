"""splatdrive: desk-scale differentiable Gaussian splatting for driving scenes."""

__version__ = "0.1.0"
