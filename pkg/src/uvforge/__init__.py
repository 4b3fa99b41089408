"""uvforge: differentiable rendering, morphable-model fitting and a render-in-the-loop UV map GAN."""
from uvforge._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
