from .core import Rng, Vec3  # noqa: F401
__version__ = '0.1.0'
