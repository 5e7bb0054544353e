"""ctx2im: context-aware layout-to-image synthesis on a 32x32 lattice."""

__version__ = "0.1.0"
