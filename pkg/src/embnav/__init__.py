"""embnav: desk-scale embodied navigation with frozen visual backbones."""

__version__ = "0.1.0"
