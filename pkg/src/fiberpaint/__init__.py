"""fiberpaint: uncertainty-aware inpainting of 3D fiber-orientation fields
and localized wiring-complexity maps."""

__version__ = "0.1.0"
