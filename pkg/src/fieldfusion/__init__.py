"""Registration and blending of independently built radiance fields."""
from .blending import BlendConfig, RegisteredFieldSet, blend_render
from .fields import RadianceField
from .geometry import Se3Pose, Sim3Transform
from .registration import register_fields
from .renderer import Camera, render

__version__ = "0.1.0"

__all__ = [
    "BlendConfig",
    "Camera",
    "RadianceField",
    "RegisteredFieldSet",
    "Se3Pose",
    "Sim3Transform",
    "blend_render",
    "register_fields",
    "render",
]
