"""Objectness-guided glimpse selection and open-set tile search for very large images."""

from .geometry import BBox, GistGeometry, Scene, SceneObject, gist_to_vhr, glimpse_gist_dim, iou, scale_factor
from .policies import GlimpseSet, PolicyConfig, run_policy, unet_policy

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "GistGeometry",
    "GlimpseSet",
    "PolicyConfig",
    "Scene",
    "SceneObject",
    "gist_to_vhr",
    "glimpse_gist_dim",
    "iou",
    "run_policy",
    "scale_factor",
    "unet_policy",
]
