"""2D finite-element laboratory for dissipation in NSE and the Smagorinsky model."""

from .fem import FlowState, MixedSpace, assemble_constant_forms
from .mesh import AnnulusSpec, ChannelSpec, Marker, Mesh, build_annulus_mesh, build_channel_mesh
from .solver import ModelParams, TimeSteppingConfig, run_transient, solve_stokes

__version__ = "0.1.0"

__all__ = [
    "AnnulusSpec",
    "ChannelSpec",
    "FlowState",
    "Marker",
    "Mesh",
    "MixedSpace",
    "ModelParams",
    "TimeSteppingConfig",
    "assemble_constant_forms",
    "build_annulus_mesh",
    "build_channel_mesh",
    "run_transient",
    "solve_stokes",
]
