import numpy as np
import pytest

from smaglab.fem import MixedSpace, assemble_constant_forms
from smaglab.mesh import AnnulusSpec, ChannelSpec, Marker, build_annulus_mesh, build_channel_mesh

WALLS = (Marker.BottomWall, Marker.TopWall)
COUETTE_BC = {Marker.BottomWall: (0.0, 0.0), Marker.TopWall: (1.0, 0.0)}


def couette(x, z):
    return z, np.zeros_like(z)


@pytest.fixture(scope="session")
def channel():
    """10 x 10 periodic unit channel with walls at z = 0 and z = 1."""
    space = MixedSpace(build_channel_mesh(ChannelSpec(L=1.0, nz=10, nx=10)), WALLS)
    return space, assemble_constant_forms(space)


@pytest.fixture(scope="session")
def annulus():
    space = MixedSpace(build_annulus_mesh(AnnulusSpec(m=24, n=12)), [Marker.OuterCircle, Marker.InnerCircle])
    return space, assemble_constant_forms(space)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
