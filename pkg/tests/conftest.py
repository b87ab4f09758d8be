import numpy as np
import pytest

from skysplat import geo
from skysplat import synthetic as sy

_DEG = np.pi / 180.0


def oracle_volume(extent_m: float, hrange=(0.0, 30.0), margin_m: float = 30.0):
    """Geodetic box covering an extent (meters) around the standard scene origin."""
    half = extent_m / 2.0 + margin_m
    dlat = half / geo.EARTH_RADIUS / _DEG
    dlon = half / (geo.EARTH_RADIUS * np.cos(sy.SCENE_LAT0 * _DEG)) / _DEG
    return ((sy.SCENE_LAT0 - dlat, sy.SCENE_LAT0 + dlat),
            (sy.SCENE_LON0 - dlon, sy.SCENE_LON0 + dlon),
            hrange)


@pytest.fixture(scope="session")
def oracle_pair():
    """(exact camera, fitted RPC) over a 76.8 m scene at standard geometry."""
    cam = sy.make_view_camera(10.0, 30.0, 76.8, 0.3, 15.0,
                              (sy.SCENE_LAT0, sy.SCENE_LON0, 0.0))
    rpc = sy.fit_rpc_oracle(cam, oracle_volume(76.8))
    return cam, rpc


@pytest.fixture(scope="session")
def flat_bundle():
    spec = sy.SceneSpec(seed=11, extent=19.2, gsd=0.3,
                        relief={"kind": "flat", "height": 10.0}, n_views=3)
    return sy.generate(spec)


@pytest.fixture(scope="session")
def buildings_bundle():
    spec = sy.SceneSpec(seed=5, extent=19.2, gsd=0.3,
                        relief={"kind": "buildings", "count": 3,
                                "h_min": 8.0, "h_max": 18.0}, n_views=3)
    return sy.generate(spec)
