"""skysplat: satellite multi-view geometric reconstruction toolkit.

RPC camera modeling, plane-sweep height estimation, transient masking,
Gaussian splat rendering, multi-view consistency aggregation, and DSM
evaluation, with a synthetic oracle harness for end-to-end testing.
"""

__version__ = "0.1.0"

from .errors import SkySplatError  # noqa: F401
from .raster import RasterF32, load_raster, save_raster  # noqa: F401
from .rpc import (  # noqa: F401
    GeoPoint,
    PixelCoord,
    RpcModel,
    fit_pinhole,
    load_rpc,
    localize,
    project,
    save_rpc,
)
