"""Geodetic helpers on a spherical earth.

Two local frames are used throughout the package:

* the *tangent* frame: a true East-North-Up frame anchored on the sphere,
  built from ECEF vectors.  The synthetic harness places its exact cameras
  and world geometry in this frame, so earth curvature is represented
  faithfully.
* the *flat* frame: an equirectangular approximation (east/north linear in
  lon/lat, up = ellipsoidal height).  Pinhole fitting and DSM gridding use
  this frame; its deviation from the tangent frame is sub-millimeter at a
  few-hundred-meter patch scale and grows quadratically with distance.
"""

import numpy as np

EARTH_RADIUS = 6378137.0  # meters, spherical approximation

_DEG = np.pi / 180.0


def geodetic_to_flat(lat, lon, hei, origin):
    """Equirectangular local coordinates (east, north, up) in meters.

    origin: (lat0, lon0, h0) in degrees/meters.
    """
    lat0, lon0, h0 = origin
    east = EARTH_RADIUS * np.cos(lat0 * _DEG) * (np.asarray(lon) - lon0) * _DEG
    north = EARTH_RADIUS * (np.asarray(lat) - lat0) * _DEG
    up = np.asarray(hei) - h0
    return east, north, up


def flat_to_geodetic(east, north, up, origin):
    lat0, lon0, h0 = origin
    lat = lat0 + np.asarray(north) / EARTH_RADIUS / _DEG
    lon = lon0 + np.asarray(east) / (EARTH_RADIUS * np.cos(lat0 * _DEG)) / _DEG
    hei = np.asarray(up) + h0
    return lat, lon, hei


def _ecef(lat, lon, hei):
    r = EARTH_RADIUS + np.asarray(hei)
    clat = np.cos(lat * _DEG)
    return np.stack(
        [r * clat * np.cos(lon * _DEG), r * clat * np.sin(lon * _DEG), r * np.sin(lat * _DEG)],
        axis=-1,
    )


def tangent_basis(lat0, lon0):
    """Rows: east, north, up unit vectors of the tangent frame at (lat0, lon0)."""
    sphi, cphi = np.sin(lat0 * _DEG), np.cos(lat0 * _DEG)
    slam, clam = np.sin(lon0 * _DEG), np.cos(lon0 * _DEG)
    east = np.array([-slam, clam, 0.0])
    north = np.array([-sphi * clam, -sphi * slam, cphi])
    up = np.array([cphi * clam, cphi * slam, sphi])
    return np.stack([east, north, up])


def geodetic_to_tangent(lat, lon, hei, origin):
    """True ENU coordinates (meters) of geodetic points in the tangent frame
    anchored at origin = (lat0, lon0, h0)."""
    lat0, lon0, h0 = origin
    basis = tangent_basis(lat0, lon0)
    p = _ecef(lat, lon, hei) - _ecef(lat0, lon0, h0)
    return p @ basis.T


def tangent_to_geodetic(xyz, origin):
    """Inverse of geodetic_to_tangent; xyz has shape (..., 3)."""
    lat0, lon0, h0 = origin
    basis = tangent_basis(lat0, lon0)
    p = np.asarray(xyz) @ basis + _ecef(lat0, lon0, h0)
    r = np.linalg.norm(p, axis=-1)
    lat = np.arcsin(np.clip(p[..., 2] / r, -1.0, 1.0)) / _DEG
    lon = np.arctan2(p[..., 1], p[..., 0]) / _DEG
    return lat, lon, r - EARTH_RADIUS
