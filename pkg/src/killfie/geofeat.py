"""Location-based features: terrain relief, water proximity, rail and road distance."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._util import derive_seed
from .corpus import GeoPoint
from .geoproviders import (
    METERS_PER_DEGREE,
    DecodeError,
    FeatureMissing,
    MapTile,
    ProviderError,
    Providers,
    get_elevation,
    get_map_tile,
    nearest_place_distance,
)

LOCATION_COLUMNS = (
    "elev_here",
    "max_elev_nearby",
    "max_drop_from_here",
    "max_pairwise_range",
    "min_water_dist_px",
    "water_fraction",
    "rail_dist_m",
    "road_dist_m",
)
ELEVATION_COLUMNS = LOCATION_COLUMNS[:4]
WATER_COLUMNS = LOCATION_COLUMNS[4:6]
ROAD_RAIL_COLUMNS = LOCATION_COLUMNS[6:8]

DEFAULT_WATER_PALETTE = ((170, 218, 255),)


@dataclass(frozen=True)
class GeoConfig:
    n_near: int = 10
    r_near_m: float = 1000.0
    n_far: int = 5
    r_far_m: float = 5000.0
    zoom: int = 13
    tile_size: tuple[int, int] = (500, 500)
    water_palette: tuple[tuple[int, int, int], ...] = DEFAULT_WATER_PALETTE
    water_tol: int = 12
    search_radius_m: float = 10_000.0

    @classmethod
    def from_dict(cls, d: dict) -> "GeoConfig":
        d = dict(d)
        if "tile_size" in d:
            d["tile_size"] = tuple(d["tile_size"])
        if "water_palette" in d:
            d["water_palette"] = tuple(tuple(int(v) for v in c) for c in d["water_palette"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "n_near": self.n_near, "r_near_m": self.r_near_m, "n_far": self.n_far, "r_far_m": self.r_far_m,
            "zoom": self.zoom, "tile_size": list(self.tile_size),
            "water_palette": [list(c) for c in self.water_palette], "water_tol": self.water_tol,
            "search_radius_m": self.search_radius_m,
        }


def sample_disk(center: GeoPoint, radius_m: float, n: int, seed: int) -> list[GeoPoint]:
    """``n`` points uniform over a disk of ``radius_m`` around ``center``.

    Bearing ~ U[0, 2pi), distance = radius * sqrt(U[0, 1)); offsets use the
    local equirectangular approximation, so polar centers are refused.
    """
    if radius_m <= 0:
        raise ValueError("radius must be positive")
    if n < 1:
        raise ValueError("need at least one sample")
    if abs(center.lat) > 89.0:
        raise ValueError(f"latitude {center.lat} too close to a pole for disk sampling")
    rng = np.random.default_rng(seed & (2**64 - 1))
    theta = rng.random(n) * 2.0 * math.pi
    dist = radius_m * np.sqrt(rng.random(n))
    dlat = dist * np.cos(theta) / METERS_PER_DEGREE
    dlon = dist * np.sin(theta) / (METERS_PER_DEGREE * math.cos(math.radians(center.lat)))
    return [GeoPoint(center.lat + a, center.lon + b) for a, b in zip(dlat, dlon)]


@dataclass(frozen=True)
class ElevationFeatures:
    elev_here: float
    max_elev_nearby: float
    max_drop_from_here: float
    max_pairwise_range: float


def elevation_sample_seeds(seed: int) -> tuple[int, int]:
    """Seeds of the near-ring and far-ring samples for a location seed."""
    return derive_seed(seed, "near"), derive_seed(seed, "far")


def elevation_features(point: GeoPoint, providers: Providers, cfg: GeoConfig = GeoConfig(),
                       seed: int = 0) -> tuple[ElevationFeatures, tuple[bool, bool, bool, bool]]:
    """Elevation here, max over far samples, max drop and range over near samples.

    Returns the features and a per-slot missing mask; a failed lookup makes
    every slot that depends on it NaN.
    """
    near_seed, far_seed = elevation_sample_seeds(seed)
    near = sample_disk(point, cfg.r_near_m, cfg.n_near, near_seed)
    far = sample_disk(point, cfg.r_far_m, cfg.n_far, far_seed)

    def lookup(p: GeoPoint) -> float | None:
        if providers.elevation is None:
            return None
        try:
            return get_elevation(providers.elevation, providers.cache, p, providers.retry)
        except (FeatureMissing, DecodeError, ProviderError):
            return None

    here = lookup(point)
    near_v = [lookup(p) for p in near]
    far_v = [lookup(p) for p in far]
    near_ok = all(v is not None for v in near_v)
    far_ok = all(v is not None for v in far_v)
    nan = math.nan
    feats = ElevationFeatures(
        elev_here=here if here is not None else nan,
        max_elev_nearby=max(far_v) if far_ok else nan,
        max_drop_from_here=max(here - v for v in near_v) if (near_ok and here is not None) else nan,
        max_pairwise_range=(max(near_v) - min(near_v)) if near_ok else nan,
    )
    missing = (here is None, not far_ok, not (near_ok and here is not None), not near_ok)
    return feats, missing


def segment_water(tile: MapTile | np.ndarray, palette=DEFAULT_WATER_PALETTE, tol: int = 12) -> np.ndarray:
    """True where a pixel is within ``tol`` (per channel) of a palette color."""
    if len(palette) == 0:
        raise ValueError("water palette is empty")
    pixels = tile.pixels if isinstance(tile, MapTile) else np.asarray(tile)
    px = pixels.astype(np.int16)
    mask = np.zeros(px.shape[:2], dtype=bool)
    for color in palette:
        diff = np.abs(px - np.asarray(color, dtype=np.int16)).max(axis=2)
        mask |= diff <= tol
    return mask


@dataclass(frozen=True)
class WaterFeatures:
    min_water_dist_px: float
    water_fraction: float


def no_water_sentinel(width: int, height: int) -> float:
    return float(math.ceil(math.hypot(width, height)))


def water_features(mask: np.ndarray, center: tuple[int, int] | None = None) -> WaterFeatures:
    """Exact Euclidean pixel distance from ``center`` (x, y) to the nearest
    water pixel, and the water pixel fraction."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    cx, cy = center if center is not None else (w // 2, h // 2)
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        return WaterFeatures(no_water_sentinel(w, h), 0.0)
    d2 = (cols.astype(np.int64) - cx) ** 2 + (rows.astype(np.int64) - cy) ** 2
    return WaterFeatures(math.sqrt(int(d2.min())), rows.size / mask.size)


@dataclass(frozen=True)
class LocationFeatureBlock:
    values: tuple[float, ...]
    missing: tuple[bool, ...]

    def __post_init__(self):
        if len(self.values) != len(LOCATION_COLUMNS) or len(self.missing) != len(LOCATION_COLUMNS):
            raise ValueError("location block needs exactly 8 slots")
        for v, m in zip(self.values, self.missing):
            if not m and not math.isfinite(v):
                raise ValueError("non-missing location slot must be finite")

    @classmethod
    def all_missing(cls) -> "LocationFeatureBlock":
        n = len(LOCATION_COLUMNS)
        return cls((math.nan,) * n, (True,) * n)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(LOCATION_COLUMNS, self.values))


def location_feature_vector(point: GeoPoint, providers: Providers, cfg: GeoConfig = GeoConfig(),
                            seed: int = 0) -> LocationFeatureBlock:
    elev, elev_missing = elevation_features(point, providers, cfg, seed)
    values = [elev.elev_here, elev.max_elev_nearby, elev.max_drop_from_here, elev.max_pairwise_range]
    missing = list(elev_missing)

    water = None
    if providers.tiles is not None:
        try:
            tile = get_map_tile(providers.tiles, providers.cache, point, cfg.zoom, cfg.tile_size, providers.retry)
            water = water_features(segment_water(tile, cfg.water_palette, cfg.water_tol))
        except (FeatureMissing, DecodeError, ProviderError):
            water = None
    if water is None:
        values += [math.nan, math.nan]
        missing += [True, True]
    else:
        values += [water.min_water_dist_px, water.water_fraction]
        missing += [False, False]

    for category in ("railway", "major_road"):
        d = None
        if providers.places is not None:
            try:
                d = nearest_place_distance(providers.places, providers.cache, point, category,
                                           cfg.search_radius_m, providers.retry)
            except (FeatureMissing, DecodeError, ProviderError):
                d = None
        values.append(math.nan if d is None else d)
        missing.append(d is None)

    values = [math.nan if m else v for v, m in zip(values, missing)]
    return LocationFeatureBlock(tuple(values), tuple(missing))


def tweet_seed(global_seed: int, tweet_id: str) -> int:
    return derive_seed(global_seed, tweet_id)
