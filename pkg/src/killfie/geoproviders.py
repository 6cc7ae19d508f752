"""Elevation, map-tile and nearby-place providers.

Every provider has an offline fixture backend (no network at all) and an
HTTP backend that goes through an injectable :class:`Transport`. Responses are
cached on disk as raw payload bytes keyed by a canonicalized request.
"""
from __future__ import annotations

import csv
import datetime as dt
import hashlib
import io
import json
import math
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
from PIL import Image

from .corpus import GeoPoint

EARTH_RADIUS_M = 6_371_000.0
METERS_PER_DEGREE = 111_320.0
DEFAULT_SEARCH_RADIUS_M = 10_000.0
PLACE_CATEGORIES = ("railway", "major_road")


class ProviderError(RuntimeError):
    """Provider unreachable or failed; retrying may help."""


class NotCovered(ProviderError):
    """The fixture has no data for this request; retrying will not help."""


class FeatureMissing(RuntimeError):
    """Raised after retries are exhausted; callers flag the feature missing."""


class DecodeError(ValueError):
    pass


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    lat1, lat2 = math.radians(a.lat), math.radians(b.lat)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def canonical_point(p: GeoPoint) -> GeoPoint:
    return GeoPoint(round(p.lat, 6) + 0.0, round(p.lon, 6) + 0.0)


def point_key(p: GeoPoint) -> str:
    c = canonical_point(p)
    return f"{c.lat:.6f},{c.lon:.6f}"


# ---------------------------------------------------------------------------
# cache

class ProviderCache:
    """Payload cache: ``<dir>/<provider>/<sha256(key)>.bin`` plus ``.meta`` JSON.

    With ``directory=None`` entries live in memory only.
    """

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory is not None else None
        self._memory: dict[tuple[str, str], bytes] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def _paths(self, provider: str, key: str) -> tuple[Path, Path]:
        digest = hashlib.sha256(key.encode("utf-8")).hexdigest()
        base = self.directory / provider / digest
        return base.with_suffix(".bin"), base.with_suffix(".meta")

    def get(self, provider: str, key: str) -> bytes | None:
        with self._lock:
            payload = self._memory.get((provider, key))
        if payload is None and self.directory is not None:
            data_path, _ = self._paths(provider, key)
            if data_path.exists():
                payload = data_path.read_bytes()
                with self._lock:
                    self._memory[(provider, key)] = payload
        if payload is None:
            self.misses += 1
        else:
            self.hits += 1
        return payload

    def put(self, provider: str, key: str, payload: bytes) -> None:
        with self._lock:
            self._memory[(provider, key)] = payload
        if self.directory is None:
            return
        data_path, meta_path = self._paths(provider, key)
        data_path.parent.mkdir(parents=True, exist_ok=True)
        tmp = data_path.with_suffix(f".tmp{threading.get_ident()}")
        tmp.write_bytes(payload)
        tmp.replace(data_path)
        meta = {
            "provider": provider,
            "key": key,
            "fetched_at": dt.datetime.now(dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
            "size": len(payload),
        }
        meta_path.write_text(json.dumps(meta, sort_keys=True), encoding="utf-8")


# ---------------------------------------------------------------------------
# rate limiting and transport

class TokenBucket:
    """Thread-safe token bucket; ``acquire`` blocks until a token is free."""

    def __init__(self, rate: float = 10.0, burst: float | None = None,
                 clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = float(rate)
        self.capacity = float(burst if burst is not None else max(1.0, rate))
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def _refill(self) -> None:
        now = self._clock()
        self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
        self._last = now

    def acquire(self) -> None:
        while True:
            with self._lock:
                self._refill()
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


class Transport(Protocol):
    def get(self, url: str, params: dict, headers: dict) -> bytes: ...


class RequestsTransport:
    def __init__(self, timeout: float = 10.0):
        import requests

        self._session = requests.Session()
        self.timeout = timeout

    def get(self, url: str, params: dict, headers: dict) -> bytes:
        import requests

        try:
            resp = self._session.get(url, params=params, headers=headers, timeout=self.timeout)
            resp.raise_for_status()
        except requests.RequestException as exc:
            raise ProviderError(f"GET {url} failed: {exc}") from exc
        return resp.content


class CountingTransport:
    """Wraps a transport (or nothing) and counts every call."""

    def __init__(self, inner: Transport | None = None):
        self.inner = inner
        self.calls = 0
        self._lock = threading.Lock()

    def get(self, url: str, params: dict, headers: dict) -> bytes:
        with self._lock:
            self.calls += 1
        if self.inner is None:
            raise ProviderError("network access disabled")
        return self.inner.get(url, params, headers)


@dataclass
class HttpEndpoint:
    url: str
    transport: Transport
    api_key: str | None = None
    api_key_header: str = "X-Api-Key"
    limiter: TokenBucket | None = None

    def fetch(self, params: dict) -> bytes:
        if self.limiter is not None:
            self.limiter.acquire()
        headers = {self.api_key_header: self.api_key} if self.api_key else {}
        return self.transport.get(self.url, params, headers)


# ---------------------------------------------------------------------------
# provider interfaces
#
# ``fetch_*`` returns the raw payload bytes that get cached; the module-level
# ``get_*`` functions decode them.

class ElevationProvider(Protocol):
    name: str

    def fetch_elevation(self, point: GeoPoint) -> bytes: ...


class TileProvider(Protocol):
    name: str

    def fetch_tile(self, point: GeoPoint, zoom: int, width: int, height: int) -> bytes: ...


class PlacesProvider(Protocol):
    name: str

    def fetch_nearest(self, point: GeoPoint, category: str, radius_m: float) -> bytes: ...


def _elevation_payload(meters: float) -> bytes:
    return json.dumps({"elevation": float(meters)}).encode("utf-8")


def _distance_payload(meters: float | None) -> bytes:
    return json.dumps({"distance_m": None if meters is None else float(meters)}).encode("utf-8")


class _Counted:
    calls: int = 0

    def _count(self) -> None:
        self.calls += 1


class FunctionElevation(_Counted):
    """Elevation from a Python callable ``f(lat, lon) -> meters``."""

    def __init__(self, fn: Callable[[float, float], float], name: str = "elevation"):
        self.fn = fn
        self.name = name
        self.calls = 0

    def fetch_elevation(self, point: GeoPoint) -> bytes:
        self._count()
        return _elevation_payload(self.fn(point.lat, point.lon))


def constant_elevation(meters: float) -> FunctionElevation:
    return FunctionElevation(lambda lat, lon: meters)


class GridElevation(_Counted):
    """Regular lat/lon grid with bilinear interpolation.

    ``values[i, j]`` is the elevation at ``(lat0 + i*dlat, lon0 + j*dlon)``.
    Points outside the grid raise :class:`NotCovered`.
    """

    name = "elevation"

    def __init__(self, lat0: float, lon0: float, dlat: float, dlon: float, values: np.ndarray):
        self.lat0, self.lon0, self.dlat, self.dlon = float(lat0), float(lon0), float(dlat), float(dlon)
        self.values = np.asarray(values, dtype=float)
        if self.values.ndim != 2 or min(self.values.shape) < 2:
            raise ValueError("elevation grid needs at least 2x2 nodes")
        self.calls = 0

    @classmethod
    def load(cls, path: str | Path) -> "GridElevation":
        with np.load(path) as z:
            return cls(float(z["lat0"]), float(z["lon0"]), float(z["dlat"]), float(z["dlon"]), z["values"])

    def save(self, path: str | Path) -> None:
        np.savez_compressed(path, lat0=self.lat0, lon0=self.lon0, dlat=self.dlat, dlon=self.dlon, values=self.values)

    def elevation(self, lat: float, lon: float) -> float:
        fi = (lat - self.lat0) / self.dlat
        fj = (lon - self.lon0) / self.dlon
        ni, nj = self.values.shape
        if not (0.0 <= fi <= ni - 1 and 0.0 <= fj <= nj - 1):
            raise NotCovered(f"({lat}, {lon}) outside elevation grid")
        i = min(int(fi), ni - 2)
        j = min(int(fj), nj - 2)
        ti, tj = fi - i, fj - j
        v = self.values
        return float(
            v[i, j] * (1 - ti) * (1 - tj)
            + v[i + 1, j] * ti * (1 - tj)
            + v[i, j + 1] * (1 - ti) * tj
            + v[i + 1, j + 1] * ti * tj
        )

    def fetch_elevation(self, point: GeoPoint) -> bytes:
        self._count()
        return _elevation_payload(self.elevation(point.lat, point.lon))


def tile_filename(point: GeoPoint, zoom: int, width: int, height: int) -> str:
    c = canonical_point(point)
    return f"{zoom}/{c.lat:.6f}_{c.lon:.6f}_{width}x{height}.png"


class DirectoryTiles(_Counted):
    """PNG tiles stored as ``<root>/<zoom>/<lat>_<lon>_<w>x<h>.png``.

    A request for a smaller size than stored is served by center-cropping
    the stored tile.
    """

    name = "tiles"

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.calls = 0

    def fetch_tile(self, point: GeoPoint, zoom: int, width: int, height: int) -> bytes:
        self._count()
        exact = self.root / tile_filename(point, zoom, width, height)
        if exact.exists():
            return exact.read_bytes()
        c = canonical_point(point)
        prefix = f"{c.lat:.6f}_{c.lon:.6f}_"
        for cand in sorted((self.root / str(zoom)).glob(prefix + "*.png")):
            with Image.open(cand) as img:
                w, h = img.size
                if w >= width and h >= height:
                    left, top = w // 2 - width // 2, h // 2 - height // 2
                    crop = img.convert("RGB").crop((left, top, left + width, top + height))
                    buf = io.BytesIO()
                    crop.save(buf, format="PNG")
                    return buf.getvalue()
        raise NotCovered(f"no tile for {point_key(point)} at zoom {zoom}")


@dataclass(frozen=True)
class PlaceFeature:
    feature_id: str
    category: str
    points: tuple[GeoPoint, ...]


def _point_segment_distance(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> float:
    """Haversine distance from ``p`` to the closest point of segment ``ab``,
    found in a local equirectangular frame centred on ``p``."""
    kx = METERS_PER_DEGREE * math.cos(math.radians(p.lat))
    ky = METERS_PER_DEGREE
    ax, ay = (a.lon - p.lon) * kx, (a.lat - p.lat) * ky
    bx, by = (b.lon - p.lon) * kx, (b.lat - p.lat) * ky
    dx, dy = bx - ax, by - ay
    seg2 = dx * dx + dy * dy
    t = 0.0 if seg2 == 0 else max(0.0, min(1.0, -(ax * dx + ay * dy) / seg2))
    closest = GeoPoint(a.lat + t * (b.lat - a.lat), a.lon + t * (b.lon - a.lon))
    return haversine_m(p, closest)


class FixturePlaces(_Counted):
    """Point and polyline features read from CSV.

    Columns: ``feature_id,category,seq,lat,lon``. Rows sharing a feature id
    form a polyline ordered by ``seq``; a single row is a point.
    """

    name = "places"

    def __init__(self, features: Sequence[PlaceFeature]):
        self.features = list(features)
        self.calls = 0

    @classmethod
    def load(cls, path: str | Path) -> "FixturePlaces":
        groups: dict[tuple[str, str], list[tuple[int, GeoPoint]]] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                key = (row["feature_id"], row["category"])
                groups.setdefault(key, []).append((int(row.get("seq") or 0), GeoPoint(float(row["lat"]), float(row["lon"]))))
        feats = [PlaceFeature(fid, cat, tuple(p for _, p in sorted(pts, key=lambda sp: sp[0])))
                 for (fid, cat), pts in groups.items()]
        return cls(feats)

    def save(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature_id", "category", "seq", "lat", "lon"])
            for f in self.features:
                for seq, p in enumerate(f.points):
                    w.writerow([f.feature_id, f.category, seq, repr(p.lat), repr(p.lon)])

    def nearest(self, point: GeoPoint, category: str) -> float | None:
        best = None
        for f in self.features:
            if f.category != category:
                continue
            if len(f.points) == 1:
                d = haversine_m(point, f.points[0])
            else:
                d = min(_point_segment_distance(point, a, b) for a, b in zip(f.points, f.points[1:]))
            best = d if best is None else min(best, d)
        return best

    def fetch_nearest(self, point: GeoPoint, category: str, radius_m: float) -> bytes:
        self._count()
        d = self.nearest(point, category)
        return _distance_payload(d if d is not None and d <= radius_m else None)


class HttpElevation:
    """GET ``?lat=..&lon=..`` returning ``{"elevation": <float>}``."""

    name = "elevation"

    def __init__(self, endpoint: HttpEndpoint):
        self.endpoint = endpoint

    def fetch_elevation(self, point: GeoPoint) -> bytes:
        return self.endpoint.fetch({"lat": f"{point.lat:.6f}", "lon": f"{point.lon:.6f}"})


class HttpTiles:
    """GET ``?lat&lon&zoom&width&height`` returning PNG bytes."""

    name = "tiles"

    def __init__(self, endpoint: HttpEndpoint):
        self.endpoint = endpoint

    def fetch_tile(self, point: GeoPoint, zoom: int, width: int, height: int) -> bytes:
        return self.endpoint.fetch({
            "lat": f"{point.lat:.6f}", "lon": f"{point.lon:.6f}",
            "zoom": str(zoom), "width": str(width), "height": str(height),
        })


class HttpPlaces:
    """GET ``?lat&lon&category&radius`` returning ``{"distance_m": <float|null>}``."""

    name = "places"

    def __init__(self, endpoint: HttpEndpoint):
        self.endpoint = endpoint

    def fetch_nearest(self, point: GeoPoint, category: str, radius_m: float) -> bytes:
        return self.endpoint.fetch({
            "lat": f"{point.lat:.6f}", "lon": f"{point.lon:.6f}",
            "category": category, "radius": f"{radius_m:.0f}",
        })


# ---------------------------------------------------------------------------
# cached access

@dataclass
class RetryPolicy:
    retries: int = 3
    backoff_s: float = 0.0
    sleep: Callable[[float], None] = field(default=time.sleep, repr=False)


def _fetch_cached(provider_name: str, key: str, cache: ProviderCache | None,
                  fetch: Callable[[], bytes], retry: RetryPolicy | None) -> bytes:
    if cache is not None:
        hit = cache.get(provider_name, key)
        if hit is not None:
            return hit
    retry = retry or RetryPolicy()
    last: Exception | None = None
    for attempt in range(max(1, retry.retries)):
        try:
            payload = fetch()
            break
        except NotCovered as exc:
            raise FeatureMissing(str(exc)) from exc
        except ProviderError as exc:
            last = exc
            if retry.backoff_s and attempt + 1 < retry.retries:
                retry.sleep(retry.backoff_s * (2 ** attempt))
    else:
        raise FeatureMissing(f"{provider_name} {key}: {last}") from last
    if cache is not None:
        cache.put(provider_name, key, payload)
    return payload


def get_elevation(provider: ElevationProvider, cache: ProviderCache | None, point: GeoPoint,
                  retry: RetryPolicy | None = None) -> float:
    """Elevation in meters at the canonicalized point; negatives pass through."""
    c = canonical_point(point)
    payload = _fetch_cached(provider.name, f"elevation|{point_key(c)}", cache,
                            lambda: provider.fetch_elevation(c), retry)
    try:
        return float(json.loads(payload)["elevation"])
    except (ValueError, KeyError, TypeError) as exc:
        raise DecodeError(f"bad elevation payload {payload[:80]!r}") from exc


@dataclass(frozen=True)
class MapTile:
    center: GeoPoint
    zoom: int
    pixels: np.ndarray  # (height, width, 3) uint8, row-major

    def __post_init__(self):
        if self.zoom < 0:
            raise ValueError("zoom must be >= 0")
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError("tile pixels must be height x width x 3")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def decode_png(payload: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(payload)) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()
    except Exception as exc:
        raise DecodeError(f"cannot decode tile payload ({len(payload)} bytes, starts {payload[:8]!r})") from exc


def encode_png(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="RGB").save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def get_map_tile(provider: TileProvider, cache: ProviderCache | None, point: GeoPoint,
                 zoom: int = 13, size: tuple[int, int] = (500, 500), retry: RetryPolicy | None = None) -> MapTile:
    if not (0 <= zoom <= 21):
        raise ValueError(f"zoom {zoom} outside [0, 21]")
    width, height = size
    c = canonical_point(point)
    key = f"tile|{point_key(c)}|z={zoom}|{width}x{height}"
    payload = _fetch_cached(provider.name, key, cache, lambda: provider.fetch_tile(c, zoom, width, height), retry)
    pixels = decode_png(payload)
    if pixels.shape[:2] != (height, width):
        raise DecodeError(f"tile {key} decoded to {pixels.shape[1]}x{pixels.shape[0]}, expected {width}x{height}")
    return MapTile(c, zoom, pixels)


def nearest_place_distance(provider: PlacesProvider, cache: ProviderCache | None, point: GeoPoint,
                           category: str, radius_m: float = DEFAULT_SEARCH_RADIUS_M,
                           retry: RetryPolicy | None = None) -> float:
    """Distance in meters to the nearest feature, or ``radius_m`` when none is
    within the search radius."""
    if category not in PLACE_CATEGORIES:
        raise ValueError(f"unsupported place category {category!r}")
    c = canonical_point(point)
    key = f"places|{point_key(c)}|{category}|r={radius_m:.0f}"
    payload = _fetch_cached(provider.name, key, cache, lambda: provider.fetch_nearest(c, category, radius_m), retry)
    try:
        d = json.loads(payload)["distance_m"]
    except (ValueError, KeyError, TypeError) as exc:
        raise DecodeError(f"bad places payload {payload[:80]!r}") from exc
    if d is None or d > radius_m:
        return float(radius_m)
    return max(0.0, float(d))


@dataclass
class Providers:
    elevation: ElevationProvider | None
    tiles: TileProvider | None
    places: PlacesProvider | None
    cache: ProviderCache | None = None
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    @classmethod
    def offline(cls, fixture_dir: str | Path, cache: ProviderCache | None = None) -> "Providers":
        """Fixture backends from ``elevation.npz``, ``tiles/`` and ``places.csv``."""
        root = Path(fixture_dir)
        elev = GridElevation.load(root / "elevation.npz") if (root / "elevation.npz").exists() else None
        tiles = DirectoryTiles(root / "tiles") if (root / "tiles").is_dir() else None
        places = FixturePlaces.load(root / "places.csv") if (root / "places.csv").exists() else None
        return cls(elev, tiles, places, cache)

    @classmethod
    def http(cls, endpoints: dict, transport: Transport | None = None, rate_limit: float = 10.0,
             api_key: str | None = None, cache: ProviderCache | None = None) -> "Providers":
        transport = transport or RequestsTransport()

        def ep(name):
            url = endpoints.get(name)
            return None if not url else HttpEndpoint(url, transport, api_key, limiter=TokenBucket(rate_limit))

        e, t, p = ep("elevation"), ep("tiles"), ep("places")
        return cls(HttpElevation(e) if e else None, HttpTiles(t) if t else None, HttpPlaces(p) if p else None, cache)
