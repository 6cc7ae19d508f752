"""Synthetic world, corpus and annotation fixtures for offline runs.

The world is a 1 x 1 degree box around (10N, 0E): a 500 m plateau west of
the meridian dropping to a 0 m plain east of it, gentle hills on both, three
round lakes far out on the plateau, a railway along its southern edge and a
highway along its northern edge. Everything is generated from a seed.
"""
from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._util import derive_seed
from .corpus import AnnotationRecord, GeoPoint, Label, RiskReason, TweetRecord, save_annotations, save_tweets
from .geoproviders import (
    METERS_PER_DEGREE, DirectoryTiles, FixturePlaces, GridElevation, PlaceFeature, _Counted, canonical_point,
    encode_png, tile_filename,
)

LAND_RGB = (242, 239, 233)
WATER_RGB = (170, 218, 255)
TILE_PX = 256


@dataclass(frozen=True)
class Lake:
    lat: float
    lon: float
    radius_m: float


@dataclass(frozen=True)
class World:
    lat0: float = 9.5
    lon0: float = -0.5
    span_deg: float = 1.0
    step_deg: float = 0.002
    plateau_m: float = 500.0
    hill_m: float = 15.0
    lakes: tuple[Lake, ...] = (Lake(9.7, -0.3, 1000.0), Lake(10.0, -0.3, 1000.0), Lake(10.3, -0.3, 1000.0))
    rail_lat: float = 9.58
    road_lat: float = 10.42

    def elevation_grid(self) -> GridElevation:
        n = int(round(self.span_deg / self.step_deg)) + 1
        lats = self.lat0 + self.step_deg * np.arange(n)
        lons = self.lon0 + self.step_deg * np.arange(n)
        hills = self.hill_m * np.outer(np.sin(lats * 2 * math.pi / 0.05), np.cos(lons * 2 * math.pi / 0.07))
        # nodes at lon < 0 are plateau; the node on the meridian is already plain
        base = np.where(lons < -1e-12, self.plateau_m, 0.0)[None, :]
        return GridElevation(self.lat0, self.lon0, self.step_deg, self.step_deg, base + hills)

    def places(self) -> FixturePlaces:
        lon1 = self.lon0 + self.span_deg
        return FixturePlaces([
            PlaceFeature("rail-1", "railway", (GeoPoint(self.rail_lat, self.lon0), GeoPoint(self.rail_lat, lon1))),
            PlaceFeature("road-1", "major_road", (GeoPoint(self.road_lat, self.lon0), GeoPoint(self.road_lat, lon1))),
        ])

    def render_tile(self, center: GeoPoint, zoom: int = 13, width: int = 500, height: int = 500) -> np.ndarray:
        """Web-mercator raster centred on ``center`` with lakes in water blue."""
        scale = TILE_PX * 2 ** zoom
        cx = (center.lon + 180.0) / 360.0 * scale
        phi = math.radians(center.lat)
        cy = (1.0 - math.log(math.tan(phi) + 1.0 / math.cos(phi)) / math.pi) / 2.0 * scale
        px = cx + (np.arange(width) - width // 2) + 0.5
        py = cy + (np.arange(height) - height // 2) + 0.5
        lons = px / scale * 360.0 - 180.0
        lats = np.degrees(np.arctan(np.sinh(math.pi * (1.0 - 2.0 * py / scale))))
        water = np.zeros((height, width), dtype=bool)
        for lake in self.lakes:
            dy = (lats - lake.lat) * METERS_PER_DEGREE
            dx = (lons - lake.lon) * METERS_PER_DEGREE * math.cos(math.radians(lake.lat))
            water |= (dy[:, None] ** 2 + dx[None, :] ** 2) <= lake.radius_m ** 2
        out = np.empty((height, width, 3), dtype=np.uint8)
        out[:] = LAND_RGB
        out[water] = WATER_RGB
        return out


class WorldTiles(_Counted):
    """Tile provider that renders tiles of a :class:`World` on request."""

    name = "tiles"

    def __init__(self, world: World):
        self.world = world
        self.calls = 0

    def fetch_tile(self, point: GeoPoint, zoom: int, width: int, height: int) -> bytes:
        self._count()
        return encode_png(self.world.render_tile(point, zoom, width, height))


def write_world(root: str | Path, world: World, tile_points=(), zoom: int = 13,
                size: tuple[int, int] = (500, 500)) -> Path:
    """Write an offline fixture directory: elevation grid, places and one
    pre-rendered tile per point."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    world.elevation_grid().save(root / "elevation.npz")
    world.places().save(root / "places.csv")
    tiles = root / "tiles"
    tiles.mkdir(exist_ok=True)
    for p in tile_points:
        c = canonical_point(p)
        path = tiles / tile_filename(c, zoom, *size)
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(encode_png(world.render_tile(c, zoom, *size)))
    return root


# ---------------------------------------------------------------------------
# point populations

def _offset(lat: float, lon: float, north_m: float, east_m: float) -> GeoPoint:
    return GeoPoint(lat + north_m / METERS_PER_DEGREE,
                    lon + east_m / (METERS_PER_DEGREE * math.cos(math.radians(lat))))


def cliff_points(world: World, n: int, seed: int, band_m: float = 300.0) -> list[GeoPoint]:
    rng = np.random.default_rng(derive_seed(seed, "cliff"))
    return [_offset(float(rng.uniform(9.6, 10.4)), 0.0, 0.0, float(rng.uniform(-band_m, band_m)))
            for _ in range(n)]


def plain_points(world: World, n: int, seed: int) -> list[GeoPoint]:
    """Inland points well away from the cliff, lakes, rail and road."""
    rng = np.random.default_rng(derive_seed(seed, "plain"))
    out = []
    for _ in range(n):
        lat = float(rng.uniform(9.7, 10.3))
        lon = float(rng.uniform(-0.2, -0.08) if rng.random() < 0.5 else rng.uniform(0.08, 0.4))
        out.append(GeoPoint(lat, lon))
    return out


def lake_points(world: World, n: int, seed: int, max_from_shore_m: float = 400.0) -> list[GeoPoint]:
    rng = np.random.default_rng(derive_seed(seed, "lake"))
    out = []
    for _ in range(n):
        lake = world.lakes[int(rng.integers(len(world.lakes)))]
        theta = float(rng.uniform(0, 2 * math.pi))
        r = lake.radius_m + float(rng.uniform(20.0, max_from_shore_m))
        out.append(_offset(lake.lat, lake.lon, r * math.cos(theta), r * math.sin(theta)))
    return out


def road_points(world: World, n: int, seed: int, band_m: float = 60.0) -> list[GeoPoint]:
    rng = np.random.default_rng(derive_seed(seed, "road"))
    return [_offset(world.road_lat, float(rng.uniform(0.1, 0.4)), float(rng.uniform(-band_m, band_m)), 0.0)
            for _ in range(n)]


# ---------------------------------------------------------------------------
# planted corpus

CAPTION_POOLS = {
    "height": ["a person standing on a cliff edge", "a steep rocky drop below", "a man on top of a high ledge",
               "a mountain edge with a long fall", "a girl sitting on a rock ledge"],
    "water": ["a person standing in deep water", "waves crashing on the rocks", "a woman on a boat in a lake",
              "a man swimming in the river", "a wet rock near the water"],
    "road": ["a man driving a car", "a steering wheel in front of a man", "a busy road with traffic",
             "a person sitting in a car seat", "a motorbike on the highway"],
    "benign": ["a woman smiling at the camera", "a cup of coffee on a table", "a room with white walls",
               "a dog lying on a sofa", "a group of friends at a party", "a plate of food on a table"],
    "neutral": ["a person with brown hair", "a blue sky", "a man wearing glasses", "the face of a woman",
                "a black shirt"],
}
TEXT_POOLS = {
    "height": ["on the edge", "dont look down", "top of the world", "cliff hanger"],
    "water": ["lake day", "into the water", "boat life", "wave rider"],
    "road": ["road trip", "driving again", "highway vibes", "behind the wheel"],
    "benign": ["with friends", "coffee time", "sunday mood", "new haircut", "family dinner", "good vibes"],
}
KIND_REASON = {"height": RiskReason.HEIGHT, "water": RiskReason.WATER, "road": RiskReason.VEHICLE}


@dataclass(frozen=True)
class PlantedConfig:
    n_tweets: int = 1000
    n_height: int = 60
    n_water: int = 60
    n_road: int = 40
    n_unsure: int = 20
    geo_fraction: float = 0.9
    caption_noise: float = 0.05
    text_signal: float = 0.5
    seed: int = 7

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class PlantedCorpus:
    tweets: list[TweetRecord]
    annotations: list[AnnotationRecord]
    kinds: dict[str, str] = field(default_factory=dict)

    def geo_points(self) -> list[GeoPoint]:
        return [t.geo for t in self.tweets if t.geo is not None]


def planted_corpus(world: World, cfg: PlantedConfig = PlantedConfig()) -> PlantedCorpus:
    """Tweets whose dangerous members sit on cliffs, lake shores or the
    highway and carry captions from the matching danger pool."""
    n_danger = cfg.n_height + cfg.n_water + cfg.n_road
    if n_danger + cfg.n_unsure > cfg.n_tweets:
        raise ValueError("more planted dangerous/unsure tweets than tweets")
    rng = np.random.default_rng(derive_seed(cfg.seed, "corpus"))
    kinds = ["height"] * cfg.n_height + ["water"] * cfg.n_water + ["road"] * cfg.n_road
    kinds += ["benign"] * (cfg.n_tweets - n_danger)
    kinds = [kinds[i] for i in rng.permutation(len(kinds))]
    points = {
        "height": iter(cliff_points(world, cfg.n_height, cfg.seed)),
        "water": iter(lake_points(world, cfg.n_water, cfg.seed)),
        "road": iter(road_points(world, cfg.n_road, cfg.seed)),
        "benign": iter(plain_points(world, cfg.n_tweets - n_danger, cfg.seed)),
    }
    benign_idx = [i for i, k in enumerate(kinds) if k == "benign"]
    unsure = set(rng.choice(benign_idx, size=cfg.n_unsure, replace=False).tolist()) if cfg.n_unsure else set()
    start = dt.datetime(2016, 3, 1, tzinfo=dt.timezone.utc)

    def pick(pool):
        return pool[int(rng.integers(len(pool)))]

    tweets, annotations, kind_of = [], [], {}
    for i, kind in enumerate(kinds):
        tid = f"t{i:05d}"
        geo = next(points[kind])
        if rng.random() >= cfg.geo_fraction:
            geo = None
        if kind == "benign":
            caps = [pick(CAPTION_POOLS["benign"]), pick(CAPTION_POOLS["benign"]), pick(CAPTION_POOLS["neutral"])]
            if rng.random() < cfg.caption_noise:
                caps[0] = pick(CAPTION_POOLS[pick(["height", "water", "road"])])
        else:
            caps = [pick(CAPTION_POOLS[kind]), pick(CAPTION_POOLS[kind]), pick(CAPTION_POOLS["neutral"])]
        phrase = pick(TEXT_POOLS[kind]) if (kind == "benign" or rng.random() < cfg.text_signal) \
            else pick(TEXT_POOLS["benign"])
        text = f"{phrase} #selfie"
        posted = start + dt.timedelta(minutes=int(rng.integers(0, 60 * 24 * 90)))
        tweets.append(TweetRecord(tid, text, ("selfie",), geo, f"img/selfie_{i:05d}.jpg", tuple(caps),
                                  posted, f"u{int(rng.integers(0, 400)):04d}"))
        if i in unsure:
            annotations.append(AnnotationRecord(tid, Label.UNSURE, frozenset(), "synth"))
        elif kind == "benign":
            annotations.append(AnnotationRecord(tid, Label.NOT_DANGEROUS, frozenset(), "synth"))
        else:
            reason = KIND_REASON[kind]
            if kind == "road" and rng.random() < 0.3:
                reason = RiskReason.ROAD
            annotations.append(AnnotationRecord(tid, Label.DANGEROUS, frozenset({reason}), "synth"))
        kind_of[tid] = kind
    return PlantedCorpus(tweets, annotations, kind_of)


# ---------------------------------------------------------------------------
# annotation table with the published reason marginals

TABLE6_COUNTS = {
    "dangerous": 396, "not_dangerous": 2676, "unsure": 83,
}


def table6_annotations(seed: int = 0) -> list[AnnotationRecord]:
    """3,155 resolved annotations: 396 dangerous, 2,676 not, 83 unsure.

    Reason counts over dangerous records: Vehicle 120, Water 118, Height 86,
    HeightAndWater 55, Road 29 (17 alone, 12 alongside Height), Animal 16
    (with Vehicle), Train 8 (with Height), Weapon 4 (with Water).
    """
    V, W, H, HW, R, A, T, WP = (RiskReason.VEHICLE, RiskReason.WATER, RiskReason.HEIGHT,
                                RiskReason.HEIGHT_AND_WATER, RiskReason.ROAD, RiskReason.ANIMAL,
                                RiskReason.TRAIN, RiskReason.WEAPON)
    sets: list[frozenset] = []
    sets += [frozenset({V, A})] * 16 + [frozenset({V})] * (120 - 16)
    sets += [frozenset({W, WP})] * 4 + [frozenset({W})] * (118 - 4)
    sets += [frozenset({H, T})] * 8 + [frozenset({H, R})] * 12 + [frozenset({H})] * (86 - 20)
    sets += [frozenset({HW})] * 55
    sets += [frozenset({R})] * 17
    assert len(sets) == TABLE6_COUNTS["dangerous"]
    labels = [(Label.DANGEROUS, s) for s in sets]
    labels += [(Label.NOT_DANGEROUS, frozenset())] * TABLE6_COUNTS["not_dangerous"]
    labels += [(Label.UNSURE, frozenset())] * TABLE6_COUNTS["unsure"]
    order = np.random.default_rng(derive_seed(seed, "table6")).permutation(len(labels))
    return [AnnotationRecord(f"a{i:05d}", labels[j][0], labels[j][1], "fixture") for i, j in enumerate(order)]


# ---------------------------------------------------------------------------
# on-disk bundle

def default_config(root: Path) -> dict:
    return {
        "paths": {
            "tweets": str(root / "tweets.jsonl"),
            "annotations": str(root / "annotations.csv"),
            "incidents": None,
            "fixtures": str(root / "world"),
            "cache_dir": str(root / "cache"),
            "out_dir": str(root / "run"),
        },
        "providers": {"mode": "offline"},
        "seed": 0,
    }


def write_planted_bundle(root: str | Path, cfg: PlantedConfig = PlantedConfig(), world: World = World()) -> dict:
    """tweets.jsonl, annotations.csv, world/ fixtures and config.json under ``root``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    planted = planted_corpus(world, cfg)
    save_tweets(planted.tweets, root / "tweets.jsonl")
    save_annotations(planted.annotations, root / "annotations.csv")
    write_world(root / "world", world, planted.geo_points())
    config = default_config(root)
    (root / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return config


def offline_world_providers(world: World, cache=None):
    """Providers backed directly by ``world`` (tiles rendered on demand)."""
    from .geoproviders import Providers

    return Providers(world.elevation_grid(), WorldTiles(world), world.places(), cache)


__all__ = [
    "World", "Lake", "WorldTiles", "write_world", "cliff_points", "plain_points", "lake_points", "road_points",
    "PlantedConfig", "PlantedCorpus", "planted_corpus", "table6_annotations", "write_planted_bundle",
    "offline_world_providers", "DirectoryTiles",
]
