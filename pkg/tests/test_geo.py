from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from killfie.corpus import GeoPoint
from killfie.geofeat import (
    LOCATION_COLUMNS, GeoConfig, LocationFeatureBlock, location_feature_vector, sample_disk, segment_water,
    water_features,
)
from killfie.geoproviders import (
    CountingTransport, DecodeError, FeatureMissing, FixturePlaces, FunctionElevation, GridElevation, PlaceFeature,
    ProviderCache, ProviderError, Providers, RetryPolicy, TokenBucket, constant_elevation, decode_png, encode_png,
    get_elevation, get_map_tile, haversine_m, nearest_place_distance, point_key,
)
from killfie.synth import World, WorldTiles, offline_world_providers, write_world

WORLD = World()


def test_point_key_rounds_to_six_places():
    assert point_key(GeoPoint(10.1234564, -0.0000001)) == "10.123456,0.000000"
    # two points inside the same 1e-6 cell share a key; the neighbouring cell does not
    assert point_key(GeoPoint(1.0000004, 2.0)) == point_key(GeoPoint(0.9999996, 2.0))
    assert point_key(GeoPoint(1.0000006, 2.0)) != point_key(GeoPoint(1.0000004, 2.0))


def test_cache_avoids_repeat_calls(tmp_path):
    elev = constant_elevation(12.5)
    cache = ProviderCache(tmp_path / "c")
    p = GeoPoint(10.0, 0.0)
    assert get_elevation(elev, cache, p) == 12.5
    assert get_elevation(elev, cache, GeoPoint(10.0000001, 0.0)) == 12.5
    assert elev.calls == 1
    # a fresh cache object on the same directory serves from disk
    fresh = ProviderCache(tmp_path / "c")
    assert get_elevation(elev, fresh, p) == 12.5
    assert elev.calls == 1 and fresh.hits == 1
    assert len(list((tmp_path / "c" / "elevation").glob("*.meta"))) == 1


def test_negative_elevation_passes_through():
    assert get_elevation(constant_elevation(-28.0), None, GeoPoint(31.5, 35.5)) == -28.0


class Flaky:
    name = "elevation"

    def __init__(self, failures):
        self.failures = failures
        self.calls = 0

    def fetch_elevation(self, point):
        self.calls += 1
        if self.calls <= self.failures:
            raise ProviderError("503")
        return b'{"elevation": 3}'


def test_retry_then_feature_missing():
    slept = []
    ok = Flaky(2)
    assert get_elevation(ok, None, GeoPoint(0, 0), RetryPolicy(3, 0.5, slept.append)) == 3.0
    assert slept == [0.5, 1.0]
    bad = Flaky(5)
    with pytest.raises(FeatureMissing):
        get_elevation(bad, None, GeoPoint(0, 0), RetryPolicy(3, 0.0))
    assert bad.calls == 3


def test_decode_errors():
    class Garbage:
        name = "elevation"

        def fetch_elevation(self, point):
            return b"<html>"

    with pytest.raises(DecodeError):
        get_elevation(Garbage(), None, GeoPoint(0, 0))
    with pytest.raises(DecodeError):
        decode_png(b"not a png")


def test_grid_bilinear_and_coverage():
    g = GridElevation(0.0, 0.0, 1.0, 1.0, np.array([[0.0, 10.0], [20.0, 30.0]]))
    assert g.elevation(0.5, 0.5) == 15.0
    assert g.elevation(1.0, 1.0) == 30.0
    with pytest.raises(FeatureMissing):
        get_elevation(g, None, GeoPoint(2.0, 0.0))


def test_places_distance_and_sentinel():
    places = FixturePlaces([PlaceFeature("r", "railway", (GeoPoint(10.0, -1.0), GeoPoint(10.0, 1.0)))])
    d = nearest_place_distance(places, None, GeoPoint(10.01, 0.3), "railway")
    assert d == pytest.approx(haversine_m(GeoPoint(10.01, 0.3), GeoPoint(10.0, 0.3)), rel=1e-3)
    assert nearest_place_distance(places, None, GeoPoint(11.0, 0.0), "railway") == 10_000.0
    assert nearest_place_distance(places, None, GeoPoint(10.0, 0.0), "major_road") == 10_000.0
    with pytest.raises(ValueError):
        nearest_place_distance(places, None, GeoPoint(10.0, 0.0), "airport")


def test_places_csv_roundtrip(tmp_path):
    places = WORLD.places()
    places.save(tmp_path / "p.csv")
    assert FixturePlaces.load(tmp_path / "p.csv").features == places.features


def test_token_bucket_spaces_requests():
    now = [0.0]
    waits = []

    def sleep(s):
        waits.append(s)
        now[0] += s

    bucket = TokenBucket(rate=2.0, burst=1.0, clock=lambda: now[0], sleep=sleep)
    for _ in range(5):
        bucket.acquire()
    assert now[0] == pytest.approx(2.0)
    with pytest.raises(ValueError):
        TokenBucket(rate=0)


def test_http_providers_use_transport_and_cache():
    class Fake:
        def __init__(self):
            self.seen = []

        def get(self, url, params, headers):
            self.seen.append((url, params, headers))
            if "elev" in url:
                return json.dumps({"elevation": 100.0}).encode()
            return json.dumps({"distance_m": 250.0}).encode()

    fake = Fake()
    counting = CountingTransport(fake)
    prov = Providers.http({"elevation": "http://elev", "places": "http://places"}, counting, rate_limit=1000,
                          api_key="k", cache=ProviderCache())
    p = GeoPoint(10.0, 0.0)
    assert get_elevation(prov.elevation, prov.cache, p) == 100.0
    assert get_elevation(prov.elevation, prov.cache, p) == 100.0
    assert nearest_place_distance(prov.places, prov.cache, p, "railway") == 250.0
    assert counting.calls == 2
    url, params, headers = fake.seen[0]
    assert params == {"lat": "10.000000", "lon": "0.000000"} and headers == {"X-Api-Key": "k"}
    assert prov.tiles is None


def test_offline_run_makes_no_network_calls(tmp_path):
    write_world(tmp_path / "w", WORLD, [GeoPoint(10.0, -0.3 + 0.012)])
    prov = Providers.offline(tmp_path / "w")
    block = location_feature_vector(GeoPoint(10.0, -0.3 + 0.012), prov, GeoConfig(), seed=1)
    assert not any(block.missing)
    # no tile stored for this point: the water pair goes missing, nothing else does
    other = location_feature_vector(GeoPoint(10.1, 0.2), prov, GeoConfig(), seed=1)
    assert [LOCATION_COLUMNS[i] for i, m in enumerate(other.missing) if m] == ["min_water_dist_px", "water_fraction"]
    assert all(math.isnan(other.values[i]) for i in (4, 5))


def test_tile_cropping_and_size_check(tmp_path):
    center = GeoPoint(10.0, -0.3)
    write_world(tmp_path, WORLD, [center])
    tiles = Providers.offline(tmp_path).tiles
    small = get_map_tile(tiles, None, center, 13, (100, 100))
    big = get_map_tile(tiles, None, center, 13, (500, 500))
    assert np.array_equal(small.pixels, big.pixels[200:300, 200:300])
    with pytest.raises(ValueError):
        get_map_tile(tiles, None, center, 25)


def test_png_roundtrip():
    px = np.random.default_rng(0).integers(0, 256, (7, 5, 3), dtype=np.uint8)
    assert np.array_equal(decode_png(encode_png(px)), px)


# ---------------------------------------------------------------------------
# geofeat

@given(st.floats(-80, 80), st.floats(-179, 179), st.floats(1, 5000), st.integers(0, 2**63))
def test_disk_samples_stay_inside(lat, lon, radius, seed):
    c = GeoPoint(lat, lon)
    pts = sample_disk(c, radius, 10, seed)
    assert pts == sample_disk(c, radius, 10, seed)
    assert max(haversine_m(c, p) for p in pts) <= radius * 1.01


def test_disk_rejects_poles_and_bad_args():
    with pytest.raises(ValueError):
        sample_disk(GeoPoint(89.5, 0), 100, 5, 0)
    with pytest.raises(ValueError):
        sample_disk(GeoPoint(0, 0), 0, 5, 0)


def test_segment_water_tolerance():
    px = np.zeros((2, 2, 3), dtype=np.uint8)
    px[0, 0] = (170, 218, 255)
    px[0, 1] = (160, 218, 255)   # 10 away: within the default tolerance
    px[1, 0] = (150, 218, 255)   # 20 away
    px[1, 1] = (242, 239, 233)
    assert segment_water(px).tolist() == [[True, True], [False, False]]
    with pytest.raises(ValueError):
        segment_water(px, palette=())


def test_water_features_center_and_fraction():
    mask = np.zeros((10, 10), bool)
    mask[5, 8] = True
    f = water_features(mask)
    assert (f.min_water_dist_px, f.water_fraction) == (3.0, 0.01)
    assert water_features(mask, center=(8, 5)).min_water_dist_px == 0.0


def test_location_block_validation_and_missing_providers():
    with pytest.raises(ValueError):
        LocationFeatureBlock((0.0,) * 7, (False,) * 7)
    with pytest.raises(ValueError):
        LocationFeatureBlock((math.nan,) + (0.0,) * 7, (False,) * 8)
    empty = location_feature_vector(GeoPoint(10, 0), Providers(None, None, None))
    assert all(empty.missing)


def test_elevation_gap_marks_dependent_slots():
    def fn(lat, lon):
        if lat > 10.0095:  # just outside the 1 km near ring
            raise FeatureMissing("hole")
        return 1.0

    prov = Providers(FunctionElevation(fn), None, None)
    block = location_feature_vector(GeoPoint(10.0, 0.0), prov, GeoConfig(n_near=3, n_far=50), seed=4)
    # far ring reaches the hole, near ring does not
    assert block.missing[:4] == (False, True, False, False)


def test_world_fixture_shape():
    assert WORLD.elevation_grid().elevation(10.0, -0.25) > 400
    assert WORLD.elevation_grid().elevation(10.0, 0.25) < 100
    prov = offline_world_providers(WORLD)
    assert isinstance(prov.tiles, WorldTiles)
    near_lake = location_feature_vector(GeoPoint(10.0, -0.3 + 0.0095), prov, GeoConfig(), 0)
    assert near_lake.as_dict()["water_fraction"] > 0
