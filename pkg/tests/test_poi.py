import numpy as np
import pytest

from geoprice.balltree import BallTree
from geoprice.errors import DataError
from geoprice.geo import GeoPoint, haversine, haversine_arrays
from geoprice.poi import (
    DEFAULT_TAGS,
    PoiIndex,
    PoiRecord,
    featurize,
    featurize_dataset,
    load_poi_csv,
    load_tag_universe,
    save_poi_csv,
    save_tag_universe,
)


def brute_count(qlat, qlon, lats, lons, r):
    d = haversine_arrays(qlat, qlon, np.asarray(lats), np.asarray(lons))
    return int((d < r).sum())


class TestBallTree:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(21)
        lats = rng.uniform(51.3, 51.7, 500)
        lons = rng.uniform(-0.5, 0.3, 500)
        tree = BallTree(lats, lons)
        for _ in range(50):
            qla = rng.uniform(51.3, 51.7)
            qlo = rng.uniform(-0.5, 0.3)
            r = rng.uniform(0.1, 10.0)
            assert tree.count_within(qla, qlo, r) == brute_count(qla, qlo, lats, lons, r)

    def test_query_radius_indices(self):
        rng = np.random.default_rng(22)
        lats = rng.uniform(51.3, 51.7, 300)
        lons = rng.uniform(-0.5, 0.3, 300)
        tree = BallTree(lats, lons)
        for _ in range(20):
            qla = rng.uniform(51.3, 51.7)
            qlo = rng.uniform(-0.5, 0.3)
            r = rng.uniform(0.5, 5.0)
            got = tree.query_radius(qla, qlo, r)
            d = haversine_arrays(qla, qlo, lats, lons)
            want = np.nonzero(d < r)[0]
            assert np.array_equal(got, want)

    def test_strict_boundary_excluded(self):
        # query sits exactly r away from one point: strict < keeps it out
        q = GeoPoint(51.5, -0.1)
        p = GeoPoint(51.5, -0.05)
        r = haversine(q, p)
        tree = BallTree([p.lat, 51.9], [p.lon, 0.2])
        assert tree.count_within(q.lat, q.lon, r) == 0
        assert tree.count_within(q.lat, q.lon, r + 1e-9) == 1

    def test_duplicates_and_tiny_leaves(self):
        lats = [51.5] * 40 + [51.6]
        lons = [-0.1] * 40 + [-0.2]
        tree = BallTree(lats, lons, leaf_size=4)
        assert tree.count_within(51.5, -0.1, 0.001) == 40
        assert tree.count_within(51.5, -0.1, 100.0) == 41

    def test_single_point(self):
        tree = BallTree([51.5], [-0.1])
        assert tree.count_within(51.5, -0.1, 0.1) == 1
        assert tree.count_within(52.5, -0.1, 0.1) == 0

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            BallTree([], [])

    def test_deterministic_structure(self):
        rng = np.random.default_rng(23)
        lats = rng.uniform(51.3, 51.7, 200)
        lons = rng.uniform(-0.5, 0.3, 200)
        a = BallTree(lats, lons)
        b = BallTree(lats, lons)
        assert np.array_equal(a.idx, b.idx)
        assert np.array_equal(a._radius, b._radius)


class TestDefaultTags:
    def test_count_and_order(self):
        assert len(DEFAULT_TAGS) == 86
        assert list(DEFAULT_TAGS) == sorted(DEFAULT_TAGS)
        assert len(set(DEFAULT_TAGS)) == 86


class TestFeaturize:
    def mkrecords(self):
        # cafe at ~0.7 km east, two pubs at ~1.5 km, bank far away
        return [
            PoiRecord(GeoPoint(51.5, -0.09), "cafe"),
            PoiRecord(GeoPoint(51.5, -0.122), "pub"),
            PoiRecord(GeoPoint(51.487, -0.1), "pub"),
            PoiRecord(GeoPoint(52.0, -0.1), "bank"),
        ]

    def test_counts_by_tag(self):
        idx = PoiIndex(self.mkrecords(), ("bank", "cafe", "pub"))
        v = featurize(GeoPoint(51.5, -0.1), 2.0, idx)
        assert v.dtype == np.int64
        assert list(idx.tags) == ["bank", "cafe", "pub"]
        assert v.tolist() == [0, 1, 2]

    def test_radius_shrinks_counts(self):
        idx = PoiIndex(self.mkrecords(), ("bank", "cafe", "pub"))
        v = featurize(GeoPoint(51.5, -0.1), 1.0, idx)
        assert v.tolist() == [0, 1, 0]

    def test_unknown_tags_rejected_with_count(self):
        recs = self.mkrecords() + [PoiRecord(GeoPoint(51.5, -0.1), "zoo")]
        with pytest.warns(UserWarning):
            idx = PoiIndex(recs, ("bank", "cafe", "pub"))
        assert idx.n_rejected == 1
        assert idx.n_records == 4

    def test_universe_sorted_regardless_of_input_order(self):
        idx = PoiIndex([], ("pub", "bank", "cafe"))
        assert idx.tags == ("bank", "cafe", "pub")

    def test_matches_brute_force_random(self):
        rng = np.random.default_rng(31)
        tags = ("alpha", "beta", "gamma", "delta")
        recs = [
            PoiRecord(
                GeoPoint(rng.uniform(51.4, 51.6), rng.uniform(-0.3, 0.1)),
                tags[rng.integers(0, 4)],
            )
            for _ in range(400)
        ]
        idx = PoiIndex(recs, tags)
        for _ in range(25):
            q = GeoPoint(rng.uniform(51.4, 51.6), rng.uniform(-0.3, 0.1))
            r = rng.uniform(0.2, 6.0)
            got = featurize(q, r, idx)
            for j, t in enumerate(idx.tags):
                sub = [rec for rec in recs if rec.tag == t]
                want = sum(
                    1 for rec in sub if haversine(q, rec.location) < r
                )
                assert got[j] == want

    def test_rejects_bad_universe(self):
        with pytest.raises(DataError):
            PoiIndex([], ())
        with pytest.raises(DataError):
            PoiIndex([], ("a", "a"))

    def test_rejects_bad_radius(self):
        idx = PoiIndex([], ("a",))
        with pytest.raises(DataError):
            featurize(GeoPoint(0, 0), 0.0, idx)

    def test_dataset_matrix_shape(self):
        from geoprice.dataset import Dataset, Listing

        d = Dataset(
            tuple(
                Listing(f"x{i}", GeoPoint(51.5 + i * 0.001, -0.1), 100.0 + i, 2, 1, 1, 1, "sale")
                for i in range(5)
            )
        )
        idx = PoiIndex(self.mkrecords(), ("bank", "cafe", "pub"))
        m = featurize_dataset(d, idx, 2.0)
        assert m.shape == (5, 3)
        assert m.dtype == np.int64


class TestPoiFiles:
    def test_poi_csv_roundtrip(self, tmp_path):
        recs = [
            PoiRecord(GeoPoint(51.5, -0.1), "cafe"),
            PoiRecord(GeoPoint(51.6, -0.2), "pub"),
        ]
        p = tmp_path / "poi.csv"
        save_poi_csv(recs, p)
        back = load_poi_csv(p)
        assert len(back) == 2
        assert back[0].tag == "cafe"
        assert back[0].location == recs[0].location

    def test_poi_csv_rejects_bad_header(self, tmp_path):
        p = tmp_path / "poi.csv"
        p.write_text("id,lat,lon\nx,51.5,-0.1\n")
        with pytest.raises(DataError):
            load_poi_csv(p)

    def test_tag_universe_roundtrip(self, tmp_path):
        p = tmp_path / "tags.txt"
        save_tag_universe(("pub", "bank", "cafe"), p)
        tags = load_tag_universe(p)
        assert tags == ("bank", "cafe", "pub")

    def test_tag_universe_rejects_duplicates(self, tmp_path):
        p = tmp_path / "tags.txt"
        p.write_text("a\nb\na\n")
        with pytest.raises(DataError):
            load_tag_universe(p)
