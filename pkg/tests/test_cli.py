"""End to end command line tests; every command runs in-process."""

import hashlib
import os

import numpy as np
import pytest

from geoprice.cli import build_config, main, parse_zooms
from geoprice.dataset import ingest_listings, load_splits
from geoprice.errors import ConfigError

BASE_CONFIG = """\
# desk-scale smoke pipeline
listings = city/listings.csv
poi = city/poi.csv
tags = city/tags.txt
features_dir = city/features
out_dir = out
seed = 11
synth_n = 400
synth_poi = 800
zooms = 19,20
use_poi = true
estimator = linear
w = knn:8
test_frac = 0.10
n_runs = 2
"""


def run(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Workspace with a synthesized city, splits and poi counts."""
    root = tmp_path_factory.mktemp("cliws")
    cfg = root / "run.cfg"
    cfg.write_text(BASE_CONFIG)
    for command in ("synth", "split", "poi-index", "featurize"):
        assert run(command, "--config", str(cfg)) == 0
    return root, str(cfg)


def _sha(path) -> str:
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


class TestConfig:
    def test_missing_config_file(self, tmp_path, capsys):
        code = run("synth", "--config", str(tmp_path / "nope.cfg"))
        assert code == 2
        assert capsys.readouterr().err.startswith("error: 2:")

    def test_seed_is_mandatory(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("listings = l.csv\n")
        assert run("ingest", "--config", str(cfg)) == 2
        assert "seed" in capsys.readouterr().err

    def test_seed_flag_satisfies_the_requirement(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("listings = missing.csv\n")
        code = run("ingest", "--config", str(cfg), "--seed", "3")
        # gets past config parsing, then fails on the absent data file
        assert code == 3

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("seed = 1\nlistings = l.csv\nestimatr = rf\n")
        assert run("ingest", "--config", str(cfg)) == 2
        assert "estimatr" in capsys.readouterr().err

    def test_bad_line_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("seed = 1\njust a sentence\n")
        assert run("ingest", "--config", str(cfg)) == 2
        assert "key=value" in capsys.readouterr().err

    def test_duplicate_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("seed = 1\nseed = 2\n")
        assert run("ingest", "--config", str(cfg)) == 2
        assert "duplicate" in capsys.readouterr().err

    def test_bad_value_names_the_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("seed = 1\ntest_frac = lots\n")
        assert run("ingest", "--config", str(cfg)) == 2
        assert "test_frac" in capsys.readouterr().err

    def test_relative_paths_resolve_against_config_dir(self, tmp_path):
        sub = tmp_path / "deep"
        sub.mkdir()
        cfg = sub / "c.cfg"
        cfg.write_text("seed = 1\nlistings = data/l.csv\n")
        resolved = build_config(str(cfg))
        assert resolved.listings == str(sub / "data" / "l.csv")

    def test_flags_win_over_config(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("seed = 1\nestimator = linear\nzooms = 15\nw = delaunay\n")
        resolved = build_config(
            str(cfg),
            {"seed": 9, "estimator": "random_forest", "zooms": (19, 20), "w": "knn:4"},
        )
        assert resolved.seed == 9
        assert resolved.estimator == "random_forest"
        assert resolved.zooms == (19, 20)
        assert resolved.w == "knn:4"

    def test_estimator_aliases(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("seed = 1\nestimator = rf\n")
        assert build_config(str(cfg)).estimator == "random_forest"
        cfg.write_text("seed = 1\nestimator = boost\n")
        with pytest.raises(ConfigError, match="estimator"):
            build_config(str(cfg))

    def test_zoom_parsing(self):
        assert parse_zooms("15, 16,20") == (15, 16, 20)
        with pytest.raises(ConfigError):
            parse_zooms("fifteen")
        with pytest.raises(ConfigError):
            parse_zooms("")

    def test_unknown_command_rejected_by_argparse(self):
        with pytest.raises(SystemExit):
            run("transmogrify", "--config", "x.cfg")


class TestSynthAndSplit:
    def test_synth_wrote_the_city_bundle(self, ws):
        root, cfg = ws
        assert (root / "city" / "listings.csv").exists()
        assert (root / "city" / "poi.csv").exists()
        assert (root / "city" / "tags.txt").exists()
        assert (root / "city" / "features" / "z19.geofeat").exists()
        assert (root / "city" / "features" / "z20.geofeat").exists()
        d = ingest_listings(root / "city" / "listings.csv", "sale")
        assert d.n == 400

    def test_synth_rerun_is_bit_identical(self, ws):
        root, cfg = ws
        before = {
            p: _sha(p)
            for p in [
                root / "city" / "listings.csv",
                root / "city" / "poi.csv",
                root / "city" / "features" / "z20.geofeat",
            ]
        }
        assert run("synth", "--config", cfg) == 0
        for p, digest in before.items():
            assert _sha(p) == digest

    def test_split_tags_every_listing(self, ws):
        root, cfg = ws
        d = ingest_listings(root / "city" / "listings.csv", "sale")
        d = load_splits(d, root / "out" / "splits.csv")
        assert int(d.test_mask().sum()) == 40
        assert int(d.train_mask().sum()) == 360

    def test_fit_sar_needs_splits_first(self, ws, tmp_path, capsys):
        root, _ = ws
        cfg = tmp_path / "fresh.cfg"
        cfg.write_text(
            f"listings = {root / 'city' / 'listings.csv'}\nseed = 11\nout_dir = {tmp_path / 'out'}\n"
        )
        assert run("fit-sar", "--config", str(cfg)) == 3
        assert "split" in capsys.readouterr().err


class TestModelCommands:
    def test_build_w(self, ws):
        root, cfg = ws
        assert run("build-w", "--config", cfg) == 0
        from geoprice.contiguity import load_matrix_market

        w = load_matrix_market(root / "out" / "w.mtx", normalize=False)
        assert w.n == 400

    def test_fit_sar_writes_model_and_predictions(self, ws, capsys):
        root, cfg = ws
        assert run("fit-sar", "--config", cfg) == 0
        out = capsys.readouterr().out
        assert "rho=" in out
        model_text = (root / "out" / "sar_model.txt").read_text()
        assert model_text.startswith("kind=sar")
        lines = (root / "out" / "sar_predictions.csv").read_text().splitlines()
        assert lines[0] == "id,prediction"
        assert len(lines) == 41

    def test_train_then_evaluate(self, ws, capsys):
        root, cfg = ws
        assert run("train", "--config", cfg) == 0
        assert run("evaluate", "--config", cfg) == 0
        out = capsys.readouterr().out
        assert "evaluate: n=40" in out
        rows = dict(
            line.split(",") for line in (root / "out" / "eval.csv").read_text().splitlines()[1:]
        )
        assert float(rows["r2"]) > 0.5

    def test_estimator_flag_overrides_config(self, ws, capsys):
        root, cfg = ws
        assert run("train", "--config", cfg, "--estimator", "rf") == 0
        assert "kind=random_forest" in capsys.readouterr().out

    def test_evaluate_perfect_predictions(self, ws, tmp_path, capsys):
        root, _ = ws
        d = ingest_listings(root / "city" / "listings.csv", "sale")
        price = dict(zip(d.ids(), d.prices()))
        some = list(d.ids())[:25]
        pred_path = tmp_path / "perfect.csv"
        pred_path.write_text(
            "id,prediction\n" + "\n".join(f"{i},{float(price[i])!r}" for i in some) + "\n"
        )
        cfg = tmp_path / "c.cfg"
        cfg.write_text(
            f"listings = {root / 'city' / 'listings.csv'}\nseed = 1\n"
            f"out_dir = {tmp_path / 'out'}\npredictions = {pred_path}\n"
        )
        assert run("evaluate", "--config", str(cfg)) == 0
        rows = dict(
            line.split(",")
            for line in (tmp_path / "out" / "eval.csv").read_text().splitlines()[1:]
        )
        assert float(rows["rmse"]) == 0.0
        assert float(rows["r2"]) == 1.0

    def test_evaluate_rejects_unknown_ids(self, ws, tmp_path, capsys):
        root, _ = ws
        pred_path = tmp_path / "bad.csv"
        pred_path.write_text("id,prediction\nghost,1.0\n")
        cfg = tmp_path / "c.cfg"
        cfg.write_text(
            f"listings = {root / 'city' / 'listings.csv'}\nseed = 1\n"
            f"out_dir = {tmp_path / 'out'}\npredictions = {pred_path}\n"
        )
        assert run("evaluate", "--config", str(cfg)) == 3
        assert "ghost" in capsys.readouterr().err

    def test_fuse_design_layout(self, ws):
        root, cfg = ws
        assert run("fuse", "--config", cfg) == 0
        header = (root / "out" / "design.csv").read_text().splitlines()[0].split(",")
        tags = (root / "city" / "tags.txt").read_text().split()
        assert header[0] == "id"
        assert header[1:5] == ["bedrooms", "bathrooms", "receptions", "floors"]
        assert header[5].startswith("df19_") and header[5 + 16].startswith("df20_")
        assert len(header) == 1 + 4 + 32 + len(tags)

    def test_ablate_zooms(self, ws):
        root, cfg = ws
        assert run("ablate-zooms", "--config", cfg) == 0
        lines = (root / "out" / "ablation.csv").read_text().splitlines()
        assert lines[0] == "zooms,rmse_mean,rmse_std,r2_mean,r2_std,n_runs"
        assert lines[1].startswith("20,")
        assert lines[2].startswith("19|20,")

    def test_report_outputs_and_rerun_identical(self, ws):
        root, cfg = ws
        assert run("train", "--config", cfg) == 0
        assert run("report", "--config", cfg) == 0
        scatter = root / "out" / "scatter.svg"
        heat = root / "out" / "price_heatmap.png"
        first = (_sha(scatter), _sha(heat))
        assert run("report", "--config", cfg) == 0
        assert (_sha(scatter), _sha(heat)) == first
        assert scatter.read_text().startswith("<svg")
        assert heat.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


LISTING_ROWS = """\
id,lat,lon,price,bedrooms,bathrooms,receptions,floors,status
t0,51.50,-0.12,100000.0,2,1,1,1,sale
t1,51.51,-0.13,120000.0,3,1,1,2,sale
t2,51.52,-0.11,90000.0,1,1,1,1,sale
t3,51.49,-0.10,150000.0,4,2,2,2,sale
t4,51.505,-0.125,110000.0,2,1,2,1,sale
"""


class TestFetchTiles:
    @pytest.fixture()
    def tiny(self, tmp_path):
        (tmp_path / "l.csv").write_text(LISTING_ROWS)
        cfg = tmp_path / "c.cfg"
        cfg.write_text(
            "listings = l.csv\nseed = 1\nout_dir = out\ncache_dir = cache\n"
            "zooms = 20\ntile_rate = 1000\ntile_backoff = 0.0\n"
        )
        return tmp_path, str(cfg)

    def test_requires_a_template(self, tiny, capsys, monkeypatch):
        monkeypatch.delenv("GEOPRICE_TILE_URL", raising=False)
        tmp, cfg = tiny
        assert run("fetch-tiles", "--config", cfg) == 2
        assert "GEOPRICE_TILE_URL" in capsys.readouterr().err

    def test_env_template_cold_then_warm(self, tiny, tile_server, monkeypatch, capsys):
        template, state = tile_server
        monkeypatch.setenv("GEOPRICE_TILE_URL", template)
        tmp, cfg = tiny
        assert run("fetch-tiles", "--config", cfg) == 0
        assert "requested=5 ok=5 failed=0" in capsys.readouterr().out
        assert len(state.hits) == 5
        manifest = (tmp / "out" / "tile_manifest.csv").read_text().splitlines()
        assert len(manifest) == 6
        cached = [f for f in os.listdir(tmp / "cache") if not f.endswith(".part")]
        assert len(cached) == 5
        # warm rerun downloads nothing and rewrites the same manifest
        before = _sha(tmp / "out" / "tile_manifest.csv")
        assert run("fetch-tiles", "--config", cfg) == 0
        assert len(state.hits) == 5
        assert _sha(tmp / "out" / "tile_manifest.csv") == before

    def test_cache_only_flag(self, tiny, tile_server, monkeypatch, capsys):
        template, state = tile_server
        monkeypatch.setenv("GEOPRICE_TILE_URL", template)
        tmp, cfg = tiny
        assert run("fetch-tiles", "--config", cfg, "--cache-only") == 0
        assert len(state.hits) == 0
        out = capsys.readouterr().out
        assert "ok=0 failed=5" in out


class TestEndToEnd:
    def test_full_chain_rerun_is_bit_identical(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(BASE_CONFIG.replace("synth_n = 400", "synth_n = 150").replace(
            "synth_poi = 800", "synth_poi = 300"
        ))
        chain = (
            "synth", "split", "poi-index", "featurize", "build-w",
            "fit-sar", "train", "evaluate", "report",
        )
        for command in chain:
            assert run(command, "--config", str(cfg)) == 0, command
        out = tmp_path / "out"
        digests = {name: _sha(out / name) for name in os.listdir(out) if (out / name).is_file()}
        assert len(digests) >= 8
        for command in chain:
            assert run(command, "--config", str(cfg)) == 0, command
        for name, digest in digests.items():
            assert _sha(out / name) == digest, name
