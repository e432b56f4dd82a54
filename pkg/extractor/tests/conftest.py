import pytest

from imagegen import make_labeled_tiles


@pytest.fixture(scope="session")
def separable_manifest(tmp_path_factory):
    base = tmp_path_factory.mktemp("tiles")
    return make_labeled_tiles(base, 240, zoom=18)
