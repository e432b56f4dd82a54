"""Shared fixtures: a throwaway local HTTP tile server."""

import pytest

from tileserver import start_server


@pytest.fixture()
def tile_server():
    """Yields (url_template, state) for a server on an ephemeral port."""
    server, template, state = start_server()
    yield template, state
    server.shutdown()
    server.server_close()
