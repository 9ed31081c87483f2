"""Shared fixtures: the canonical synthetic world and the fixture dataset."""

from __future__ import annotations

from pathlib import Path

import pytest

from crskit.world import generate_world

# The canonical dataset every cross-module check runs on: 200 images, 4
# classes, 1 to 4 instances per positive class, seed 7.
CANONICAL_SEED = 7
CANONICAL_IMAGES = 200
CANONICAL_CLASSES = 4

DATA_DIR = Path(__file__).parent / "data"
MERGED_FIXTURE = DATA_DIR / "merged_fixture.jsonl"


@pytest.fixture(scope="session")
def canonical_world():
    return generate_world(CANONICAL_IMAGES, CANONICAL_CLASSES, seed=CANONICAL_SEED)
