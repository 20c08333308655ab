"""
Pytest configuration for Tubelet Detection Engine tests
"""

import pytest
import sys
from pathlib import Path

# Add src to Python path for imports
project_root = Path(__file__).parent.parent
src_path = project_root / "src"
sys.path.insert(0, str(src_path))

from tubelet_engine import AnchorConfig, SceneBuilder, TubeletDetectionEngine  # noqa: E402
from tubelet_engine.scene_config import get_scene_library  # noqa: E402


@pytest.fixture
def small_anchor_config():
    """Two-grid, single-shape anchor layout on a 120x120 image"""
    return AnchorConfig(
        image_size=(120, 120),
        grid_sizes=[8, 4],
        scales=[0.3, 0.6],
        aspect_ratios=[1.0],
        extra_square=False,
        K=2,
    )


@pytest.fixture
def motion_anchor_config():
    """Single 16x16 grid with 48px square anchors on a 160x160 image"""
    return AnchorConfig(
        image_size=(160, 160),
        grid_sizes=[16],
        scales=[0.3],
        aspect_ratios=[1.0],
        extra_square=False,
        K=6,
    )


@pytest.fixture
def tiny_config():
    """The packaged 'tiny' preset"""
    return get_scene_library().dataset_config("tiny")


@pytest.fixture
def tiny_dataset(tmp_path, tiny_config):
    """The tiny preset written to a temporary directory and loaded back"""
    engine = TubeletDetectionEngine(workers=1)
    engine.generate(tiny_config, tmp_path / "tiny")
    return engine.load(tmp_path / "tiny")


@pytest.fixture
def static_scene_config():
    return SceneBuilder.static_actor()
