import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make `oracles` importable

from erase import ImageBuffer, PatchGeometry, builtin_policy

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def qwen7b_policy():
    return builtin_policy("qwen2.5-vl-7b")


@pytest.fixture
def bench_policy():
    """Reference policy re-gridded to the synthetic benchmark's 8px patches."""
    from dataclasses import replace
    return replace(builtin_policy("qwen2.5-vl-7b"), patch_h=8, patch_w=8)


def random_image(rng: np.random.Generator, height: int, width: int,
                 channels: int = 1) -> ImageBuffer:
    shape = (height, width) if channels == 1 else (height, width, channels)
    return ImageBuffer(rng.integers(0, 256, size=shape, dtype=np.uint8))
