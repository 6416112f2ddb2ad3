from __future__ import annotations

import numpy as np
import pytest

from rcmot.geometry import Homography


def random_well_conditioned_h(rng: np.random.Generator) -> np.ndarray:
    """Near-identity projective map with a mild perspective component."""
    m = np.eye(3) + rng.uniform(-0.3, 0.3, size=(3, 3))
    m[2, :2] = rng.uniform(-1e-3, 1e-3, size=2)
    m[2, 2] = 1.0
    return m


def image_to_polar_h() -> Homography:
    """A fixed homography sending a 640x480 image into r in [5, 30] m, |theta| < 0.6 rad."""
    from rcmot.geometry import PointPair, estimate_homography_dlt

    corners = [
        PointPair((0.0, 0.0), (30.0, -0.6)),
        PointPair((640.0, 0.0), (30.0, 0.6)),
        PointPair((640.0, 480.0), (5.0, 0.45)),
        PointPair((0.0, 480.0), (5.0, -0.45)),
    ]
    return estimate_homography_dlt(corners)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
