import json
from pathlib import Path

import numpy as np
import pytest

from crossview import Domain, FeatureMap

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_map(data, image_id="img", domain=Domain.DRONE, location_id="loc"):
    return FeatureMap(
        data=np.asarray(data, dtype=np.float32),
        image_id=image_id,
        domain=domain,
        location_id=location_id,
    )


def load_golden(name):
    return json.loads((DATA_DIR / name).read_text())
