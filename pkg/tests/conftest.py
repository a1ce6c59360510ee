# Standard Library
import copy
import json
from pathlib import Path
from typing import Any, Callable, Dict

# Third-party Libraries
import numpy as np
import pytest

# Local Imports
from dsj_toolkit import storage
from dsj_toolkit.models import (
    FingerGeometry,
    ModelBundle,
    PulleyGeometry,
    SpringConstants,
    validate_config,
)
from dsj_toolkit.synthesis import (
    SpiralProfile,
    generate_groove,
    solve_spiral_radii,
)

K_SPRING = 875.63
R_JOINT = 0.012
# k·r_j², the joint-level stiffness unit of the reference design
K_UNIT = K_SPRING * R_JOINT**2


@pytest.fixture
def springs() -> SpringConstants:
    """Equal tendon pair stiffness of the reference design."""
    return SpringConstants(K_SPRING, K_SPRING, K_SPRING)


@pytest.fixture
def pulleys() -> PulleyGeometry:
    """Coupled two-joint transmission with r_j = r_d = 12 mm, n = 1."""
    return PulleyGeometry.from_radii(R_JOINT, R_JOINT)


@pytest.fixture
def finger() -> FingerGeometry:
    """Planar finger with 50 mm and 40 mm links."""
    return FingerGeometry(link_lengths=[0.05, 0.04])


@pytest.fixture
def raw_config() -> Dict[str, Any]:
    """Shipped configuration document as parsed JSON."""
    text = storage.DEFAULT_CONFIG_PATH.read_text(encoding='utf-8')
    return json.loads(text)


@pytest.fixture
def bundle(raw_config: Dict[str, Any]) -> ModelBundle:
    """Validated bundle of the shipped configuration."""
    return validate_config(raw_config)


@pytest.fixture
def reference_profile(bundle: ModelBundle) -> SpiralProfile:
    """Solved and grooved profile of the shipped configuration."""
    profile = solve_spiral_radii(
        bundle.schedule, bundle.pulleys, bundle.springs
    )
    return generate_groove(profile, bundle.plan.z_range)


@pytest.fixture
def write_config(
    tmp_path: Path, raw_config: Dict[str, Any]
) -> Callable[..., Path]:
    """Write a modified copy of the shipped configuration."""

    def _write(name: str = 'config.json', **sections: Any) -> Path:
        document = copy.deepcopy(raw_config)
        for section, values in sections.items():
            document.setdefault(section, {}).update(values)
        path = tmp_path / name
        path.write_text(json.dumps(document), encoding='utf-8')
        return path

    return _write


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator for randomized properties."""
    return np.random.default_rng(20240611)
