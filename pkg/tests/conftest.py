import numpy as np
import pytest

from sliderkit.backends import AnalyticBackbone, AnalyticBackboneSpec
from sliderkit.core import ConceptTriplet


@pytest.fixture
def triplet():
    return ConceptTriplet(
        base_prompt="A realistic image of a person.",
        positive_prompt="A realistic image of a person, smiling widely, very happy.",
        negative_prompt="A realistic image of a person, frowning, very sad.",
        concept_name="smiling",
    )


def make_backbone(
    triplet,
    base_mean=(0.0, 0.0),
    direction=(0.25, 0.0),
    data_std=1.0,
    **kwargs,
):
    spec = AnalyticBackboneSpec.for_triplet(
        triplet,
        base_mean=np.asarray(base_mean, dtype=np.float32),
        direction=np.asarray(direction, dtype=np.float32),
        data_std=data_std,
        **kwargs,
    )
    return AnalyticBackbone(spec)


@pytest.fixture
def backbone(triplet):
    return make_backbone(triplet)
