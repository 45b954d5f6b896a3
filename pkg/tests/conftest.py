import numpy as np
import pytest

from personaloco.conditioning import PersonaSpec, get_provider
from personaloco.kinematics import ShapeVector, default_skeleton
from personaloco.motion_data import GaitSpec, NormStats, extract_windows, synth_gait


@pytest.fixture(scope="session")
def template_and_blend():
    return default_skeleton()


@pytest.fixture(scope="session")
def gait_clip():
    """One default-parameter synthetic walk and its skeleton."""
    return synth_gait(GaitSpec(), n_frames=240)


@pytest.fixture(scope="session")
def gait_windows(gait_clip):
    clip, _ = gait_clip
    return extract_windows(clip, 5, beta=ShapeVector.zeros(), text_key="p0", clip_id="c0")


@pytest.fixture(scope="session")
def gait_stats(gait_windows):
    feats = np.concatenate([np.concatenate([w.past, w.future]) for w in gait_windows])
    return NormStats.from_features(feats)


@pytest.fixture(scope="session")
def provider():
    return get_provider("hashing")


@pytest.fixture(scope="session")
def persona_zero(provider):
    text = "a steady average walker"
    return PersonaSpec("p0", ShapeVector.zeros(), text, provider.embed_text(text))
