import hypothesis
import numpy as np
import pytest

from coughscreen.audio import CANONICAL_RATE, AudioClip
from coughscreen.corpus import SynthSpec, synth_corpus

hypothesis.settings.register_profile(
    "default", deadline=None, max_examples=50, derandomize=True
)
hypothesis.settings.load_profile("default")


def tone(freq, duration=3.0, rate=CANONICAL_RATE, amplitude=0.5, phase=0.0):
    t = np.arange(round(duration * rate)) / rate
    return amplitude * np.sin(2 * np.pi * freq * t + phase)


def tone_clip(freq, duration=3.0, rate=CANONICAL_RATE, amplitude=0.5):
    return AudioClip(samples=tone(freq, duration, rate, amplitude), sample_rate=rate)


@pytest.fixture(scope="session")
def diag_corpus_small(tmp_path_factory):
    """Four diagnosis classes, 8 clips each."""
    root = tmp_path_factory.mktemp("diag_small")
    spec = SynthSpec(
        classes=("covid19", "pertussis", "bronchitis", "normal"), per_class=8, seed=7
    )
    return synth_corpus(spec, root)


@pytest.fixture(scope="session")
def detect_corpus_small(tmp_path_factory):
    """Detection classes, 10 clips each."""
    root = tmp_path_factory.mktemp("detect_small")
    spec = SynthSpec(classes=("cough", "not_cough"), per_class=10, seed=11)
    return synth_corpus(spec, root)
