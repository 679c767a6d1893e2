import numpy as np
import pytest

from woftkit.synth import procedural_texture


@pytest.fixture
def grainy():
    """Texture with clipped white grain, for tests that need high-frequency
    content (plain procedural textures are too smooth for codec/flow work)."""

    def make(size=(160, 120), seed=0, grain=0.02):
        tex = procedural_texture(size, seed=seed)
        noise = np.random.default_rng(seed + 50).normal(0.0, grain, tex.shape)
        return np.clip(tex + noise, 0.0, 1.0)

    return make


@pytest.fixture
def rng():
    return np.random.default_rng(0)
