import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wamlab.consistency import (DEFAULT_ALPHA, ConsistencyConfig, StepDiagnostics,
                                consistency_score, episode_consistency, latent_change)
from wamlab.core import mse_distance


def test_default_alpha():
    assert DEFAULT_ALPHA == 0.1
    assert ConsistencyConfig().alpha == 0.1


def test_identical_is_one():
    v = np.array([0.4, -1.0, 2.0])
    assert consistency_score(v, v) == 1.0


def test_mse_five_gives_exp_minus_half():
    # mse of (0,0) vs (sqrt(10), 0) is 5
    c = consistency_score([0.0, 0.0], [math.sqrt(10.0), 0.0])
    assert abs(c - float(mpmath.mpf("0.6065306597126334236037995349911804534419"))) < 1e-15


@given(arrays(np.float64, 4, elements=st.floats(-10, 10)),
       arrays(np.float64, 4, elements=st.floats(-10, 10)),
       st.floats(1e-3, 10))
def test_score_in_unit_interval_and_antitone(a, b, alpha):
    cfg = ConsistencyConfig(alpha)
    c = consistency_score(a, b, cfg)
    assert 0.0 <= c <= 1.0
    assert consistency_score(a, a + (b - a) * 2, cfg) <= c + 1e-15


def test_latent_change_is_mse():
    assert latent_change([0, 0], [3, 4]) == 12.5
    assert latent_change([1, 1], [1, 1]) == 0.0
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=5), rng.normal(size=5)
    assert latent_change(a, b) == mse_distance(a, b)


def _steps(cs):
    return [StepDiagnostics(t, c, 0.0, 0) for t, c in enumerate(cs)]


def test_episode_consistency_examples():
    assert episode_consistency(_steps([1.0] * 5)) == 1.0
    assert math.isclose(episode_consistency(_steps([0.2, 0.4, 0.6])), 0.4, abs_tol=1e-15)
    assert episode_consistency(_steps([0.37])) == 0.37
    with pytest.raises(ValueError):
        episode_consistency([])


def test_step_diagnostics_validation():
    with pytest.raises(ValueError):
        StepDiagnostics(0, 0.0, 0.0, 0)
    with pytest.raises(ValueError):
        StepDiagnostics(0, 0.5, -1e-9, 0)


def test_config_validation():
    with pytest.raises(ValueError):
        ConsistencyConfig(alpha=0.0)
    with pytest.raises(ValueError):
        ConsistencyConfig(distance="cosine")
