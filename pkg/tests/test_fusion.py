import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from activeauth.data import ChannelId
from activeauth.fusion import (
    ChannelScore,
    FusionError,
    NormalizationParams,
    NotFittedError,
    fit_normalization,
    fuse_session,
    normalize_score,
)

T, W, G = ChannelId.TOUCH, ChannelId.WIFI, ChannelId.GPS


def test_normalize_at_mean_is_half():
    p = fit_normalization({T: [1.0, 3.0]})
    assert p.stats[T] == (2.0, 1.0)
    assert normalize_score(p, T, 2.0) == 0.5
    assert normalize_score(p, T, 102.0) == pytest.approx(0.5 * (math.tanh(1.0) + 1))


def test_constant_scores_use_floor():
    p = fit_normalization({W: [4.0, 4.0, 4.0]})
    assert p.stats[W][1] == 1e-9
    assert normalize_score(p, W, 5.0) > 0.99


def test_short_channel_excluded():
    p = fit_normalization({T: [1.0], W: [1.0, 2.0]})
    assert T in p.excluded and T not in p.stats
    with pytest.raises(NotFittedError):
        normalize_score(p, T, 1.0)


def test_params_json_roundtrip():
    p = fit_normalization({T: [1.0, 2.5], W: [0.0]})
    assert NormalizationParams.from_json(p.to_json()) == p


def cs(ch, v):
    return ChannelScore(ch, v, v)


def test_mean_rule_and_missing_channels():
    s = fuse_session([cs(T, 0.2), cs(W, 0.6)], session_id="s", user_id="a", claimed_user="a")
    assert s.fused == pytest.approx(0.4) and s.genuine
    assert s.contributing_channels == (T, W)
    imputed = fuse_session([cs(T, 0.2)], subset=[T, W, G], impute_missing=True)
    assert imputed.fused == pytest.approx(0.4)
    assert fuse_session([cs(T, 0.2)], subset=[T, W, G]).fused == 0.2


def test_fusion_errors():
    with pytest.raises(FusionError):
        fuse_session([])
    with pytest.raises(FusionError):
        fuse_session([ChannelScore(T, 1.0, None)])
    with pytest.raises(ValueError):
        fuse_session([cs(T, 0.5)], rule="max")


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=20), st.floats(-1e6, 1e6))
def test_normalized_in_unit_interval_and_monotone(train, raw):
    p = fit_normalization({T: train})
    a = normalize_score(p, T, raw)
    assert 0.0 <= a <= 1.0
    assert normalize_score(p, T, raw + 1.0) >= a


@given(st.lists(st.floats(0, 1), min_size=1, max_size=7))
def test_fused_between_min_and_max(values):
    f = fuse_session([cs(T, v) for v in values]).fused
    assert min(values) - 1e-12 <= f <= max(values) + 1e-12
