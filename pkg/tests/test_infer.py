import numpy as np
import pytest

from oadtm import autodiff as ad
from oadtm.data import FeatureStream
from oadtm.errors import ValidationError
from oadtm.infer import OnlineSession, ScoreTimeline, infer_incremental, infer_stream

from cases import ALL_NAMES, desk_model, jitter


def stream_of(T, d=6, K=2, seed=0):
    r = np.random.default_rng(seed)
    return FeatureStream(f"s{seed}", r.normal(size=(T, d)), r.integers(0, K + 1, size=T), K)


@pytest.mark.parametrize("name", ALL_NAMES)
def test_incremental_equals_batch(rng, name):
    _, model, params = desk_model(name)
    jitter(params, rng)
    s = stream_of(11, seed=2)
    tl = infer_stream(s, model, params)
    session = OnlineSession(model, params)
    rows = np.stack([infer_incremental(session, f) for f in s.features])
    assert rows.tobytes() == tl.probs.tobytes()
    assert len(session.buffer) <= 3


def test_rows_are_distributions():
    _, model, params = desk_model("m6")
    tl = infer_stream(stream_of(9), model, params)
    assert len(tl) == 9
    np.testing.assert_allclose(tl.probs.sum(axis=1), 1.0, atol=1e-5)


def test_avgpool_rows_match_direct_recomputation(rng):
    spec, model, params = desk_model("avgpool", L=4)
    jitter(params, rng)
    s = stream_of(12)
    tl = infer_stream(s, model, params)
    W, b = params["head.W"].values, params["head.b"].values
    for t in range(s.T):
        mean = s.features[max(0, t - 3) : t + 1].mean(axis=0)
        z = mean @ W + b
        p = np.exp(z - z.max())
        assert np.max(np.abs(tl.probs[t] - p / p.sum())) < 1e-12


def test_single_frame_stream(rng):
    _, model, params = desk_model("avgpool")
    jitter(params, rng)
    s = stream_of(1)
    z = s.features[0] @ params["head.W"].values + params["head.b"].values
    p = np.exp(z - z.max())
    np.testing.assert_allclose(infer_stream(s, model, params).probs[0], p / p.sum(), atol=1e-14)


def test_appending_frames_keeps_prefix():
    _, model, params = desk_model("lstm")
    s = stream_of(12)
    short = FeatureStream("p", s.features[:7], s.labels[:7], 2)
    assert infer_stream(short, model, params).probs.tobytes() == infer_stream(s, model, params).probs[:7].tobytes()


def test_session_reset(rng):
    _, model, params = desk_model("dcc")
    frames = rng.normal(size=(6, 6))
    a = OnlineSession(model, params)
    for f in rng.normal(size=(5, 6)):
        a.push(f)
    a.reset()
    b = OnlineSession(model, params)
    for f in frames:
        assert a.push(f).tobytes() == b.push(f).tobytes()


def test_dimension_errors():
    _, model, params = desk_model("gru")
    with pytest.raises(ValidationError):
        infer_stream(stream_of(5, d=4), model, params)
    with pytest.raises(ValidationError):
        OnlineSession(model, params).push(np.zeros(5))


def test_fast_precision_timeline(rng):
    with ad.precision("fast"):
        _, model, params = desk_model("transformer")
    s = stream_of(8)
    tl = infer_stream(s, model, params)
    session = OnlineSession(model, params)
    assert np.stack([session.push(f) for f in s.features]).tobytes() == tl.probs.tobytes()


def test_latencies_recorded():
    _, model, params = desk_model("avgpool")
    tl = infer_stream(stream_of(20), model, params)
    assert len(tl.latencies) == 20
    p50, p99 = tl.latency_percentiles()
    assert 0 <= p50 <= p99


def test_timeline_export_round_trip(tmp_path):
    _, model, params = desk_model("naive_sa")
    tl = infer_stream(stream_of(7), model, params)
    back = ScoreTimeline.from_bytes(tl.to_bytes())
    assert back.equals(tl)
    csv_back = ScoreTimeline.from_csv(tl.to_csv(), fingerprint=tl.fingerprint)
    assert csv_back.probs.tobytes() == tl.probs.tobytes()
    header = tl.to_csv().splitlines()[0]
    assert header == "t,p0,p1,p2,argmax"
