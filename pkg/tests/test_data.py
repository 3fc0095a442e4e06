import itertools
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oadtm import data
from oadtm.data import FeatureStream, SynthSpec, generate_synthetic
from oadtm.errors import ConfigError, StreamFormatError


def small_stream(rng, T=12, d=5, K=3):
    return FeatureStream("v", rng.normal(size=(T, d)).astype(np.float32), rng.integers(0, K + 1, size=T), K)


def test_binary_round_trip(rng):
    s = small_stream(rng)
    back = data.stream_from_bytes(data.stream_to_bytes(s))
    assert back.features.tobytes() == s.features.tobytes()
    np.testing.assert_array_equal(back.labels, s.labels)
    assert back.num_classes == 3


def test_binary_layout_is_little_endian(rng):
    s = small_stream(rng, T=2, d=1, K=1)
    raw = data.stream_to_bytes(s)
    assert raw[:4] == b"OADF"
    assert struct.unpack_from("<IIII", raw, 4) == (1, 2, 1, 1)
    assert len(raw) == 20 + 2 * 4 + 2 * 4


@pytest.mark.parametrize("cut", [1, 4, 8, 19, 30])
def test_truncated_file(rng, cut):
    raw = data.stream_to_bytes(small_stream(rng))
    with pytest.raises(StreamFormatError) as info:
        data.stream_from_bytes(raw[:-cut])
    assert info.value.code == "truncated_payload"


def test_error_codes_are_distinct(rng):
    raw = bytearray(data.stream_to_bytes(small_stream(rng)))
    with pytest.raises(StreamFormatError) as bad_magic:
        data.stream_from_bytes(b"ABCD" + bytes(raw[4:]))
    version = bytearray(raw)
    version[4] = 9
    with pytest.raises(StreamFormatError) as bad_version:
        data.stream_from_bytes(bytes(version))
    label = bytearray(raw)
    label[-4:] = struct.pack("<I", 99)
    with pytest.raises(StreamFormatError) as bad_label:
        data.stream_from_bytes(bytes(label))
    feat = bytearray(raw)
    feat[20:24] = struct.pack("<f", float("nan"))
    with pytest.raises(StreamFormatError) as bad_feat:
        data.stream_from_bytes(bytes(feat))
    codes = {e.value.code for e in (bad_magic, bad_version, bad_label, bad_feat)}
    assert codes == {"bad_magic", "bad_version", "label_out_of_range", "non_finite_feature"}


def test_csv_matches_binary(rng, tmp_path):
    s = small_stream(rng)
    data.save_stream(s, tmp_path / "a.oadf")
    data.save_stream(s, tmp_path / "a.csv", format="csv")
    b = data.load_stream(tmp_path / "a.oadf")
    c = data.load_stream(tmp_path / "a.csv", num_classes=3)
    assert b.features.tobytes() == c.features.tobytes()
    np.testing.assert_array_equal(b.labels, c.labels)


def test_csv_rejects_malformed():
    with pytest.raises(StreamFormatError):
        data.stream_from_csv("t,label,f0\n0,0,1.0\n2,0,1.0\n")
    with pytest.raises(StreamFormatError):
        data.stream_from_csv("")


# --- synthetic generator ------------------------------------------------------------------


def test_generator_deterministic():
    spec = SynthSpec(num_streams=3, T=128, seed=4)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    for x, y in zip(a, b):
        assert x.features.tobytes() == y.features.tobytes()
        assert x.labels.tobytes() == y.labels.tobytes()
    c = generate_synthetic(SynthSpec(num_streams=3, T=128, seed=5))
    assert a[0].features.tobytes() != c[0].features.tobytes()


def test_order_mode_needs_two_classes():
    with pytest.raises(ConfigError):
        SynthSpec(K=1, mode="order").validate()
    SynthSpec(K=1, mode="static").validate()


def test_prototypes_shared_across_seeds():
    a = data.prototype_vectors(SynthSpec(seed=1))
    b = data.prototype_vectors(SynthSpec(seed=2))
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(np.linalg.norm(a, axis=1), 1.0)
    # disjoint supports
    assert np.count_nonzero((a != 0).sum(axis=0) > 1) == 0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), K=st.integers(2, 5), T=st.integers(40, 300))
def test_order_classes_balanced_per_pair(seed, K, T):
    spec = SynthSpec(num_streams=2, T=T, d=12, K=K, seed=seed)
    for s in generate_synthetic(spec):
        counts = np.bincount(s.labels, minlength=K + 1)
        for c in range(1, K, 2):
            assert counts[c] == counts[c + 1]
        assert s.T == T and s.labels.max() <= K


def test_short_streams_still_hold_actions():
    streams = generate_synthetic(SynthSpec(num_streams=10, T=64, seed=0))
    assert all((s.labels > 0).any() for s in streams)


def test_noise_free_features_match_prototype_cycles():
    spec = SynthSpec(num_streams=1, T=200, noise=0.0)
    s = generate_synthetic(spec)[0]
    protos = data.prototype_vectors(spec)
    u, v = protos[0], protos[1]
    seen = {1: set(), 2: set()}
    for t in range(1, s.T):
        if s.labels[t] > 0 and s.labels[t - 1] == s.labels[t]:
            prev, cur = s.features[t - 1], s.features[t]
            seen[int(s.labels[t])].add((int(np.sign(prev @ u)), int(np.sign(prev @ v)),
                                        int(np.sign(cur @ u)), int(np.sign(cur @ v))))
    # class 1 steps u -> v -> -u -> -v, class 2 steps v -> u -> -v -> -u
    assert seen[1] <= {(1, 0, 0, 1), (0, 1, -1, 0), (-1, 0, 0, -1), (0, -1, 1, 0)}
    assert seen[2] <= {(0, 1, 1, 0), (1, 0, 0, -1), (0, -1, -1, 0), (-1, 0, 0, 1)}
    assert seen[1] and seen[2]


@pytest.mark.parametrize("L", [2, 4, 6, 8])
def test_pooling_cannot_separate_order_classes(L):
    spec = SynthSpec(noise=0.0)
    protos = data.prototype_vectors(spec)

    def pooled(cls, kind):
        out = set()
        for phase in range(4):
            w = data.class_prototype_sequence(spec, cls, L, phase, protos).astype(np.float32)
            r = w.mean(axis=0) if kind == "avg" else w.max(axis=0)
            out.add(r.tobytes())
        return out

    for kind in ("avg", "max"):
        assert pooled(1, kind) == pooled(2, kind)


def test_order_classes_differ_in_sequence():
    spec = SynthSpec(noise=0.0)
    one = {data.class_prototype_sequence(spec, 1, 4, p).tobytes() for p in range(4)}
    two = {data.class_prototype_sequence(spec, 2, 4, p).tobytes() for p in range(4)}
    assert not one & two


def test_static_mode_constant_prototypes():
    s = generate_synthetic(SynthSpec(num_streams=1, mode="static", K=3, d=6, noise=0.0))[0]
    for c in range(1, 4):
        rows = s.features[s.labels == c]
        if len(rows):
            assert len({r.tobytes() for r in rows}) == 1
