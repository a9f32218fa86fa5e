import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aerotrack.core import Rng
from aerotrack.io import UAV_CLASSES, FrameRecord
from aerotrack.seqcls import (ClassifyConfig, cap_training_samples, classify, cosine, frame_accuracy,
                              fuse_sequences, group_records, pool_embedding, select_keyframes,
                              soft_vote)
from aerotrack.synth import ScoreStreamConfig, generate_score_stream


def rec(frame, conf=0.5, emb=(1.0, 0.0), sm=(1, 0, 0, 0), sid="s"):
    return FrameRecord(sid, frame, np.asarray(emb, float), conf, np.asarray(sm, float))


def test_pool_equal_embeddings():
    v = np.array([0.3, -0.2, 0.9])
    assert np.array_equal(pool_embedding([rec(i, emb=v) for i in range(50)]), v)


def test_pool_stride_picks_first_and_hundredth():
    recs = [rec(i, emb=(0.0, 0.0)) for i in range(200)]
    recs[0] = rec(0, emb=(1.0, 0.0))
    recs[100] = rec(100, emb=(0.0, 1.0))
    np.testing.assert_array_equal(pool_embedding(recs, 0.01), [0.5, 0.5])


def test_pool_short_sequence_uses_first_frame():
    recs = [rec(0, emb=(2.0, 1.0))] + [rec(i, emb=(9.0, 9.0)) for i in range(1, 30)]
    np.testing.assert_array_equal(pool_embedding(recs, 0.01), [2.0, 1.0])


def test_pool_preconditions():
    with pytest.raises(ValueError):
        pool_embedding([], 0.5)
    with pytest.raises(ValueError):
        pool_embedding([rec(0)], 0.0)


def test_cosine_examples():
    assert cosine([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert cosine([1, 0], [0, 1]) == 0.0
    assert cosine([1, 1], [1, 0]) == pytest.approx(0.70710678, abs=1e-8)
    with pytest.raises(ValueError):
        cosine([0, 0], [1, 0])


def test_fuse_identical_and_orthogonal():
    assert [r.members for r in fuse_sequences(["a", "b"], [[1, 0], [1, 0]], 0.9)] == [["a", "b"]]
    assert [r.members for r in fuse_sequences(["a", "b"], [[1, 0], [0, 1]], 0.9)] == [["a"], ["b"]]


def _chain():
    """Planar chain: a~b and b~c at cosine 0.95, a~c below the threshold.

    Cosine 0.95 on both links forces a~c >= cos(2 acos 0.95) ~ 0.805, so that
    is the least similar end pair that can exist.
    """
    step = np.arccos(0.95)
    return [np.array([np.cos(k * step), np.sin(k * step)]) for k in range(3)]


def test_fuse_chain_by_transitivity():
    a, b, c = _chain()
    assert cosine(a, b) == pytest.approx(0.95)
    assert cosine(b, c) == pytest.approx(0.95)
    assert cosine(a, c) == pytest.approx(2 * 0.95 ** 2 - 1)
    assert cosine(a, c) < 0.9
    (real,) = fuse_sequences(["a", "b", "c"], [a, b, c], 0.9, adjacency_only=True)
    assert real.members == ["a", "b", "c"]
    (real,) = fuse_sequences(["a", "c", "b"], [a, c, b], 0.9, adjacency_only=False)
    assert real.members == ["a", "c", "b"]


def test_adjacency_only_blocks_distant_links():
    v, w = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    adj = fuse_sequences(list("abc"), [v, w, v], 0.9, adjacency_only=True)
    full = fuse_sequences(list("abc"), [v, w, v], 0.9, adjacency_only=False)
    assert [r.members for r in adj] == [["a"], ["b"], ["c"]]
    assert [r.members for r in full] == [["a", "c"], ["b"]]


def test_fuse_rejects_bad_tau():
    with pytest.raises(ValueError):
        fuse_sequences(["a"], [[1, 0]], 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**31 - 1), st.floats(-0.9, 0.9), st.floats(0.0, 0.09),
       st.booleans())
def test_fuse_partitions_and_is_monotone_in_tau(n, seed, tau, dtau, adj):
    rng = np.random.default_rng(seed)
    ids = [f"s{i}" for i in range(n)]
    emb = rng.normal(size=(n, 3)) + [2.0, 0, 0]
    lo = fuse_sequences(ids, emb, tau, adj)
    hi = fuse_sequences(ids, emb, tau + dtau, adj)
    members = [m for r in lo for m in r.members]
    assert sorted(members) == sorted(ids) and len(members) == len(set(members))
    group_lo = {m: i for i, r in enumerate(lo) for m in r.members}
    for r in hi:
        assert len({group_lo[m] for m in r.members}) == 1


def test_keyframes_examples():
    recs = [rec(i, c) for i, c in enumerate([0.9, 0.1, 0.8])]
    assert [r.frame for r in select_keyframes(recs, 2)] == [0, 2]
    assert len(select_keyframes(recs, 10)) == 3
    tie = [rec(7, 0.5), rec(3, 0.5)]
    assert [r.frame for r in select_keyframes(tie, 1)] == [3]
    with pytest.raises(ValueError):
        select_keyframes(recs, 0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.integers(1, 10))
def test_keyframes_dominate_excluded(confs, k):
    recs = [rec(i, c) for i, c in enumerate(confs)]
    picked = select_keyframes(recs, k)
    chosen = {r.frame for r in picked}
    rest = [r.det_conf for r in recs if r.frame not in chosen]
    assert len(picked) == min(k, len(recs))
    if rest:
        assert min(r.det_conf for r in picked) >= max(rest)


def test_soft_vote_examples():
    label, total = soft_vote([rec(0, sm=(0.6, 0.4, 0, 0)), rec(1, sm=(0.3, 0.7, 0, 0))])
    np.testing.assert_allclose(total, [0.9, 1.1, 0, 0])
    assert label == "m300"
    assert soft_vote([rec(0, sm=(0.1, 0.1, 0.1, 0.7))])[0] == UAV_CLASSES[3]
    assert soft_vote([rec(0, sm=(0.5, 0.5, 0, 0))])[0] == UAV_CLASSES[0]
    with pytest.raises(ValueError):
        soft_vote([])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
def test_soft_vote_scale_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    sms = rng.dirichlet(np.ones(4), size=rng.integers(1, 8))
    a = soft_vote([rec(i, sm=s) for i, s in enumerate(sms)])[0]
    b = soft_vote([rec(i, sm=s * scale) for i, s in enumerate(sms)])[0]
    assert a == b


def test_cap_training_samples():
    recs = [rec(i) for i in range(1000)]
    assert cap_training_samples(recs[:100], 300) == recs[:100]
    a = cap_training_samples(recs, 300, Rng(5))
    b = cap_training_samples(recs, 300, Rng(5))
    assert len(a) == 300 and len({r.frame for r in a}) == 300
    assert [r.frame for r in a] == [r.frame for r in b]
    with pytest.raises(ValueError):
        cap_training_samples(recs, 0)


def test_group_records_orders_frames():
    recs = [rec(2, sid="b"), rec(0, sid="a"), rec(0, sid="b")]
    g = group_records(recs)
    assert list(g) == ["b", "a"]
    assert [r.frame for r in g["b"]] == [0, 2]


def test_members_share_group_label():
    recs = [rec(i, 0.9, emb=(1, 0), sm=(0, 1, 0, 0), sid="x") for i in range(5)]
    recs += [rec(i, 0.1, emb=(1, 0), sm=(1, 0, 0, 0), sid="y") for i in range(5)]
    out = classify(recs, ClassifyConfig(k=5))
    assert [(s, c) for s, c, _ in out] == [("x", "m300"), ("y", "m300")]


def _accuracy(out, labels):
    return np.mean([c == labels[s] for s, c, _ in out])


def test_soft_vote_beats_frames_on_simulated_stream():
    records, labels = generate_score_stream(7, ScoreStreamConfig(n_real=500))
    fa = frame_accuracy(records, labels)
    assert fa == pytest.approx(0.6, abs=0.02)
    k5 = _accuracy(classify(records, ClassifyConfig(k=5)), labels)
    k1 = _accuracy(classify(records, ClassifyConfig(k=1)), labels)
    assert k5 >= 0.95
    assert k1 > fa
