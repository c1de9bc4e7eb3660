import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cadfl.data import (
    Partition,
    class_means,
    dirichlet_partition,
    dump_dataset,
    gen_synthetic,
    label_entropy,
    load_dataset,
    split_train_test,
)
from cadfl.errors import ConfigError, DecodeError, TruncatedStreamError
from cadfl.tensor import apply_update, backward, evaluate, forward_loss, full_mask, init_mlp


def test_same_seed_same_bytes():
    a, b = gen_synthetic(seed=5), gen_synthetic(seed=5)
    assert a.features.tobytes() == b.features.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()
    assert gen_synthetic(seed=6).features.tobytes() != a.features.tobytes()


def test_every_class_present_and_finite():
    ds = gen_synthetic(num_classes=5, num_samples=5, seed=0)
    assert set(ds.labels.tolist()) == set(range(5))
    assert np.all(np.isfinite(ds.features))


def test_class_means_geometry():
    m = class_means(4, 16, scale=2.0)
    assert np.allclose(np.linalg.norm(m, axis=1), 2.0)
    np.testing.assert_allclose(m.sum(axis=0), 0.0, atol=1e-12)
    d = np.linalg.norm(m[:, None] - m[None], axis=-1)[np.triu_indices(4, 1)]
    assert np.ptp(d) < 1e-12
    circle = class_means(6, 2)
    np.testing.assert_allclose(np.linalg.norm(circle, axis=1), 1.0)


def test_label_histogram_is_uniform():
    p_values = []
    for seed in range(10):
        ds = gen_synthetic(num_classes=4, num_samples=4000, seed=seed)
        p_values.append(stats.chisquare(np.bincount(ds.labels, minlength=4)).pvalue)
    # independent p-values; all ten below 0.01 would be astronomically unlikely
    assert max(p_values) > 0.01
    assert np.median(p_values) > 0.01


def test_gen_errors():
    with pytest.raises(ConfigError):
        gen_synthetic(num_classes=1)
    with pytest.raises(ConfigError):
        gen_synthetic(num_classes=4, num_samples=3)


def test_tight_blobs_are_learnable():
    ds = gen_synthetic(num_classes=4, dim=8, num_samples=400, spread=1e-3, seed=0)
    rng = np.random.default_rng(0)
    model = init_mlp([8, 16, 4], rng)
    mask = full_mask(model)
    for _ in range(30):
        for idx in np.array_split(rng.permutation(400), 20):
            batch = (ds.features[idx], ds.labels[idx])
            _, cache = forward_loss(model, mask, batch)
            grad = backward(model, mask, cache, batch)
            model = apply_update(model, grad, mask, lr=0.2, gamma=0.0, ref=model)
    assert evaluate(model, mask, (ds.features, ds.labels)) >= 0.99


def _check_cover(part, m):
    allidx = np.concatenate(part.clients)
    assert allidx.size == m
    np.testing.assert_array_equal(np.sort(allidx), np.arange(m))
    assert all(c.size > 0 for c in part.clients)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 20), alpha=st.sampled_from([0.01, 0.1, 0.4, 1.0, 1000.0]),
       m=st.integers(20, 300))
def test_partition_is_a_disjoint_cover(seed, n, alpha, m):
    labels = np.random.default_rng(seed).integers(0, 4, m)
    part = dirichlet_partition(labels, n, alpha, np.random.default_rng(seed))
    assert part.num_clients == n
    _check_cover(part, m)


def test_single_client_owns_everything():
    labels = np.arange(50) % 3
    part = dirichlet_partition(labels, 1, 0.4, np.random.default_rng(0))
    np.testing.assert_array_equal(part.clients[0], np.arange(50))


def test_empty_shards_are_repaired():
    labels = np.zeros(10, dtype=int)
    part = dirichlet_partition(labels, 10, 0.01, np.random.default_rng(0))
    assert [c.size for c in part.clients] == [1] * 10
    with pytest.raises(ConfigError):
        dirichlet_partition(np.zeros(3, dtype=int), 4, 0.5, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        dirichlet_partition(labels, 2, 0.0, np.random.default_rng(0))


def test_large_alpha_matches_global_proportions():
    # Dir(1000) shares alone deviate by sqrt((n-1)/(n*alpha+1)) relative, about 3% at n=8;
    # four clients and large shards keep 10% at roughly four standard deviations
    labels = np.random.default_rng(0).integers(0, 4, 100_000)
    glob = np.bincount(labels, minlength=4) / labels.size
    for seed in range(20):
        part = dirichlet_partition(labels, 4, 1000.0, np.random.default_rng(seed))
        for shard in part.clients:
            local = np.bincount(labels[shard], minlength=4) / shard.size
            assert np.all(np.abs(local - glob) <= 0.1 * glob)


def test_heterogeneity_ordering():
    ds = gen_synthetic(num_samples=4000, seed=1)
    avg, med = {}, {}
    for alpha in (0.1, 0.4, 1000.0):
        ent = []
        for seed in range(20):
            part = dirichlet_partition(ds.labels, 8, alpha, np.random.default_rng(seed))
            ent.extend(label_entropy(ds.labels[s], 4) for s in part.clients)
        avg[alpha], med[alpha] = np.mean(ent), np.median(ent)
    assert avg[0.1] <= avg[0.4] <= avg[1000.0]
    assert med[0.1] < med[1000.0]


def test_label_entropy_values():
    assert label_entropy(np.zeros(5, dtype=int), 3) == 0.0
    assert label_entropy(np.arange(4), 4) == pytest.approx(np.log(4))
    assert label_entropy(np.array([], dtype=int), 2) == 0.0


def test_even_split_halves():
    labels = np.array([0, 0, 1, 1, 2, 2, 3, 3])
    part = split_train_test(Partition([np.arange(8)]), labels, 0.5, np.random.default_rng(0))
    assert part.train[0].size == part.test[0].size == 4
    assert sorted(labels[part.test[0]].tolist()) == [0, 1, 2, 3]


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), frac=st.floats(0.05, 0.95), n=st.integers(1, 12))
def test_split_properties(seed, frac, n):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 4, 200)
    part = dirichlet_partition(labels, n, 0.4, rng)
    part = split_train_test(part, labels, frac, rng)
    for shard, tr, te in zip(part.clients, part.train, part.test):
        assert np.intersect1d(tr, te).size == 0
        np.testing.assert_array_equal(np.union1d(tr, te), shard)
        assert tr.size > 0
        if shard.size >= 2:
            assert te.size > 0
        else:
            assert te.size == 0
        for c in range(4):
            target = np.sum(labels[shard] == c) * te.size / shard.size
            assert abs(np.sum(labels[te] == c) - target) < 1.0 + 1e-9


def test_split_errors():
    part = Partition([np.arange(4)])
    for frac in (0.0, 1.0, -0.2):
        with pytest.raises(ConfigError):
            split_train_test(part, np.zeros(4, dtype=int), frac, np.random.default_rng(0))


def test_dump_and_load(tmp_path):
    ds = gen_synthetic(num_samples=50, seed=3)
    path = tmp_path / "ds.bin"
    dump_dataset(ds, path)
    raw = path.read_bytes()
    assert len(raw) == 12 + 50 * 16 * 4 + 50 * 2
    feats, labels, c = load_dataset(path)
    assert c == 4
    np.testing.assert_array_equal(labels, ds.labels)
    np.testing.assert_array_equal(feats, ds.features.astype(np.float32))
    path.write_bytes(raw[:-1])
    with pytest.raises(DecodeError):
        load_dataset(path)
    path.write_bytes(raw[:5])
    with pytest.raises(TruncatedStreamError):
        load_dataset(path)
