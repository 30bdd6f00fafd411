import struct

import numpy as np
import pytest

from selfpu import datapipe as dp
from selfpu.errors import ConfigError, FormatError


def _fake_mnist(tmp_path, n=50, gz=False, split="train"):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, size=(n, 28, 28), dtype=np.uint8)
    labels = rng.integers(0, 10, size=n, dtype=np.uint8)
    prefix = "train" if split == "train" else "t10k"
    sfx = ".gz" if gz else ""
    ip = tmp_path / f"{prefix}-images-idx3-ubyte{sfx}"
    lp = tmp_path / f"{prefix}-labels-idx1-ubyte{sfx}"
    dp.write_idx(ip, imgs)
    dp.write_idx(lp, labels)
    return ip, lp, imgs, labels


@pytest.mark.parametrize("gz", [False, True])
def test_idx_round_trip(tmp_path, gz):
    ip, lp, imgs, labels = _fake_mnist(tmp_path, gz=gz)
    raw = dp.load_mnist_idx(ip, lp)
    assert raw.features.shape == (50, 784)
    assert raw.features.dtype == np.float32
    np.testing.assert_array_equal(np.rint(raw.features * 255).astype(np.uint8), imgs.reshape(50, -1))
    np.testing.assert_array_equal(raw.targets, labels)
    assert raw.features.min() >= 0 and raw.features.max() <= 1


def test_idx_header_is_big_endian(tmp_path):
    ip, lp, _, _ = _fake_mnist(tmp_path, n=3)
    head = ip.read_bytes()[:16]
    assert struct.unpack(">IIII", head) == (0x00000803, 3, 28, 28)
    assert struct.unpack(">II", lp.read_bytes()[:8]) == (0x00000801, 3)


def test_labels_file_with_image_magic(tmp_path):
    ip, lp, _, _ = _fake_mnist(tmp_path)
    with pytest.raises(FormatError, match="magic"):
        dp.load_mnist_idx(ip, ip)


def test_truncated_and_mismatched_files(tmp_path):
    ip, lp, _, labels = _fake_mnist(tmp_path)
    ip.write_bytes(ip.read_bytes()[:-10])
    with pytest.raises(FormatError, match="truncated"):
        dp.load_mnist_idx(ip, lp)
    ip2, _, _, _ = _fake_mnist(tmp_path, n=50)
    dp.write_idx(lp, labels[:40])
    with pytest.raises(FormatError, match=str(lp.name)):
        dp.load_mnist_idx(ip2, lp)


def test_find_mnist_files(tmp_path):
    _fake_mnist(tmp_path, gz=True)
    _fake_mnist(tmp_path, split="test")
    found = dp.find_mnist_files(tmp_path)
    assert found["train"][0].name.endswith(".gz")
    assert found["test"][1].name == "t10k-labels-idx1-ubyte"


def test_two_gaussians_shape_and_balance():
    raw = dp.gen_two_gaussians(1000, d=3, mu=1.5, pi_p=0.3, seed=1)
    assert raw.features.shape == (1000, 3)
    assert np.sum(raw.targets == 1) == 300
    assert raw.features[raw.targets == 1, 0].mean() == pytest.approx(1.5, abs=0.15)


def test_bayes_accuracy_values():
    # Phi via erf oracle
    assert dp.bayes_accuracy(1.5) == pytest.approx(0.93319, abs=1e-5)
    assert dp.bayes_accuracy(0.0) == 0.5


def test_bayes_rule_monte_carlo():
    raw = dp.gen_two_gaussians(100_000, mu=1.5, pi_p=0.5, seed=7)
    acc = np.mean(np.where(raw.features[:, 0] >= 0, 1, -1) == raw.targets)
    assert abs(acc - dp.bayes_accuracy(1.5)) < 0.01


def _digits(n=6000, seed=0):
    rng = np.random.default_rng(seed)
    return dp.RawDataset(rng.normal(size=(n, 4)).astype(np.float32), rng.integers(0, 10, n), "mnist")


def test_pu_split_remaining():
    raw = _digits()
    ds = dp.make_pu_split(raw, "odd", 100, seed=3, pi_p=0.5)
    assert ds.n_p == 100 and len(ds) == 6000
    assert np.all(ds.oracle[ds.labeled] == 1)
    assert ds.manifest["n_u"] == 5900
    assert not ds.labeled[100:].any()
    again = dp.make_pu_split(raw, "odd", 100, seed=3, pi_p=0.5)
    np.testing.assert_array_equal(ds.features, again.features)
    other = dp.make_pu_split(raw, "odd", 100, seed=4, pi_p=0.5)
    assert other.manifest["p_ids_digest"] != ds.manifest["p_ids_digest"]


def test_pu_split_all_duplicates_positives():
    raw = _digits()
    ds = dp.make_pu_split(raw, "odd", 100, seed=3, pi_p=0.5, unlabeled="all")
    assert len(ds) == 6100 and ds.manifest["n_u"] == 6000


def test_pu_split_rejects_bad_configs():
    raw = _digits()
    n_pos = int(np.sum(raw.targets % 2 == 1))
    with pytest.raises(ConfigError):
        dp.make_pu_split(raw, "odd", n_pos + 1, 0, 0.5)
    with pytest.raises(ConfigError, match="prior"):
        dp.make_pu_split(raw, "odd", n_pos, 0, 0.5)
    with pytest.raises(ConfigError):
        dp.make_pu_split(raw, "odd", 10, 0, 0.8)


def test_view_hides_oracle():
    ds = dp.make_pu_split(_digits(), "odd", 50, 0, 0.5)
    v = ds.view()
    assert not hasattr(v, "oracle")
    assert v.prior.pi_p == 0.5


def test_manifest_round_trip(tmp_path):
    raw = _digits()
    val, rest = dp.carve_holdout(raw, "odd", 30, seed=2)
    ds = dp.make_pu_split(rest, "odd", 80, 5, 0.5, holdout_ids=val.ids)
    dp.write_manifest(tmp_path / "m.txt", ds.manifest)
    back = dp.read_manifest(tmp_path / "m.txt")
    assert back["p_ids_digest"] == ds.manifest["p_ids_digest"]
    re = dp.split_from_manifest(rest, back, val.ids)
    np.testing.assert_array_equal(re.labeled, ds.labeled)
    np.testing.assert_array_equal(re.features, ds.features)
    assert re.prior == ds.prior
    back["p_ids_digest"] = "0" * 16
    with pytest.raises(ConfigError):
        dp.split_from_manifest(rest, back)


def test_holdout_is_balanced_and_disjoint():
    raw = _digits()
    val, rest = dp.carve_holdout(raw, "odd", 40, seed=1)
    assert len(val) == 80 and np.sum(val.labels == 1) == 40
    # remaining rows are exactly the complement
    assert len(rest) == len(raw) - 80
    assert len(np.intersect1d(val.ids, np.setdiff1d(np.arange(len(raw)), val.ids))) == 0


def test_feature_scaling_is_idempotent(tmp_path):
    ip, lp, _, _ = _fake_mnist(tmp_path)
    a = dp.load_mnist_idx(ip, lp)
    b = dp.load_mnist_idx(ip, lp)
    np.testing.assert_array_equal(a.features, b.features)


def test_batch_sizes_and_determinism():
    it = dp.BatchIterator(10, 4, seed=0)
    assert [len(b) for b in it.order(0)] == [4, 4, 2]
    np.testing.assert_array_equal(np.concatenate(it.order(3)), np.concatenate(it.order(3)))
    assert sorted(np.concatenate(it.order(1))) == list(range(10))
    big = dp.BatchIterator(200, 32, seed=0)
    assert not np.array_equal(np.concatenate(big.order(0)), np.concatenate(big.order(1)))
    first = [b.copy() for b in big]
    second = list(big)
    assert not np.array_equal(np.concatenate(first), np.concatenate(second))


def test_stratified_batches_hold_positives():
    mask = np.zeros(1000, bool)
    mask[:30] = True
    it = dp.BatchIterator(1000, 100, seed=1, stratify=mask)
    batches = it.order(0)
    assert len(batches) == 10
    assert all(mask[b].sum() == 3 for b in batches)
    assert sorted(np.concatenate(batches)) == list(range(1000))


def test_next_batches_yields_views():
    ds = dp.make_pu_split(_digits(2000), "odd", 20, 0, 0.5)
    it = dp.BatchIterator(len(ds), 64, 0, stratify=ds.labeled)
    batches = list(dp.next_batches(ds.view(), it, 0))
    assert sum(len(b.ids) for b in batches) == len(ds)
    np.testing.assert_array_equal(batches[0].features, ds.features[batches[0].ids])
