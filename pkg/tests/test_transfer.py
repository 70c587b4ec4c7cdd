"""Segmentation, domain construction, weight transfer, freezing, and the
domain-distance diagnostic."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepids.domain import Domain
from deepids.errors import ConfigError, EmptyDomainError, ShapeError, TransferError
from deepids.network import build_multi_channel_dnn, build_single_channel_dnn
from deepids.training import TrainConfig
from deepids.transfer import (SegmentationConfig, TransferPlan, build_source_domain,
                              build_target_domain, fine_tune, gap_feature_map, mmd,
                              segment, split_domain, train_source, transfer_weights,
                              window_label)

from _oracles import majority_label


class TestSegmentation:
    def test_offsets_and_count(self):
        series = np.arange(20.0)
        out = segment(series, SegmentationConfig(window=8, stride=2))
        assert out.shape == (7, 8)
        for i, start in enumerate(range(0, 13, 2)):
            np.testing.assert_array_equal(out[i], series[start:start + 8])

    def test_exact_window_single_segment(self):
        series = np.arange(8.0)
        out = segment(series, SegmentationConfig(window=8, stride=3))
        assert out.shape == (1, 8)
        np.testing.assert_array_equal(out[0], series)

    def test_overlapping_stride_one(self):
        out = segment(np.arange(9.0), SegmentationConfig(window=8, stride=1))
        assert out.shape == (2, 8)

    def test_too_short_raises(self):
        with pytest.raises(EmptyDomainError):
            segment(np.arange(5.0), SegmentationConfig(window=8, stride=1))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SegmentationConfig(window=4, stride=1)
        with pytest.raises(ConfigError):
            SegmentationConfig(window=10, stride=0)

    @settings(max_examples=100, deadline=None)
    @given(total=st.integers(8, 400), window=st.integers(8, 50), stride=st.integers(1, 25))
    def test_count_formula(self, total, window, stride):
        if total < window:
            return
        cfg = SegmentationConfig(window, stride)
        out = segment(np.zeros(total), cfg)
        assert out.shape[0] == (total - window) // stride + 1


class TestWindowLabel:
    def test_majority_and_tie(self):
        assert window_label(np.array([0, 0, 0, 1])) == 0
        assert window_label(np.array([1, 1, 1, 0])) == 1
        assert window_label(np.array([0, 1, 0, 1])) == 0    # tie goes to attack

    def test_matches_counting_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            labels = rng.integers(0, 2, size=int(rng.integers(1, 20)))
            assert window_label(labels) == majority_label(labels)


class TestSourceDomain:
    def test_all_normal_series(self):
        series = np.arange(22.0)
        labels = np.ones(22, dtype=int)
        domain = build_source_domain([(series, labels)], SegmentationConfig(8, 2))
        assert len(domain) == 8
        assert domain.channels == 1 and domain.classes == 2
        assert (domain.Y == 1).all()

    def test_union_keeps_provenance(self):
        cfg = SegmentationConfig(8, 2)
        d1 = (np.arange(20.0), np.ones(20, dtype=int))
        d2 = (np.arange(16.0), np.zeros(16, dtype=int))
        domain = build_source_domain([d1, d2], cfg)
        assert len(domain) == cfg.count(20) + cfg.count(16)
        assert set(domain.provenance.tolist()) == {0, 1}

    def test_majority_window_labels(self):
        values = np.zeros(8)
        labels = np.array([0, 0, 0, 0, 0, 1, 1, 1])   # 5 attack, 3 normal
        domain = build_source_domain([(values, labels)], SegmentationConfig(8, 1))
        assert domain.Y[0] == 0

    def test_empty_input_raises(self):
        with pytest.raises(EmptyDomainError):
            build_source_domain([], SegmentationConfig(8, 1))
        with pytest.raises(EmptyDomainError):
            build_source_domain([(np.arange(4.0), np.ones(4, dtype=int))],
                                SegmentationConfig(8, 1))


def small_source(seed=0, n=30, window=10):
    """Separable single-channel domain: attacks ride a big offset."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    x = rng.standard_normal((n, 1, window)) + 4.0 * (1 - y)[:, None, None]
    return Domain("source", x, y, 1, 2)


def small_target(channels=3, seed=1, n=24, window=10):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    x = rng.standard_normal((n, channels, window)) + 4.0 * (1 - y)[:, None, None]
    return Domain("target", x, y, channels, 2)


class TestTrainSource:
    def test_learns_separable_source(self):
        net = build_single_channel_dnn(10, 2, seed=2)
        _, history = train_source(net, small_source(n=96), small_source(seed=8, n=24),
                                  TrainConfig(epochs=40, batch_size=32,
                                              patience=None, seed=0))
        assert max(r.train_acc for r in history.epochs) >= 0.99

    def test_zero_epochs_bitwise_identity(self):
        net = build_single_channel_dnn(10, 2, seed=0)
        before = {n: p.value.copy() for n, p in net.parameters()}
        train_source(net, small_source(), small_source(seed=5, n=10),
                     TrainConfig(epochs=0, patience=None, seed=0))
        for n, p in net.parameters():
            np.testing.assert_array_equal(p.value, before[n])

    def test_deterministic(self):
        snaps = []
        for _ in range(2):
            net = build_single_channel_dnn(10, 2, seed=3)
            train_source(net, small_source(), small_source(seed=5, n=10),
                         TrainConfig(epochs=2, batch_size=8, patience=None, seed=9))
            snaps.append({n: p.value.copy() for n, p in net.parameters()})
        for name in snaps[0]:
            np.testing.assert_array_equal(snaps[0][name], snaps[1][name])

    def test_multichannel_source_rejected(self):
        net = build_single_channel_dnn(10, 2, seed=0)
        with pytest.raises(ShapeError):
            train_source(net, small_target(), small_target(seed=2, n=8),
                         TrainConfig(epochs=1, patience=None))


class TestTransferWeights:
    @pytest.mark.parametrize("branches", [1, 3, 7])
    def test_branch_params_value_identical(self, branches):
        single = build_single_channel_dnn(10, 2, seed=11)
        multi = build_multi_channel_dnn(branches, 10, 2, seed=23)
        transfer_weights(single, multi, TransferPlan())
        source_state = [(name, arr) for sname, block in single.hidden_blocks()
                        for name, arr in _block_state(block)]
        for branch in multi.branches:
            branch_state = [(name, arr) for block in branch
                            for name, arr in _block_state(block)]
            assert len(branch_state) == len(source_state)
            for (sn, sa), (_, ba) in zip(source_state, branch_state):
                np.testing.assert_array_equal(sa, ba), sn

    def test_head_untouched(self):
        single = build_single_channel_dnn(10, 2, seed=1)
        multi = build_multi_channel_dnn(2, 10, 2, seed=2)
        head_before = {n: p.value.copy() for n, p in multi.parameters()
                       if not n.startswith("branch")}
        transfer_weights(single, multi, TransferPlan())
        for n, p in multi.parameters():
            if not n.startswith("branch"):
                np.testing.assert_array_equal(p.value, head_before[n])

    def test_single_branch_forward_runs(self):
        single = build_single_channel_dnn(10, 2, seed=1)
        multi = build_multi_channel_dnn(1, 10, 2, seed=2)
        transfer_weights(single, multi, TransferPlan())
        probs = multi.forward(np.random.default_rng(0).standard_normal((2, 1, 10)))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_stack_mismatch_raises(self):
        single = build_single_channel_dnn(10, 2, seed=1)
        multi = build_multi_channel_dnn(2, 10, 2, seed=2)
        multi.branches[1] = multi.branches[1][:3]
        with pytest.raises(TransferError):
            transfer_weights(single, multi, TransferPlan())


def _block_state(block):
    for sub_name, layer in block.sub_items():
        for key, arr in layer.state():
            yield f"{sub_name}.{key}", arr


class TestFineTune:
    def test_head_only_freezes_branches(self):
        single = build_single_channel_dnn(10, 2, seed=4)
        multi = build_multi_channel_dnn(3, 10, 2, seed=5)
        plan = TransferPlan("fine-tune-head-only")
        transfer_weights(single, multi, plan)
        branch_before = {n: p.value.copy() for n, p in multi.parameters()
                         if n.startswith("branch")}
        head_before = {n: p.value.copy() for n, p in multi.parameters()
                       if not n.startswith("branch")}
        target = small_target(3)
        fine_tune(multi, target, small_target(3, seed=9, n=10), plan,
                  TrainConfig(epochs=3, batch_size=8, patience=None, seed=0))
        for n, p in multi.parameters():
            if n.startswith("branch"):
                np.testing.assert_array_equal(p.value, branch_before[n])
        assert any(not np.array_equal(p.value, head_before[n])
                   for n, p in multi.parameters() if not n.startswith("branch"))

    def test_frozen_policy_changes_nothing(self):
        single = build_single_channel_dnn(10, 2, seed=4)
        multi = build_multi_channel_dnn(2, 10, 2, seed=5)
        plan = TransferPlan("frozen")
        transfer_weights(single, multi, plan)
        before = {n: p.value.copy() for n, p in multi.parameters()}
        fine_tune(multi, small_target(2), small_target(2, seed=9, n=10), plan,
                  TrainConfig(epochs=2, batch_size=8, patience=None, seed=0))
        for n, p in multi.parameters():
            np.testing.assert_array_equal(p.value, before[n])

    def test_zero_epoch_keeps_transferred_weights(self):
        single = build_single_channel_dnn(10, 2, seed=6)
        multi = build_multi_channel_dnn(2, 10, 2, seed=7)
        plan = TransferPlan()
        transfer_weights(single, multi, plan)
        before = {n: p.value.copy() for n, p in multi.parameters()}
        fine_tune(multi, small_target(2), small_target(2, seed=9, n=10), plan,
                  TrainConfig(epochs=0, patience=None, seed=0))
        for n, p in multi.parameters():
            np.testing.assert_array_equal(p.value, before[n])

    def test_channel_mismatch_raises(self):
        multi = build_multi_channel_dnn(3, 10, 2, seed=0)
        with pytest.raises(ShapeError):
            fine_tune(multi, small_target(2), small_target(2, seed=1, n=10),
                      TransferPlan(), TrainConfig(epochs=1, patience=None))

    def test_unknown_policy_rejected(self):
        with pytest.raises(ConfigError):
            TransferPlan("thaw-everything")


class TestMMD:
    def make_domain(self, points, role="source"):
        x = np.asarray(points, dtype=np.float64)[:, np.newaxis, :]
        return Domain(role, x, np.zeros(x.shape[0], dtype=int), 1, 2)

    def test_identical_domains_zero(self):
        d = self.make_domain([[1.0, 2.0], [3.0, -1.0]])
        assert mmd(d, d) == 0.0

    def test_hand_case(self):
        a = self.make_domain([[0.0, 0.0]])
        b = self.make_domain([[3.0, 4.0]], role="target")
        assert mmd(a, b) == 25.0

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            a = self.make_domain(rng.standard_normal((5, 4)))
            b = self.make_domain(rng.standard_normal((7, 4)), role="target")
            assert abs(mmd(a, b) - mmd(b, a)) < 1e-12

    def test_non_negative(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a = self.make_domain(rng.standard_normal((4, 3)))
            b = self.make_domain(rng.standard_normal((6, 3)), role="target")
            assert mmd(a, b) >= 0.0

    def test_feature_scaling_quadratic(self):
        rng = np.random.default_rng(2)
        a = self.make_domain(rng.standard_normal((5, 6)))
        b = self.make_domain(rng.standard_normal((8, 6)), role="target")
        c = 3.0
        scaled = lambda x: c * x.reshape(x.shape[0], -1)
        base = mmd(a, b)
        assert mmd(a, b, feature_map=scaled) == pytest.approx(c ** 2 * base, rel=1e-12)

    def test_network_feature_map(self):
        net = build_single_channel_dnn(10, 2, seed=0)
        a = small_source(seed=0, n=6)
        b = small_source(seed=1, n=9)
        value = mmd(a, b, feature_map=gap_feature_map(net))
        assert value >= 0.0 and np.isfinite(value)

    def test_dimension_mismatch_raises(self):
        a = self.make_domain([[0.0, 0.0]])
        b = self.make_domain([[1.0, 2.0, 3.0]], role="target")
        with pytest.raises(ShapeError):
            mmd(a, b)

    def test_empty_domain_unconstructible(self):
        with pytest.raises(EmptyDomainError):
            Domain("source", np.zeros((0, 1, 8)), np.zeros(0, dtype=int), 1, 2)


class TestSplitDomain:
    def test_deterministic_and_stratified(self):
        domain = small_target(channels=2, n=40)
        a1, b1 = split_domain(domain, (0.75, 0.25), seed=3)
        a2, b2 = split_domain(domain, (0.75, 0.25), seed=3)
        np.testing.assert_array_equal(a1.X, a2.X)
        np.testing.assert_array_equal(b1.Y, b2.Y)
        assert len(a1) + len(b1) == len(domain)
        assert set(np.unique(b1.Y)) == {0, 1}
