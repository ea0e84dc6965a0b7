import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groupmix.errors import ValidationError
from groupmix.sampling import (MiniGroupBatch, build_groups, iterate_batches,
                               plain_batches)

from conftest import records_from_labels


def _labels(class_sizes: dict) -> np.ndarray:
    out = []
    for label, count in class_sizes.items():
        out += [label] * count
    return np.array(out)


class TestBuildGroups:
    def test_eight_samples_two_groups(self):
        records = records_from_labels([0] * 8)
        groups = build_groups(records, 4, seed=0)
        assert len(groups) == 2
        assert sorted(i for g in groups for i in g.member_indices) == list(range(8))

    def test_group_size_one_degenerates_to_singletons(self):
        records = records_from_labels([0, 1, 2, 0, 1, 2])
        groups = build_groups(records, 1, seed=0)
        assert len(groups) == 6
        assert all(len(g.member_indices) == 1 for g in groups)

    def test_drop_policy_enumerated_case(self):
        # Classes of 5 and 4 with M=4: one group each, one A-sample unused.
        records = records_from_labels(_labels({0: 5, 1: 4}))
        groups = build_groups(records, 4, seed=3, remainder_policy="drop")
        assert len(groups) == 2
        assert sorted(g.given_label for g in groups) == [0, 1]
        used = [i for g in groups for i in g.member_indices]
        assert len(used) == len(set(used)) == 8

    def test_resample_policy_pads_without_in_group_duplicates(self):
        records = records_from_labels(_labels({0: 5}))
        groups = build_groups(records, 4, seed=3, remainder_policy="resample")
        assert len(groups) == 2
        for g in groups:
            assert len(set(g.member_indices)) == 4  # pads come from other chunks

    def test_resample_tiny_class_allows_duplicates(self):
        records = records_from_labels(_labels({0: 3}))
        groups = build_groups(records, 4, seed=0, remainder_policy="resample")
        assert len(groups) == 1
        assert len(groups[0].member_indices) == 4
        assert set(groups[0].member_indices) <= {0, 1, 2}

    def test_small_class_dropped_with_warning(self):
        records = records_from_labels(_labels({0: 8, 1: 2}))
        with pytest.warns(UserWarning, match="class 1"):
            groups = build_groups(records, 4, seed=0, remainder_policy="drop")
        assert {g.given_label for g in groups} == {0}

    def test_all_classes_vanishing_is_an_error(self):
        records = records_from_labels(_labels({0: 2, 1: 3}))
        with pytest.warns(UserWarning):
            with pytest.raises(ValidationError, match="no class"):
                build_groups(records, 4, seed=0, remainder_policy="drop")

    def test_validation(self):
        records = records_from_labels([0, 0])
        with pytest.raises(ValidationError, match="group_size"):
            build_groups(records, 0, seed=0)
        with pytest.raises(ValidationError, match="remainder_policy"):
            build_groups(records, 2, seed=0, remainder_policy="recycle")

    @given(labels=st.lists(st.integers(0, 3), min_size=6, max_size=60),
           group_size=st.integers(1, 5),
           policy=st.sampled_from(["drop", "resample"]))
    @settings(max_examples=60, deadline=None)
    def test_group_contracts_hold(self, labels, group_size, policy):
        records = records_from_labels(np.array(labels))
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                groups = build_groups(records, group_size, seed=7, remainder_policy=policy)
            except ValidationError:
                return  # every class smaller than the group size
        label_of = {r.index: r.given_label for r in records}
        seen: list[int] = []
        for g in groups:
            assert len(g.member_indices) == group_size
            assert all(label_of[i] == g.given_label for i in g.member_indices)
            seen += list(g.member_indices)
        if policy == "drop":
            assert len(seen) == len(set(seen))


class TestIterateBatches:
    def _groups(self, n_groups, group_size=4):
        labels = _labels({k: group_size for k in range(n_groups)})
        return build_groups(records_from_labels(labels), group_size, seed=0)

    def test_six_groups_k2_three_batches(self):
        batches = list(iterate_batches(self._groups(6), 2, seed=0))
        assert len(batches) == 3
        assert all(b.groups_per_batch == 2 for b in batches)

    def test_five_groups_k2_drops_one(self):
        batches = list(iterate_batches(self._groups(5), 2, seed=0))
        assert len(batches) == 2

    def test_paper_defaults_batch_of_eight(self):
        # Batch size 8 with mixup size 4 means 2 groups per batch.
        batches = list(iterate_batches(self._groups(4, group_size=4), 2, seed=0))
        assert all(b.batch_size == 8 for b in batches)

    def test_requires_enough_groups(self):
        with pytest.raises(ValidationError, match="exceeds"):
            list(iterate_batches(self._groups(3), 4, seed=0))

    def test_deterministic_per_epoch_and_reshuffled_across_epochs(self):
        groups = self._groups(8)
        a = [b.sample_indices.tolist() for b in iterate_batches(groups, 2, seed=5, epoch=0)]
        b = [b.sample_indices.tolist() for b in iterate_batches(groups, 2, seed=5, epoch=0)]
        c = [b.sample_indices.tolist() for b in iterate_batches(groups, 2, seed=5, epoch=1)]
        assert a == b
        assert a != c

    def test_no_index_twice_per_epoch_under_drop(self):
        labels = _labels({0: 13, 1: 9, 2: 17})
        groups = build_groups(records_from_labels(labels), 4, seed=1,
                              remainder_policy="drop")
        seen = []
        for batch in iterate_batches(groups, 2, seed=1, epoch=4):
            seen += batch.sample_indices.tolist()
        assert len(seen) == len(set(seen))

    def test_batch_type_properties(self):
        batch = next(iterate_batches(self._groups(4), 2, seed=0))
        assert isinstance(batch, MiniGroupBatch)
        assert batch.batch_size == 8
        assert batch.sample_indices.shape == (8,)
        assert batch.group_labels.shape == (2,)

    def test_describe_dumps_composition(self):
        batch = next(iterate_batches(self._groups(2, group_size=2), 2, seed=0))
        text = batch.describe()
        assert text.startswith("batch[K=2,M=2]")
        for g in batch.groups:
            assert f"label={g.given_label}" in text


class TestPlainBatches:
    def test_shapes_and_coverage(self):
        batches = list(plain_batches(20, 4, seed=0))
        assert len(batches) == 5
        assert sorted(np.concatenate(batches).tolist()) == list(range(20))

    def test_partial_batch_dropped(self):
        batches = list(plain_batches(10, 4, seed=0))
        assert len(batches) == 2

    def test_validation(self):
        with pytest.raises(ValidationError):
            list(plain_batches(3, 4, seed=0))

    def test_group_size_one_matches_plain_per_class_counts(self):
        # 4 classes x 16 samples, batch 8: nothing dropped on either side,
        # so each epoch uses every sample exactly once in both samplers.
        labels = _labels({0: 16, 1: 16, 2: 16, 3: 16})
        records = records_from_labels(labels)
        groups = build_groups(records, 1, seed=9)
        for epoch in range(5):
            mgbs = np.concatenate([b.sample_indices
                                   for b in iterate_batches(groups, 8, seed=9, epoch=epoch)])
            plain = np.concatenate(list(plain_batches(64, 8, seed=9, epoch=epoch)))
            mgbs_counts = np.bincount(labels[mgbs], minlength=4)
            plain_counts = np.bincount(labels[plain], minlength=4)
            assert np.array_equal(mgbs_counts, plain_counts)
            assert sorted(mgbs.tolist()) == sorted(plain.tolist())
