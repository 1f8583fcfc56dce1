import hashlib

import numpy as np
import pytest

from csnet.data import (
    AttributeSpec,
    SplitDataset,
    Triplet,
    audit_triplets,
    build_benchmark,
    default_attributes,
    find_conflicting_pair,
    generate_shapes,
    load_dataset,
    load_triplets,
    sample_triplets,
    save_dataset,
    save_triplets,
    split,
)
from csnet.errors import ConfigError, ContractError, InfeasibilityError

CONDS = ["shape", "color", "size", "size_value"]


@pytest.fixture(scope="module")
def small_ds():
    ds = generate_shapes(None, n=320, image_side=16, noise_std=0.01, seed=7)
    return split(ds, (0.70, 0.10, 0.20), seed=7)


class TestAttributeSpec:
    def test_categorical_needs_two_values(self):
        with pytest.raises(ConfigError):
            AttributeSpec("x", "categorical", values=("only",))

    def test_numeric_needs_nondegenerate_range(self):
        with pytest.raises(ConfigError):
            AttributeSpec("x", "numeric", value_range=(1.0, 1.0))

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            AttributeSpec("x", "boolean")


class TestGeneration:
    def test_stratified_counts(self):
        ds = generate_shapes(None, n=320, image_side=16, noise_std=0.0, seed=7)
        # 4 x 4 x 2 = 32 combinations; each value appears n / cardinality.
        for name, card in (("shape", 4), ("color", 4), ("size", 2)):
            counts = np.bincount(ds.labels[name], minlength=card)
            assert counts.tolist() == [320 // card] * card

    def test_exhaustive_coverage_guard(self):
        with pytest.raises(ConfigError):
            generate_shapes(None, n=16, image_side=16, noise_std=0.0, seed=7)
        assert generate_shapes(None, n=16, image_side=16, noise_std=0.0, seed=7, exhaustive=False).n_samples == 16

    def test_determinism_byte_identical(self, tmp_path):
        digests = []
        for run in range(2):
            ds = generate_shapes(None, n=64, image_side=16, noise_std=0.02, seed=7)
            path = tmp_path / f"ds{run}.bin"
            save_dataset(ds, path)
            digests.append(hashlib.sha256(path.read_bytes()).hexdigest())
        assert digests[0] == digests[1]

    def test_noise_free_identical_configuration_renders_identically(self):
        # With all jitter sources disabled, samples sharing a combination
        # are pixel-identical.
        radii = {"small": (2.2, 0.0), "large": (3.6, 0.0)}
        ds = generate_shapes(
            None, n=64, image_side=16, noise_std=0.0, seed=7,
            center_jitter=0.0, brightness_max=0.0, radii=radii,
        )
        assert np.array_equal(ds.features[0], ds.features[32])

    def test_features_shape_and_finite(self, small_ds):
        assert small_ds.features.shape == (320, 16 * 16 * 3)
        assert np.isfinite(small_ds.features).all()

    def test_labels_cover_every_attribute(self, small_ds):
        for spec in small_ds.attributes:
            assert spec.name in small_ds.labels
            assert len(small_ds.labels[spec.name]) == small_ds.n_samples

    def test_sample_accessor(self, small_ds):
        s = small_ds.sample(5)
        assert s.features.shape == (768,)
        assert set(s.labels) == {a.name for a in small_ds.attributes}


class TestSplit:
    def test_70_10_20_exact_on_100(self):
        ds = generate_shapes(None, n=100, image_side=16, noise_std=0.0, seed=1, exhaustive=False)
        out = split(ds, (0.70, 0.10, 0.20), seed=3)
        assert [len(out.split_indices(t)) for t in ("train", "val", "test")] == [70, 10, 20]

    def test_all_train(self):
        ds = generate_shapes(None, n=40, image_side=16, noise_std=0.0, seed=1)
        out = split(ds, (1.0, 0.0, 0.0), seed=3)
        assert len(out.split_indices("train")) == 40

    def test_same_seed_same_assignment(self):
        ds = generate_shapes(None, n=64, image_side=16, noise_std=0.0, seed=1)
        a = split(ds, (0.70, 0.10, 0.20), seed=9)
        b = split(ds, (0.70, 0.10, 0.20), seed=9)
        assert np.array_equal(a.split, b.split)

    def test_bad_fractions(self):
        ds = generate_shapes(None, n=40, image_side=16, noise_std=0.0, seed=1)
        with pytest.raises(ConfigError):
            split(ds, (0.5, 0.2, 0.2), seed=0)

    def test_unsplit_dataset_rejects_queries(self):
        ds = generate_shapes(None, n=40, image_side=16, noise_std=0.0, seed=1)
        with pytest.raises(ContractError):
            ds.split_indices("train")


class TestSampleTriplets:
    def test_categorical_oracle_holds_for_all(self, small_ds):
        triplets = sample_triplets(small_ds, "color", "train", 500, rng_seed=11)
        assert len(triplets) == 500
        lab = small_ds.labels["color"]
        for t in triplets:
            assert lab[t.anchor] == lab[t.close] != lab[t.far]
            assert len({t.anchor, t.close, t.far}) == 3

    def test_numeric_ordering_definition(self):
        # Three-point pool: anchor 1.0, values 1.1 and 4.0. The only
        # admissible assignment keeps 1.1 close and 4.0 far.
        attrs = [
            AttributeSpec("height", "numeric", value_range=(0.0, 5.0)),
            AttributeSpec("tag", "categorical", values=("a", "b")),
        ]
        ds = SplitDataset(
            attributes=attrs,
            features=np.zeros((3, 4)),
            labels={"height": np.array([1.0, 1.1, 4.0]), "tag": np.array([0, 1, 0])},
            split=np.zeros(3, dtype=np.int8),
        )
        triplets = sample_triplets(ds, "height", "train", 50, rng_seed=3)
        assert len(triplets) == 50
        for t in triplets:
            assert (t.anchor, t.close, t.far) in {(0, 1, 2), (1, 0, 2)}

    def test_numeric_gap_rule_enforced(self, small_ds):
        triplets = sample_triplets(small_ds, "size_value", "train", 300, rng_seed=5, min_gap=2.0)
        v = small_ds.labels["size_value"]
        for t in triplets:
            dc = abs(v[t.anchor] - v[t.close])
            df = abs(v[t.anchor] - v[t.far])
            assert df > dc and df >= 2.0 * dc

    def test_k_zero_empty(self, small_ds):
        assert sample_triplets(small_ds, "color", "train", 0, rng_seed=1) == []

    def test_nuisance_attribute_rejected(self, small_ds):
        with pytest.raises(ConfigError):
            sample_triplets(small_ds, "pos_x", "train", 10, rng_seed=1)

    def test_single_class_split_infeasible(self):
        attrs = [AttributeSpec("c", "categorical", values=("x", "y"))]
        ds = SplitDataset(
            attributes=attrs,
            features=np.zeros((4, 2)),
            labels={"c": np.array([0, 0, 0, 0])},
            split=np.zeros(4, dtype=np.int8),
        )
        with pytest.raises(InfeasibilityError):
            sample_triplets(ds, "c", "train", 5, rng_seed=1)

    def test_indices_stay_in_split(self, small_ds):
        triplets = sample_triplets(small_ds, "shape", "val", 200, rng_seed=2)
        val = set(small_ds.split_indices("val").tolist())
        for t in triplets:
            assert {t.anchor, t.close, t.far} <= val

    def test_deterministic_per_seed(self, small_ds):
        a = sample_triplets(small_ds, "shape", "train", 100, rng_seed=21)
        b = sample_triplets(small_ds, "shape", "train", 100, rng_seed=21)
        assert a == b


class TestBenchmark:
    def test_equal_sizes_per_condition(self, small_ds):
        tr, va, te = build_benchmark(small_ds, ["shape", "color", "size"], 300, 30, 60, seed=4)
        assert len(tr) == 900 and len(va) == 90 and len(te) == 180
        counts = np.bincount([t.condition for t in tr])
        assert counts.tolist() == [300, 300, 300]

    def test_no_leakage(self, small_ds):
        tr, va, te = build_benchmark(small_ds, CONDS, 200, 20, 40, seed=4)
        assert audit_triplets(small_ds, tr, CONDS, "train") == []
        assert audit_triplets(small_ds, va, CONDS, "val") == []
        assert audit_triplets(small_ds, te, CONDS, "test") == []

    def test_exhaustive_oracle_audit(self, small_ds):
        tr, _, _ = build_benchmark(small_ds, CONDS, 500, 10, 10, seed=9)
        assert audit_triplets(small_ds, tr, CONDS) == []

    def test_audit_flags_planted_violation(self, small_ds):
        tr, _, _ = build_benchmark(small_ds, CONDS, 10, 5, 5, seed=4)
        bad = tr[0]
        planted = Triplet(bad.anchor, bad.far, bad.close, bad.condition)  # swapped
        assert audit_triplets(small_ds, tr + [planted], CONDS) != []

    def test_conflicting_orderings_exist_in_default_configuration(self):
        # The contradictory-notions witness: the same anchor and item pair
        # ordered both ways under two different conditions.
        ds = generate_shapes(None, n=1280, image_side=16, noise_std=0.02, seed=7)
        ds = split(ds, (0.70, 0.10, 0.20), seed=7)
        tr, va, te = build_benchmark(ds, CONDS, 5000, 500, 1000, seed=7)
        pair = find_conflicting_pair([tr, va, te])
        assert pair is not None
        t1, t2 = pair
        assert t1.condition != t2.condition
        assert t1.anchor == t2.anchor and {t1.close, t1.far} == {t2.close, t2.far}
        assert t1.close == t2.far


class TestFiles:
    def test_dataset_round_trip(self, small_ds, tmp_path):
        path = tmp_path / "ds.bin"
        save_dataset(small_ds, path)
        back = load_dataset(path)
        assert np.array_equal(back.features, small_ds.features)
        assert np.array_equal(back.split, small_ds.split)
        for spec in small_ds.attributes:
            assert np.array_equal(back.labels[spec.name], small_ds.labels[spec.name])
        assert [a.name for a in back.attributes] == [a.name for a in small_ds.attributes]

    def test_triplet_file_layout(self, small_ds, tmp_path):
        triplets = sample_triplets(small_ds, "color", "train", 5, rng_seed=1)
        path = tmp_path / "t.txt"
        save_triplets(triplets, path)
        lines = path.read_text().splitlines()
        t = triplets[0]
        assert lines[0] == f"{t.anchor},{t.close},{t.far},{t.condition}"
        assert load_triplets(path) == triplets

    def test_dataset_magic_guard(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"not a dataset")
        with pytest.raises(ContractError):
            load_dataset(path)


def test_default_attributes_shapes_and_nuisance():
    attrs = default_attributes()
    by_name = {a.name: a for a in attrs}
    assert by_name["shape"].values == ("triangle", "circle", "square", "cross")
    assert by_name["color"].values == ("red", "green", "blue", "yellow")
    assert by_name["size"].values == ("small", "large")
    assert by_name["size_value"].kind == "numeric"
    assert by_name["shape_color"].cardinality == 16
    assert by_name["pos_x"].nuisance and by_name["pos_y"].nuisance and by_name["brightness"].nuisance
