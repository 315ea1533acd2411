import numpy as np
import pytest

from oodkit import (
    ConfigError,
    SynthSpec,
    gen_synthetic_benchmark,
    load_head,
    read_dump,
)

SMALL = dict(
    num_classes=3,
    feature_dim=8,
    n_train=60,
    n_val=30,
    n_test=40,
    n_ood=40,
    components_per_group=2,
    dropout_samples=3,
)


def _tree_bytes(root):
    return {
        p.relative_to(root): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


class TestSpecValidation:
    def test_defaults_valid(self):
        SynthSpec()

    def test_needs_two_classes(self):
        with pytest.raises(ConfigError):
            SynthSpec(num_classes=1)

    def test_dim_must_exceed_classes(self):
        with pytest.raises(ConfigError, match="orthogonal"):
            SynthSpec(num_classes=8, feature_dim=8)

    def test_heavy_tail_df_bound(self):
        with pytest.raises(ConfigError):
            SynthSpec(heavy_tail_df=2.0)

    def test_positive_counts(self):
        with pytest.raises(ConfigError):
            SynthSpec(n_val=0)


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    spec = SynthSpec(**SMALL, seed=7)
    manifest = gen_synthetic_benchmark(
        spec, out, backbones=("bb-a", "bb-b"), seeds=(0, 1)
    )
    return spec, out, manifest


class TestGeneration:
    def test_manifest_structure(self, bench):
        spec, _, manifest = bench
        assert manifest.backbones == ("bb-a", "bb-b")
        assert manifest.seeds == (0, 1)
        assert len(manifest.entries) == 4
        assert manifest.group_names == ("far_bp", "far_general", "near")
        assert manifest.class_names == tuple(f"class_{i}" for i in range(3))

    def test_split_shapes_and_channels(self, bench):
        spec, _, manifest = bench
        entry = manifest.entry("bb-a", 0)
        dump = read_dump(entry.id_train)
        train, aug = dump.data, dump.aug
        assert train.features.shape == (spec.n_train, spec.feature_dim)
        assert train.labels.shape == (spec.n_train,)
        assert train.logits.shape == (spec.n_train, spec.num_classes)
        assert aug.dropout_prob_stacks.shape == (
            spec.n_train,
            spec.dropout_samples,
            spec.num_classes,
        )
        # the odin channel carries the unperturbed logits
        np.testing.assert_array_equal(aug.odin_logits, train.logits)

    def test_ood_split_has_no_labels(self, bench):
        _, _, manifest = bench
        entry = manifest.entry("bb-a", 0)
        ood = read_dump(entry.ood_groups["near"][0]).data
        assert ood.labels is None
        assert ood.n == SMALL["n_ood"]

    def test_labels_balanced(self, bench):
        spec, _, manifest = bench
        train = read_dump(manifest.entry("bb-b", 1).id_train).data
        counts = np.bincount(train.labels, minlength=spec.num_classes)
        assert counts.max() - counts.min() <= 1

    def test_logits_come_from_saved_head(self, bench):
        _, _, manifest = bench
        entry = manifest.entry("bb-b", 0)
        head = load_head(entry.head)
        test = read_dump(entry.id_test).data
        np.testing.assert_allclose(
            test.logits, head.logits(test.features), atol=1e-5
        )

    def test_entries_differ(self, bench):
        _, _, manifest = bench
        a = read_dump(manifest.entry("bb-a", 0).id_train).data
        b = read_dump(manifest.entry("bb-a", 1).id_train).data
        c = read_dump(manifest.entry("bb-b", 0).id_train).data
        assert not np.array_equal(a.features, b.features)
        assert not np.array_equal(a.features, c.features)


class TestDeterminism:
    def test_reruns_byte_identical(self, tmp_path):
        spec = SynthSpec(**SMALL, seed=3)
        gen_synthetic_benchmark(spec, tmp_path / "one", seeds=(0, 1))
        gen_synthetic_benchmark(spec, tmp_path / "two", seeds=(0, 1))
        one = _tree_bytes(tmp_path / "one")
        two = _tree_bytes(tmp_path / "two")
        assert list(one) == list(two)
        for rel, blob in one.items():
            assert blob == two[rel], f"{rel} differs between reruns"

    def test_seed_changes_output(self, tmp_path):
        gen_synthetic_benchmark(SynthSpec(**SMALL, seed=1), tmp_path / "one")
        gen_synthetic_benchmark(SynthSpec(**SMALL, seed=2), tmp_path / "two")
        one = _tree_bytes(tmp_path / "one")
        two = _tree_bytes(tmp_path / "two")
        assert any(
            one[rel] != two[rel] for rel in one if rel.suffix == ".oodf"
        )


class TestGeometry:
    def test_zero_dials_are_standard_normal(self, tmp_path):
        spec = SynthSpec(
            **{**SMALL, "n_train": 2000},
            separation=0.0,
            near_shift=0.0,
            far_shift=0.0,
            seed=11,
        )
        manifest = gen_synthetic_benchmark(spec, tmp_path)
        train = read_dump(manifest.entry("synth-a", 0).id_train).data
        assert abs(train.features.mean()) < 0.05
        assert abs(train.features.std() - 1.0) < 0.05

    def test_far_sits_off_the_class_span(self, tmp_path):
        spec = SynthSpec(**{**SMALL, "n_ood": 500}, separation=6.0, far_shift=8.0)
        manifest = gen_synthetic_benchmark(spec, tmp_path)
        entry = manifest.entry("synth-a", 0)
        train = read_dump(entry.id_train).data
        far = read_dump(entry.ood_groups["far_bp"][0]).data
        # class means span a subspace; far centers are orthogonal to it, so
        # far features stay far from every class mean
        means = np.stack(
            [train.features[train.labels == k].mean(axis=0) for k in range(3)]
        )
        d_far = np.linalg.norm(
            far.features[:, None, :] - means[None], axis=2
        ).min(axis=1)
        d_id = np.linalg.norm(
            train.features[:, None, :] - means[None], axis=2
        ).min(axis=1)
        assert np.median(d_far) > np.median(d_id) + 4.0

    def test_heavy_tail_noise_keeps_unit_scale(self, tmp_path):
        spec = SynthSpec(
            **{**SMALL, "n_train": 2000},
            separation=0.0,
            near_shift=0.0,
            far_shift=0.0,
            heavy_tail_df=5.0,
            seed=4,
        )
        manifest = gen_synthetic_benchmark(spec, tmp_path)
        train = read_dump(manifest.entry("synth-a", 0).id_train).data
        assert np.all(np.isfinite(train.features))
        assert abs(train.features.std() - 1.0) < 0.1
        # excess kurtosis of t(5) is 6, comfortably above Gaussian noise
        z = train.features.ravel()
        kurt = np.mean(z**4) / np.mean(z**2) ** 2 - 3.0
        assert kurt > 1.0
