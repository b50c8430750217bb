import json

import numpy as np
import pytest

from sbpool.data import (
    Dataset,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    make_batches,
    save_dataset,
)
from sbpool.errors import (
    EmptyDataset,
    InconsistentLabels,
    InvalidSpec,
    MalformedDocument,
)

SMALL = SyntheticSpec(
    n_coarse=2, fines_per_coarse=2, train_per_fine=6, eval_per_fine=3, extent=8, seed=1
)


def nearest_template_predictions(train, ev, by="fine"):
    """Brute-force class-mean classifier, independent of the generator."""
    labels = getattr(train, by)
    classes = int(labels.max()) + 1
    means = np.stack([train.x[labels == c].mean(axis=0) for c in range(classes)])
    d = ((ev.x[:, None] - means[None]) ** 2).sum(axis=(2, 3, 4))
    return d.argmin(axis=1)


class TestGeneration:
    def test_counts(self):
        spec = SyntheticSpec(n_coarse=4, fines_per_coarse=3, train_per_fine=50, eval_per_fine=25)
        train, ev, tree = generate_synthetic(spec)
        assert len(train) == 600 and len(ev) == 300
        assert tree.n_coarse == 4 and tree.n_fine == 12
        assert train.sample_shape == (1, 16, 16)

    def test_deterministic_bitwise(self):
        a_train, a_eval, _ = generate_synthetic(SMALL)
        b_train, b_eval, _ = generate_synthetic(SMALL)
        assert np.array_equal(a_train.x, b_train.x)
        assert np.array_equal(a_eval.x, b_eval.x)

    def test_different_seeds_differ(self):
        a, _, _ = generate_synthetic(SMALL)
        b, _, _ = generate_synthetic(SyntheticSpec(**{**SMALL.to_json_obj(), "seed": 2}))
        assert not np.array_equal(a.x, b.x)

    def test_train_eval_streams_disjoint(self):
        train, ev, _ = generate_synthetic(SMALL)
        assert not np.array_equal(train.x[: len(ev)], ev.x)

    def test_labels_consistent_with_tree(self):
        train, ev, tree = generate_synthetic(SMALL)
        parents = np.asarray(tree.parent)
        assert np.array_equal(parents[train.fine], train.coarse)
        assert np.array_equal(parents[ev.fine], ev.coarse)

    def test_zero_noise_nearest_template_is_perfect(self):
        spec = SyntheticSpec(
            n_coarse=3, fines_per_coarse=2, train_per_fine=4, eval_per_fine=4,
            extent=8, noise_sigma=0.0, seed=0,
        )
        train, ev, tree = generate_synthetic(spec)
        pred_coarse = nearest_template_predictions(train, ev, by="coarse")
        assert (pred_coarse == ev.coarse).mean() == 1.0
        pred_fine = nearest_template_predictions(train, ev, by="fine")
        assert (pred_fine == ev.fine).mean() == 1.0

    def test_default_noise_keeps_coarse_signal_above_fine(self):
        # the regime the trainer experiments rely on: coarse templates
        # survive the noise better than fine details do
        train, ev, tree = generate_synthetic(SyntheticSpec())
        coarse_acc = (nearest_template_predictions(train, ev, "coarse") == ev.coarse).mean()
        fine_acc = (nearest_template_predictions(train, ev, "fine") == ev.fine).mean()
        assert coarse_acc > fine_acc
        assert coarse_acc > 0.95

    def test_invalid_specs(self):
        with pytest.raises(InvalidSpec):
            SyntheticSpec(n_coarse=0)
        with pytest.raises(InvalidSpec):
            SyntheticSpec(extent=2)
        with pytest.raises(InvalidSpec):
            SyntheticSpec(noise_sigma=-1.0)


class TestRoundTrip:
    def test_save_load_identity(self, tmp_path):
        train, _, tree = generate_synthetic(SMALL)
        save_dataset(train, tree, tmp_path / "ds", spec=SMALL)
        loaded, loaded_tree = load_dataset(tmp_path / "ds")
        assert np.array_equal(loaded.x, train.x)
        assert np.array_equal(loaded.coarse, train.coarse)
        assert np.array_equal(loaded.fine, train.fine)
        assert loaded_tree == tree

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(MalformedDocument):
            load_dataset(tmp_path)

    def test_inconsistent_labels_detected(self, tmp_path):
        train, _, tree = generate_synthetic(SMALL)
        save_dataset(train, tree, tmp_path / "ds")
        samples = (tmp_path / "ds" / "samples.csv").read_text().splitlines()
        first = samples[1].split(",")
        first[0] = str((int(first[0]) + 1) % tree.n_coarse)  # break the pairing
        samples[1] = ",".join(first)
        (tmp_path / "ds" / "samples.csv").write_text("\n".join(samples) + "\n")
        with pytest.raises(InconsistentLabels):
            load_dataset(tmp_path / "ds")

    def test_malformed_rows_detected(self, tmp_path):
        train, _, tree = generate_synthetic(SMALL)
        save_dataset(train, tree, tmp_path / "ds")
        path = tmp_path / "ds" / "samples.csv"
        lines = path.read_text().splitlines()
        path.write_text("\n".join([lines[0], "0,0,1.0"]) + "\n")
        with pytest.raises(MalformedDocument):
            load_dataset(tmp_path / "ds")

    def test_count_mismatch_detected(self, tmp_path):
        train, _, tree = generate_synthetic(SMALL)
        save_dataset(train, tree, tmp_path / "ds")
        manifest = json.loads((tmp_path / "ds" / "manifest.json").read_text())
        manifest["count"] += 1
        (tmp_path / "ds" / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(MalformedDocument):
            load_dataset(tmp_path / "ds")


class TestBatching:
    def make_dataset(self, n):
        return Dataset(
            x=np.arange(n, dtype=float).reshape(n, 1, 1, 1),
            coarse=np.zeros(n, dtype=np.int64),
            fine=np.zeros(n, dtype=np.int64),
        )

    def test_sizes_with_short_tail(self):
        batches = make_batches(self.make_dataset(10), 4, seed=0, epoch=0)
        assert [len(b) for b in batches] == [4, 4, 2]

    def test_every_sample_exactly_once(self):
        ds = self.make_dataset(13)
        batches = make_batches(ds, 5, seed=3, epoch=2)
        seen = np.concatenate([b.x.ravel() for b in batches])
        assert sorted(seen.tolist()) == list(range(13))

    def test_same_seed_epoch_identical(self):
        ds = self.make_dataset(12)
        a = make_batches(ds, 5, seed=1, epoch=4)
        b = make_batches(ds, 5, seed=1, epoch=4)
        for x, y in zip(a, b):
            assert np.array_equal(x.x, y.x)

    def test_epochs_permute_differently(self):
        ds = self.make_dataset(32)
        a = np.concatenate([b.x.ravel() for b in make_batches(ds, 8, seed=1, epoch=0)])
        b = np.concatenate([b.x.ravel() for b in make_batches(ds, 8, seed=1, epoch=1)])
        assert not np.array_equal(a, b)

    def test_empty_dataset_rejected(self):
        with pytest.raises(EmptyDataset):
            make_batches(self.make_dataset(0), 4, seed=0, epoch=0)

    def test_bad_batch_size(self):
        with pytest.raises(InvalidSpec):
            make_batches(self.make_dataset(4), 0, seed=0, epoch=0)
