import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from nirfex.data import (
    Dataset,
    GeneratorConfig,
    Sample,
    bilinear_resize,
    generate_synthetic,
    load_image_dir,
    manifest_csv,
    preprocess,
    split_subject_kfold,
    synthetic_incidence,
)
from nirfex.model import NIR, VIS


def small_cfg(**overrides):
    base = dict(image_size=8, subjects=6, samples_per=1, seed=3)
    base.update(overrides)
    return GeneratorConfig(**base)


class TestGenerator:
    def test_same_seed_bit_identical(self):
        a = generate_synthetic(small_cfg())
        b = generate_synthetic(small_cfg())
        assert len(a) == len(b)
        for sa, sb in zip(a.samples, b.samples):
            np.testing.assert_array_equal(sa.pixels, sb.pixels)
            assert (sa.modality, sa.expression, sa.subject) == (
                sb.modality,
                sb.expression,
                sb.subject,
            )

    def test_different_seed_differs(self):
        a = generate_synthetic(small_cfg(seed=3))
        b = generate_synthetic(small_cfg(seed=4))
        assert not np.array_equal(a.samples[0].pixels, b.samples[0].pixels)

    def test_exactly_balanced(self):
        cfg = small_cfg(subjects=4, samples_per=2)
        ds = generate_synthetic(cfg)
        assert len(ds) == 4 * 6 * 2 * 2
        per_class = np.zeros(6, dtype=int)
        per_modality = np.zeros(2, dtype=int)
        for s in ds.samples:
            per_class[s.expression] += 1
            per_modality[s.modality] += 1
        assert np.all(per_class == len(ds) // 6)
        assert np.all(per_modality == len(ds) // 2)

    def test_pixels_in_unit_range(self):
        ds = generate_synthetic(small_cfg())
        for s in ds.samples:
            assert s.pixels.min() >= 0.0 and s.pixels.max() <= 1.0

    def test_nearest_template_oracle_on_clean_mode(self):
        # Brute-force oracle fixing the SNR default: estimate one template
        # per class as the mean image, classify by nearest template.
        cfg = GeneratorConfig(image_size=16, subjects=10, samples_per=2, seed=0)
        ds = generate_synthetic(cfg)
        templates = np.stack(
            [
                np.mean(
                    [s.pixels for s in ds.samples if s.expression == c], axis=0
                )
                for c in range(cfg.n_classes)
            ]
        )
        hits = 0
        for s in ds.samples:
            dists = ((templates - s.pixels) ** 2).sum(axis=(1, 2, 3))
            hits += int(np.argmin(dists) == s.expression)
        assert hits / len(ds) >= 0.99

    def test_custom_au_count_uses_distinct_columns(self):
        rng = np.random.default_rng(0)
        h = synthetic_incidence(12, 6, rng)
        assert h.shape == (12, 6)
        assert h.sum(axis=1).min() >= 1 and h.sum(axis=0).min() >= 1
        assert len({tuple(col) for col in h.T}) == 6

    def test_default_dims_use_shipped_class_names(self):
        ds = generate_synthetic(small_cfg())
        assert "happiness" in ds.class_names
        ds12 = generate_synthetic(small_cfg(n_aus=12))
        assert ds12.class_names[0] == "class0"

    def test_heldout_subjects_designated(self):
        ds = generate_synthetic(small_cfg(subjects=10, heldout_fraction=0.2))
        assert ds.heldout_subjects == (8, 9)

    def test_confound_rho_zero_identical_in_law(self):
        # Per-(class, modality) pixel-mean moments of train vs held-out
        # subjects agree within Monte-Carlo tolerance 3*sigma/sqrt(n).
        cfg = GeneratorConfig(
            image_size=8, subjects=40, samples_per=4, confound_rho=0.0, seed=1,
            subject_strength=0.0,
        )
        ds = generate_synthetic(cfg)
        held = set(ds.heldout_subjects)
        for c in range(2):
            for m in (NIR, VIS):
                train = [
                    s.pixels.mean()
                    for s in ds.samples
                    if s.expression == c and s.modality == m and s.subject not in held
                ]
                test = [
                    s.pixels.mean()
                    for s in ds.samples
                    if s.expression == c and s.modality == m and s.subject in held
                ]
                pooled = np.std(train + test, ddof=1)
                tol = 3.0 * pooled * np.sqrt(1 / len(train) + 1 / len(test))
                assert abs(np.mean(train) - np.mean(test)) <= max(tol, 1e-9)

    def test_confound_shifts_train_statistics_only(self):
        clean = generate_synthetic(small_cfg(confound_rho=0.0, subjects=10))
        confounded = generate_synthetic(small_cfg(confound_rho=0.8, subjects=10))
        held = set(confounded.heldout_subjects)
        train_diff = [
            np.abs(a.pixels - b.pixels).max()
            for a, b in zip(clean.samples, confounded.samples)
            if a.subject not in held
        ]
        assert max(train_diff) > 0.0

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            GeneratorConfig(confound_rho=1.5)
        with pytest.raises(ValueError):
            GeneratorConfig(noise_sigma=-0.1)
        with pytest.raises(ValueError):
            GeneratorConfig(subjects=0)


class TestResizePreprocess:
    def test_checkerboard_hand_bilinear(self):
        # 8x8 checkerboard to 4x4; corner-aligned coordinates are
        # i * 7/3 = [0, 7/3, 14/3, 7]. Hand evaluation of the first row:
        # board row 0 = [0,1,0,1,0,1,0,1]; at x=7/3 the value is
        # (1 - 1/3)*board[2] + (1/3)*board[3] ... with x0=2, frac=1/3 -> 1/3.
        board = np.indices((8, 8)).sum(axis=0) % 2
        img = board[None].astype(float)
        out = bilinear_resize(img, 4, 4)
        ys = np.array([0, 7 / 3, 14 / 3, 7.0])
        want = np.empty((4, 4))
        for i, y in enumerate(ys):
            for j, x in enumerate(ys):
                y0, x0 = int(np.floor(y)), int(np.floor(x))
                y1, x1 = min(y0 + 1, 7), min(x0 + 1, 7)
                fy, fx = y - y0, x - x0
                want[i, j] = (
                    board[y0, x0] * (1 - fy) * (1 - fx)
                    + board[y0, x1] * (1 - fy) * fx
                    + board[y1, x0] * fy * (1 - fx)
                    + board[y1, x1] * fy * fx
                )
        np.testing.assert_allclose(out[0], want, atol=1e-12)

    def test_identity_when_same_size(self):
        img = np.random.default_rng(0).random((2, 5, 5))
        np.testing.assert_array_equal(bilinear_resize(img, 5, 5), img)

    def test_eval_crop_of_uniform_image_is_uniform(self):
        s = Sample(np.full((1, 10, 10), 0.3), NIR, 0, 0)
        out = preprocess(s, 6, train=False, margin=2)
        np.testing.assert_allclose(out.pixels, 0.3, atol=1e-12)
        assert out.pixels.shape == (1, 6, 6)

    def test_train_crop_deterministic_under_seed(self):
        s = Sample(np.random.default_rng(1).random((1, 12, 12)), VIS, 2, 5)
        a = preprocess(s, 8, train=True, seed=42, margin=3)
        b = preprocess(s, 8, train=True, seed=42, margin=3)
        np.testing.assert_array_equal(a.pixels, b.pixels)

    def test_labels_and_range_preserved(self):
        s = Sample(np.random.default_rng(2).random((3, 9, 9)), VIS, 4, 7)
        out = preprocess(s, 9, train=True, seed=0, margin=2)
        assert (out.modality, out.expression, out.subject) == (VIS, 4, 7)
        assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0


class TestLoader:
    def write_png(self, path, shape=(6, 6), value=128):
        path.parent.mkdir(parents=True, exist_ok=True)
        arr = np.full(shape, value, dtype=np.uint8)
        Image.fromarray(arr).save(path)

    def test_empty_directory_errors(self, tmp_path):
        with pytest.raises(ValueError, match="no samples"):
            load_image_dir(tmp_path)

    def test_single_file_parse(self, tmp_path):
        self.write_png(tmp_path / "NIR" / "happiness" / "7_0.png")
        ds = load_image_dir(tmp_path)
        assert len(ds) == 1
        s = ds.samples[0]
        assert s.modality == NIR and s.subject == 7
        assert ds.class_names[s.expression] == "happiness"
        assert s.pixels.shape == (1, 6, 6)
        assert s.pixels.max() <= 1.0

    def test_case_insensitive_folders(self, tmp_path):
        self.write_png(tmp_path / "vis" / "Anger" / "3_1.png")
        ds = load_image_dir(tmp_path)
        assert ds.samples[0].modality == VIS
        assert ds.class_names[ds.samples[0].expression] == "anger"

    def test_unparseable_skipped_with_warning(self, tmp_path):
        self.write_png(tmp_path / "NIR" / "happiness" / "7_0.png")
        self.write_png(tmp_path / "NIR" / "notaclass" / "1_0.png")
        self.write_png(tmp_path / "NIR" / "happiness" / "x_0.png")
        with pytest.warns(UserWarning):
            ds = load_image_dir(tmp_path)
        assert len(ds) == 1

    def test_rgb_image_channels(self, tmp_path):
        p = tmp_path / "VIS" / "disgust" / "2_0.png"
        p.parent.mkdir(parents=True)
        arr = np.zeros((4, 4, 3), dtype=np.uint8)
        arr[..., 1] = 255
        Image.fromarray(arr).save(p)
        ds = load_image_dir(tmp_path)
        assert ds.samples[0].pixels.shape == (3, 4, 4)
        np.testing.assert_allclose(ds.samples[0].pixels[1], 1.0)


class TestKFold:
    def test_ten_subjects_five_folds(self):
        ds = generate_synthetic(small_cfg(subjects=10))
        split = split_subject_kfold(ds, k=5, seed=0)
        sizes = [len(split.fold_subjects(f)) for f in range(5)]
        assert sizes == [2, 2, 2, 2, 2]

    def test_folds_disjoint_and_cover(self):
        ds = generate_synthetic(small_cfg(subjects=11))
        split = split_subject_kfold(ds, k=4, seed=1)
        all_subjects = set()
        for f in range(4):
            fold = split.fold_subjects(f)
            assert fold.isdisjoint(all_subjects)
            all_subjects |= fold
        assert all_subjects == set(ds.subjects())

    def test_same_seed_same_assignment(self):
        ds = generate_synthetic(small_cfg(subjects=9))
        a = split_subject_kfold(ds, k=3, seed=7)
        b = split_subject_kfold(ds, k=3, seed=7)
        assert a.assignment == b.assignment

    def test_too_few_subjects(self):
        ds = generate_synthetic(small_cfg(subjects=3))
        with pytest.raises(ValueError):
            split_subject_kfold(ds, k=5)

    @given(st.integers(2, 5), st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_subject_independence_property(self, k, seed):
        ds = generate_synthetic(small_cfg(subjects=12))
        split = split_subject_kfold(ds, k=k, seed=seed)
        for f in range(k):
            test_subjects = split.fold_subjects(f)
            train_subjects = split.train_subjects(f)
            assert test_subjects.isdisjoint(train_subjects)
            sizes = [len(split.fold_subjects(g)) for g in range(k)]
            assert max(sizes) - min(sizes) <= 1


class TestManifest:
    def test_row_count_and_header(self):
        ds = generate_synthetic(small_cfg(subjects=5))
        text = manifest_csv(ds, split_subject_kfold(ds, k=5, seed=0))
        lines = text.strip().split("\n")
        assert len(lines) == len(ds) + 1
        assert lines[0] == "index,modality,expression,subject,fold"

    def test_reexport_byte_identical(self):
        ds = generate_synthetic(small_cfg())
        assert manifest_csv(ds) == manifest_csv(ds)
