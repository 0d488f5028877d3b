"""Dataset model, synthetic two-modality generator, directory loader,
preprocessing, and subject-independent k-fold splitting.

The generator stands in for lab-captured NIR/VIS expression corpora at desk
scale. Each class renders as the sum of the action-unit patterns active for
it in the knowledge hypergraph, so class structure mirrors the AU incidence;
modality adds a fixed spectral signature (channel collapse plus a band
pattern for NIR, a color cast for VIS), subjects add a fixed offset field,
and samples add Gaussian noise. Everything derives from per-sample
substreams of one seed, so generation is order- and schedule-independent.

Confound mode (rho > 0) couples modality with class on the designated
training subjects and decorrelates them on the held-out subjects, so
spectral shortcuts learned in training stop working at test time. Three
couplings are available: "patterns" adds a cue field drawn per
(modality, class); "signature" modulates the modality-signature amplitude
by a class-indexed gain; "noise" modulates the per-sample noise scale by a
(modality, class)-indexed gain. At rho = 0 all splits are identical in
law.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .hypergraph import Hypergraph, default_hypergraph
from .model import MODALITY_NAMES, NIR, VIS

IMAGE_EXTENSIONS = (".png", ".pgm", ".bmp")


@dataclass
class Sample:
    pixels: np.ndarray  # (C, H, W) in [0, 1]
    modality: int  # NIR = 0, VIS = 1
    expression: int
    subject: int


@dataclass
class Dataset:
    samples: list[Sample]
    class_names: tuple[str, ...]
    # Subjects the generator designates as the evaluation split in the
    # confound protocol; empty for loaded datasets.
    heldout_subjects: tuple[int, ...] = ()

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subjects(self) -> list[int]:
        return sorted({s.subject for s in self.samples})

    def indices(self, subjects=None, modality: int | None = None) -> list[int]:
        subjects = None if subjects is None else set(subjects)
        out = []
        for i, s in enumerate(self.samples):
            if subjects is not None and s.subject not in subjects:
                continue
            if modality is not None and s.modality != modality:
                continue
            out.append(i)
        return out


@dataclass
class GeneratorConfig:
    image_size: int = 16
    channels: int = 1
    n_classes: int = 6
    n_aus: int = 13
    subjects: int = 20
    samples_per: int = 2  # per (subject, class, modality)
    noise_sigma: float = 0.06
    au_strength: float = 0.35
    modality_strength: float = 0.2
    subject_strength: float = 0.08
    confound_rho: float = 0.0
    confound_strength: float = 0.6
    confound_style: str = "patterns"
    heldout_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if min(self.image_size, self.channels, self.n_classes, self.n_aus) < 1:
            raise ValueError("image size, channels, classes, and AU count must be >= 1")
        if self.subjects < 1 or self.samples_per < 1:
            raise ValueError("subjects and samples_per must be >= 1")
        for name in ("noise_sigma", "au_strength", "modality_strength",
                     "subject_strength", "confound_strength"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.confound_rho <= 1.0:
            raise ValueError(f"confound_rho must be in [0, 1], got {self.confound_rho}")
        if self.confound_style not in ("patterns", "signature", "noise"):
            raise ValueError(f"unknown confound_style {self.confound_style!r}")
        if not 0.0 <= self.heldout_fraction < 1.0:
            raise ValueError("heldout_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, doc: dict) -> "GeneratorConfig":
        return cls(**doc)


# -- resizing and cropping -------------------------------------------------


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resampling of a (C, H, W) image.

    Output pixel i samples input coordinate i * (in - 1) / (out - 1); a
    single-pixel output samples the center.
    """
    img = np.asarray(img, dtype=np.float64)
    c, h, w = img.shape
    if out_h == h and out_w == w:
        return img.copy()

    def grid(n_in, n_out):
        if n_out == 1:
            return np.array([(n_in - 1) / 2.0])
        return np.arange(n_out) * (n_in - 1) / (n_out - 1)

    ys, xs = grid(h, out_h), grid(w, out_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bot = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def preprocess(
    sample: Sample,
    target_size: int,
    train: bool,
    seed: int = 0,
    margin: int = 2,
) -> Sample:
    """Resize to target + margin, then random crop (train) or center crop."""
    if margin < 0:
        raise ValueError("margin must be >= 0")
    resized = bilinear_resize(sample.pixels, target_size + margin, target_size + margin)
    if margin == 0:
        top = left = 0
    elif train:
        rng = np.random.default_rng(seed)
        top, left = (int(v) for v in rng.integers(0, margin + 1, size=2))
    else:
        top = left = margin // 2
    pixels = resized[:, top : top + target_size, left : left + target_size]
    return replace(sample, pixels=np.clip(pixels, 0.0, 1.0))


# -- synthetic generation ----------------------------------------------------


def _smooth_field(rng: np.random.Generator, channels: int, size: int, coarse: int = 4) -> np.ndarray:
    """Zero-mean smooth random field, scaled to unit max amplitude."""
    coarse = min(coarse, size)
    grid = rng.normal(size=(channels, coarse, coarse))
    f = bilinear_resize(grid, size, size)
    f -= f.mean()
    peak = np.abs(f).max()
    return f / peak if peak > 0 else f


def synthetic_incidence(n_aus: int, n_classes: int, rng: np.random.Generator) -> np.ndarray:
    """Binary AU/class incidence with no empty rows or columns and pairwise
    distinct class columns; used when the requested size differs from the
    packaged knowledge table."""
    for _ in range(1000):
        h = (rng.random((n_aus, n_classes)) < 0.35).astype(float)
        for j in range(n_classes):
            if h[:, j].sum() < 1:
                h[rng.integers(n_aus), j] = 1.0
        for i in range(n_aus):
            if h[i].sum() < 1:
                h[i, rng.integers(n_classes)] = 1.0
        cols = {tuple(col) for col in h.T}
        if len(cols) == n_classes:
            return h
    raise ValueError(
        f"could not draw a distinct-column incidence for {n_aus} AUs x {n_classes} classes"
    )


def _modality_signature(cfg: GeneratorConfig) -> dict[int, np.ndarray]:
    """Fixed unit-amplitude spectral signatures: horizontal bands for NIR,
    vertical bands plus a channel cast for VIS."""
    size, c = cfg.image_size, cfg.channels
    rows = np.sin(2.0 * np.pi * np.arange(size) * 2.0 / size)
    cols = np.cos(2.0 * np.pi * np.arange(size) * 3.0 / size)
    nir = np.broadcast_to(rows[None, :, None], (c, size, size)).copy()
    vis = np.broadcast_to(cols[None, None, :], (c, size, size)).copy()
    if c > 1:
        cast = np.linspace(0.5, -0.5, c)[:, None, None]
        vis = vis + cast
    return {NIR: nir, VIS: vis}


def generate_synthetic(cfg: GeneratorConfig, graph: Hypergraph | None = None) -> Dataset:
    """Deterministic synthetic dataset; content is a pure function of cfg."""
    root = np.random.SeedSequence(cfg.seed)
    pattern_seq, confound_seq, sample_seq = root.spawn(3)
    rng = np.random.default_rng(pattern_seq)

    if graph is None:
        graph = default_hypergraph()
    if (cfg.n_aus, cfg.n_classes) == (graph.n_vertices, graph.n_edges):
        incidence = graph.incidence
        class_names = graph.edge_names
    else:
        incidence = synthetic_incidence(cfg.n_aus, cfg.n_classes, rng)
        class_names = tuple(f"class{j}" for j in range(cfg.n_classes))

    au_patterns = np.stack(
        [_smooth_field(rng, cfg.channels, cfg.image_size) for _ in range(cfg.n_aus)]
    )
    templates = np.einsum("ve,vchw->echw", incidence, au_patterns) * cfg.au_strength
    signatures = _modality_signature(cfg)
    subject_offsets = np.stack(
        [
            _smooth_field(rng, cfg.channels, cfg.image_size) * cfg.subject_strength
            for _ in range(cfg.subjects)
        ]
    )

    # Cue tables per confound style; all vanish with rho.
    amp = cfg.confound_rho * cfg.confound_strength
    confound_rng = np.random.default_rng(confound_seq)
    cue_fields = np.stack(
        [
            np.stack(
                [
                    _smooth_field(confound_rng, cfg.channels, cfg.image_size)
                    for _ in range(cfg.n_classes)
                ]
            )
            for _ in range(2)
        ]
    ) * amp
    signature_gains = np.linspace(-1.0, 1.0, cfg.n_classes) * amp
    noise_gains = np.linspace(0.0, 1.0, cfg.n_classes) * amp

    n_heldout = int(round(cfg.subjects * cfg.heldout_fraction))
    heldout = tuple(range(cfg.subjects - n_heldout, cfg.subjects)) if n_heldout else ()
    heldout_set = set(heldout)

    total = cfg.subjects * cfg.n_classes * 2 * cfg.samples_per
    streams = sample_seq.spawn(total)
    samples: list[Sample] = []
    idx = 0
    for subject in range(cfg.subjects):
        for expression in range(cfg.n_classes):
            for modality in (NIR, VIS):
                for _ in range(cfg.samples_per):
                    srng = np.random.default_rng(streams[idx])
                    idx += 1
                    img = 0.5 + templates[expression] + subject_offsets[subject]
                    if modality == NIR and cfg.channels > 1:
                        img = np.broadcast_to(
                            img.mean(axis=0, keepdims=True), img.shape
                        ).copy()
                    img = img + signatures[modality] * cfg.modality_strength
                    sigma = cfg.noise_sigma
                    if cfg.confound_rho > 0:
                        cue_class = (
                            int(srng.integers(cfg.n_classes))
                            if subject in heldout_set
                            else expression
                        )
                        if cfg.confound_style == "patterns":
                            img = img + cue_fields[modality, cue_class]
                        elif cfg.confound_style == "signature":
                            img = img + signatures[modality] * signature_gains[cue_class]
                        else:  # noise scale, class order reversed per modality
                            idx_for_modality = (
                                cue_class if modality == VIS
                                else cfg.n_classes - 1 - cue_class
                            )
                            sigma = sigma * (1.0 + noise_gains[idx_for_modality])
                    img = img + srng.normal(0.0, sigma, size=img.shape)
                    samples.append(
                        Sample(
                            pixels=np.clip(img, 0.0, 1.0),
                            modality=modality,
                            expression=expression,
                            subject=subject,
                        )
                    )
    return Dataset(samples=samples, class_names=class_names, heldout_subjects=heldout)


# -- directory loading -------------------------------------------------------


def load_image_dir(root: str | Path, class_names: tuple[str, ...] | None = None) -> Dataset:
    """Load root/<modality>/<expression>/<subject>_<idx>.<ext> as a Dataset.

    Modality and expression folder names resolve case-insensitively;
    unparseable entries are skipped with a warning.
    """
    root = Path(root)
    if class_names is None:
        class_names = default_hypergraph().edge_names
    class_index = {name.lower(): i for i, name in enumerate(class_names)}
    modality_index = {name.lower(): i for i, name in enumerate(MODALITY_NAMES)}

    samples: list[Sample] = []
    for path in sorted(root.rglob("*")):
        if not path.is_file() or path.suffix.lower() not in IMAGE_EXTENSIONS:
            continue
        rel = path.relative_to(root)
        if len(rel.parts) != 3:
            warnings.warn(f"skipping {path}: expected <modality>/<expression>/<file>")
            continue
        modality = modality_index.get(rel.parts[0].lower())
        expression = class_index.get(rel.parts[1].lower())
        stem_parts = path.stem.split("_")
        if modality is None or expression is None or len(stem_parts) != 2:
            warnings.warn(f"skipping {path}: unrecognized modality/class/file name")
            continue
        try:
            subject = int(stem_parts[0])
        except ValueError:
            warnings.warn(f"skipping {path}: subject id {stem_parts[0]!r} is not an integer")
            continue
        with Image.open(path) as im:
            arr = np.asarray(im, dtype=np.float64) / 255.0
        pixels = arr[None, :, :] if arr.ndim == 2 else arr.transpose(2, 0, 1)
        samples.append(
            Sample(pixels=pixels, modality=modality, expression=expression, subject=subject)
        )
    if not samples:
        raise ValueError(f"no samples found under {root}")
    return Dataset(samples=samples, class_names=tuple(class_names))


# -- subject-independent folds ------------------------------------------------


@dataclass
class FoldSplit:
    assignment: dict[int, int]  # subject id -> fold index
    k: int

    def fold_subjects(self, fold: int) -> set[int]:
        return {s for s, f in self.assignment.items() if f == fold}

    def train_subjects(self, fold: int) -> set[int]:
        return {s for s, f in self.assignment.items() if f != fold}


def split_subject_kfold(dataset: Dataset, k: int = 5, seed: int = 0) -> FoldSplit:
    """Shuffle subjects by seed, deal them round-robin into k folds."""
    subjects = dataset.subjects()
    if len(subjects) < k:
        raise ValueError(f"need at least {k} subjects for {k}-fold splits, have {len(subjects)}")
    order = np.random.default_rng(seed).permutation(len(subjects))
    assignment = {subjects[int(pos)]: i % k for i, pos in enumerate(order)}
    return FoldSplit(assignment=assignment, k=k)


def manifest_csv(dataset: Dataset, split: FoldSplit | None = None) -> str:
    """One row per sample: index, modality, class, subject, fold."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["index", "modality", "expression", "subject", "fold"])
    for i, s in enumerate(dataset.samples):
        fold = "" if split is None else split.assignment.get(s.subject, "")
        writer.writerow(
            [i, MODALITY_NAMES[s.modality], dataset.class_names[s.expression], s.subject, fold]
        )
    return buf.getvalue()
