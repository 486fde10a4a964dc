"""Paired feature-vector corpora: synthetic generation, file ingestion,
deterministic splitting/batching, and the two training-noise protocols.

Datasets hold precomputed feature rows only; image decoding and caption
tokenization live upstream of this package.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .linalg import Matrix, as_matrix

SPLIT_TAGS = ("train", "val", "test")

FEATURE_MAGIC = "ALIGNFEAT"
FEATURE_VERSION = 1


class FeatureFileError(Exception):
    """Base class for feature-file parsing failures."""


class HeaderError(FeatureFileError):
    pass


class RecordError(FeatureFileError):
    pass


class DuplicateIdError(FeatureFileError):
    pass


@dataclass
class FeatureDataset:
    """Paired image/text feature rows; row i of both matrices is one pair."""

    img: Matrix  # (P, d_img)
    txt: Matrix  # (P, d_txt)
    pair_ids: list[str]
    split_tag: str = "train"

    def __post_init__(self):
        self.img = as_matrix(self.img)
        self.txt = as_matrix(self.txt)
        if not (self.img.shape[0] == self.txt.shape[0] == len(self.pair_ids)):
            raise ValueError("image rows, text rows, and pair ids must have equal length")
        if len(set(self.pair_ids)) != len(self.pair_ids):
            raise ValueError("pair ids must be unique within a split")
        if self.split_tag not in SPLIT_TAGS:
            raise ValueError(f"split_tag must be one of {SPLIT_TAGS}, got {self.split_tag!r}")

    @property
    def n_pairs(self) -> int:
        return self.img.shape[0]

    @property
    def d_img(self) -> int:
        return self.img.shape[1]

    @property
    def d_txt(self) -> int:
        return self.txt.shape[1]

    def take(self, indices: np.ndarray, split_tag: str) -> "FeatureDataset":
        return FeatureDataset(
            self.img[indices].copy(),
            self.txt[indices].copy(),
            [self.pair_ids[i] for i in indices],
            split_tag,
        )


@dataclass(frozen=True)
class NoiseSpec:
    """Training-noise protocol: swapped captions and/or corrupted image rows."""

    caption_swap_fraction: float = 0.0
    image_noise_fraction: float = 0.0
    target_snr: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.caption_swap_fraction <= 1.0:
            raise ValueError("caption_swap_fraction must lie in [0, 1]")
        if not 0.0 <= self.image_noise_fraction <= 1.0:
            raise ValueError("image_noise_fraction must lie in [0, 1]")
        if self.target_snr <= 0:
            raise ValueError("target_snr must be positive")

    @property
    def is_clean(self) -> bool:
        return self.caption_swap_fraction == 0.0 and self.image_noise_fraction == 0.0

    def label(self) -> str:
        if self.is_clean:
            return "clean"
        parts = []
        if self.caption_swap_fraction > 0:
            parts.append(f"captions{self.caption_swap_fraction:g}")
        if self.image_noise_fraction > 0:
            parts.append(f"images{self.image_noise_fraction:g}snr{self.target_snr:g}")
        return "+".join(parts)


def generate_synthetic(
    p: int,
    latent_dim: int,
    d_img: int,
    d_txt: int,
    noise_scale: float,
    seed: int,
    mixing: tuple[Matrix, Matrix] | None = None,
) -> FeatureDataset:
    """Latent-factor paired corpus: img = A z + eps, txt = B z + eps'.

    A (d_img x latent) and B (d_txt x latent) are fixed seeded mixing matrices
    shared across the dataset; z and the noise terms are standard normal per
    pair. ``mixing`` overrides the drawn (A, B), e.g. to share one map across
    modalities; the latent/noise stream is unaffected by the override.
    """
    if p < 1:
        raise ValueError("need at least one pair")
    if noise_scale < 0:
        raise ValueError("noise_scale must be non-negative")
    if latent_dim < 1 or latent_dim > min(d_img, d_txt):
        raise ValueError(
            f"latent_dim must lie in [1, min(d_img, d_txt)] = [1, {min(d_img, d_txt)}]"
        )
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((d_img, latent_dim))
    b = rng.standard_normal((d_txt, latent_dim))
    if mixing is not None:
        a, b = as_matrix(mixing[0]), as_matrix(mixing[1])
        if a.shape != (d_img, latent_dim) or b.shape != (d_txt, latent_dim):
            raise ValueError("mixing matrices have wrong shapes")
    z = rng.standard_normal((p, latent_dim))
    img = z @ a.T + noise_scale * rng.standard_normal((p, d_img))
    txt = z @ b.T + noise_scale * rng.standard_normal((p, d_txt))
    ids = [f"pair{i:06d}" for i in range(p)]
    return FeatureDataset(img, txt, ids, "train")


def _format_row(row: np.ndarray) -> str:
    return " ".join(format(v, ".17g") for v in row)


def save_features(ds: FeatureDataset, path: str | Path) -> None:
    """Write the text feature-file format (17-significant-digit reals)."""
    lines = [f"{FEATURE_MAGIC} {FEATURE_VERSION} {ds.n_pairs} {ds.d_img} {ds.d_txt}"]
    for i in range(ds.n_pairs):
        lines.append(ds.pair_ids[i])
        lines.append(_format_row(ds.img[i]))
        lines.append(_format_row(ds.txt[i]))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_reals(line: str, expected: int, record: int, what: str) -> np.ndarray:
    parts = line.split()
    if len(parts) != expected:
        raise RecordError(
            f"record {record}: {what} row has {len(parts)} values, expected {expected}"
        )
    try:
        values = np.array([float(v) for v in parts], dtype=np.float64)
    except ValueError as exc:
        raise RecordError(f"record {record}: unparseable {what} value ({exc})") from exc
    if not np.isfinite(values).all():
        raise RecordError(f"record {record}: non-finite {what} value")
    return values


def load_features(path: str | Path, split_tag: str = "train") -> FeatureDataset:
    """Parse a feature file written by :func:`save_features`."""
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise HeaderError(f"{path}: empty file")
    header = lines[0].split()
    if len(header) != 5 or header[0] != FEATURE_MAGIC:
        raise HeaderError(f"{path}: malformed header {lines[0]!r}")
    try:
        version, p, d_img, d_txt = (int(v) for v in header[1:])
    except ValueError as exc:
        raise HeaderError(f"{path}: non-integer header field ({exc})") from exc
    if version != FEATURE_VERSION:
        raise HeaderError(f"{path}: unsupported version {version}")
    if p < 0 or d_img < 1 or d_txt < 1:
        raise HeaderError(f"{path}: invalid dimensions in header")

    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != 3 * p:
        raise RecordError(f"{path}: expected {3 * p} record lines for {p} pairs, found {len(body)}")
    ids: list[str] = []
    seen: set[str] = set()
    img = np.empty((p, d_img))
    txt = np.empty((p, d_txt))
    for i in range(p):
        pair_id = body[3 * i].strip()
        if " " in pair_id:
            raise RecordError(f"record {i}: id line contains whitespace: {pair_id!r}")
        if pair_id in seen:
            raise DuplicateIdError(f"record {i}: duplicate id {pair_id!r}")
        seen.add(pair_id)
        ids.append(pair_id)
        img[i] = _parse_reals(body[3 * i + 1], d_img, i, "image")
        txt[i] = _parse_reals(body[3 * i + 2], d_txt, i, "text")
    return FeatureDataset(img, txt, ids, split_tag)


def split_dataset(
    ds: FeatureDataset, train_frac: float = 0.75, val_frac: float = 0.125, seed: int = 0
) -> tuple[FeatureDataset, FeatureDataset, FeatureDataset]:
    """Seeded-shuffle partition into train/val/test; test takes the remainder."""
    if train_frac <= 0 or val_frac <= 0:
        raise ValueError("split fractions must be positive")
    if train_frac + val_frac >= 1.0:
        raise ValueError("train_frac + val_frac must leave a test remainder")
    p = ds.n_pairs
    n_train = int(np.floor(p * train_frac + 1e-9))
    n_val = int(np.floor(p * val_frac + 1e-9))
    n_test = p - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"split of {p} pairs leaves an empty part: {n_train}/{n_val}/{n_test}")
    perm = np.random.default_rng(seed).permutation(p)
    return (
        ds.take(perm[:n_train], "train"),
        ds.take(perm[n_train : n_train + n_val], "val"),
        ds.take(perm[n_train + n_val :], "test"),
    )


def batches(ds: FeatureDataset, batch_size: int, epoch_seed: int) -> list[np.ndarray]:
    """Seeded per-epoch shuffle chunked into index batches.

    A final batch shorter than 2 is dropped (batch statistics need N >= 2).
    """
    if batch_size < 2:
        raise ValueError(f"batch_size must be >= 2, got {batch_size}")
    perm = np.random.default_rng(epoch_seed).permutation(ds.n_pairs)
    out = [perm[i : i + batch_size] for i in range(0, ds.n_pairs, batch_size)]
    if out and len(out[-1]) < 2:
        out.pop()
    return out


def _derangement(k: int, rng: np.random.Generator) -> np.ndarray:
    # Rejection sampling; expected ~e tries, deterministic given the generator.
    while True:
        perm = rng.permutation(k)
        if not (perm == np.arange(k)).any():
            return perm


def inject_caption_noise(ds: FeatureDataset, spec: NoiseSpec) -> FeatureDataset:
    """Replace a seeded subset of text rows by a derangement within the subset,
    so no selected pair keeps its own caption."""
    frac = spec.caption_swap_fraction
    if frac == 0.0:
        return ds
    k = int(np.floor(frac * ds.n_pairs))
    if k < 2:
        raise ValueError(
            f"caption noise needs at least 2 selected rows to swap, got {k} "
            f"(fraction {frac} of {ds.n_pairs})"
        )
    rng = np.random.default_rng([spec.seed, 0])
    selected = rng.choice(ds.n_pairs, size=k, replace=False)
    perm = _derangement(k, rng)
    txt = ds.txt.copy()
    txt[selected] = ds.txt[selected[perm]]
    return replace(ds, txt=txt, pair_ids=list(ds.pair_ids))


def inject_image_noise(ds: FeatureDataset, spec: NoiseSpec) -> FeatureDataset:
    """Add Gaussian noise to a seeded subset of image rows at the target SNR.

    Per-coordinate noise std is |x| / sqrt(snr * d_img), so the expected noise
    energy is |x|^2 / snr.
    """
    frac = spec.image_noise_fraction
    if frac == 0.0:
        return ds
    k = int(np.floor(frac * ds.n_pairs))
    if k < 1:
        raise ValueError(
            f"image noise selects no rows (fraction {frac} of {ds.n_pairs})"
        )
    rng = np.random.default_rng([spec.seed, 1])
    selected = rng.choice(ds.n_pairs, size=k, replace=False)
    rows = ds.img[selected]
    norms = np.sqrt((rows * rows).sum(axis=1))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValueError(f"cannot corrupt zero-norm image row {int(selected[zero[0]])}")
    std = norms / np.sqrt(spec.target_snr * ds.d_img)
    img = ds.img.copy()
    img[selected] = rows + std[:, None] * rng.standard_normal(rows.shape)
    return replace(ds, img=img, pair_ids=list(ds.pair_ids))


def apply_noise(ds: FeatureDataset, spec: NoiseSpec) -> FeatureDataset:
    """Apply both configured noise protocols (captions first)."""
    return inject_image_noise(inject_caption_noise(ds, spec), spec)
