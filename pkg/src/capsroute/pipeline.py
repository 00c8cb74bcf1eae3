"""Frame-sequence data pipeline.

Turns directories of pre-cropped face frames into fixed-length grayscale
clips: luminance + bilinear resize to the working resolution, middle-window
frame selection, mirror/rotation augmentation (8 variants per clip), manifest
and split handling, and a deterministic synthetic dataset generator used by
the desk-scale test suites.

Manifest format (UTF-8, tab separated)::

    # labels: angry,happy,sad
    frames/happy_000<TAB>happy[<TAB>subject_id]

The header names the label vocabulary; it is kept sorted so the name->index
mapping is stable. The optional third column names the subject for
subject-disjoint splitting.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import IngestionError, ManifestError, SequenceTooShortError

ROTATION_DEGREES = (5.0, 10.0, 15.0, -5.0, -10.0, -15.0)
AUGMENT_FACTOR = 2 + len(ROTATION_DEGREES)
DEFAULT_WINDOW = 16


def worker_count() -> int:
    """Parallelism cap: CAPSROUTE_THREADS when set, else the CPU count."""
    limit = os.cpu_count() or 1
    raw = os.environ.get("CAPSROUTE_THREADS")
    if raw:
        try:
            limit = max(1, min(limit, int(raw)))
        except ValueError:
            raise IngestionError(f"CAPSROUTE_THREADS must be an integer, got {raw!r}")
    return limit


# ---------------------------------------------------------------------------
# single-frame normalization
# ---------------------------------------------------------------------------

def _bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Pixel-center-aligned bilinear resample of a 2-D array."""
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    src_y = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    src_x = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(src_y).astype(int)
    x0 = np.floor(src_x).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (src_y - y0)[:, None]
    wx = (src_x - x0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bottom = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bottom * wy


def normalize_frame(image: np.ndarray, side: int = 48) -> np.ndarray:
    """Any grayscale/color raster -> [1, side, side] float frame in [0, 1].

    Color input collapses to luminance 0.299 R + 0.587 G + 0.114 B. Integer
    inputs are assumed 8-bit; float inputs are assumed already in [0, 1].
    """
    arr = np.asarray(image)
    if arr.size == 0:
        raise IngestionError("empty image")
    if arr.ndim == 3 and arr.shape[2] in (3, 4):
        rgb = arr[..., :3].astype(np.float64)
        gray = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    elif arr.ndim == 2:
        gray = arr.astype(np.float64)
    else:
        raise IngestionError(f"unsupported raster shape {arr.shape}")
    if np.issubdtype(arr.dtype, np.integer):
        gray = gray / 255.0
    resized = _bilinear_resize(gray, side, side)
    return np.clip(resized, 0.0, 1.0)[None, :, :]


# ---------------------------------------------------------------------------
# clip container and window selection
# ---------------------------------------------------------------------------

@dataclass
class FrameSequence:
    """A fixed-length grayscale clip with one class label."""

    frames: np.ndarray  # [T, 1, side, side], pixels in [0, 1]
    label: int
    source_id: str

    def __post_init__(self):
        f = self.frames
        if f.ndim != 4 or f.shape[1] != 1 or f.shape[2] != f.shape[3]:
            raise IngestionError(f"clip {self.source_id!r}: bad frame block shape {f.shape}")
        if f.min() < 0.0 or f.max() > 1.0:
            raise IngestionError(f"clip {self.source_id!r}: pixels outside [0, 1]")
        if self.label < 0:
            raise IngestionError(f"clip {self.source_id!r}: negative label {self.label}")


def select_middle_frames(frames: Sequence, window: int = DEFAULT_WINDOW) -> list:
    """The centered length-``window`` subsequence, start index floor((L-w)/2)."""
    length = len(frames)
    if length < window:
        raise SequenceTooShortError(length, window)
    start = (length - window) // 2
    return list(frames[start : start + window])


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

def _rotate_frame(img: np.ndarray, degrees: float) -> np.ndarray:
    """Bilinear rotation about the image center; edges replicate outward."""
    h, w = img.shape
    theta = math.radians(degrees)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    dy = np.arange(h)[:, None] - cy
    dx = np.arange(w)[None, :] - cx
    src_y = np.clip(cy + cos_t * dy - sin_t * dx, 0.0, h - 1.0)
    src_x = np.clip(cx + sin_t * dy + cos_t * dx, 0.0, w - 1.0)
    y0 = np.floor(src_y).astype(int)
    x0 = np.floor(src_x).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = src_y - y0
    wx = src_x - x0
    top = img[y0, x0] * (1 - wx) + img[y0, x1] * wx
    bottom = img[y1, x0] * (1 - wx) + img[y1, x1] * wx
    return top * (1 - wy) + bottom * wy


def mirror_sequence(seq: FrameSequence) -> FrameSequence:
    return FrameSequence(frames=seq.frames[:, :, :, ::-1].copy(), label=seq.label,
                         source_id=seq.source_id + "#mirror")


def rotate_sequence(seq: FrameSequence, degrees: float) -> FrameSequence:
    rotated = np.stack([_rotate_frame(f[0], degrees)[None] for f in seq.frames])
    return FrameSequence(frames=np.clip(rotated, 0.0, 1.0), label=seq.label,
                         source_id=f"{seq.source_id}#rot{degrees:+g}")


def augment_x8(seq: FrameSequence) -> list[FrameSequence]:
    """Original, horizontal mirror, and six rotations of the original.

    One transform applies to every frame of the clip so temporal coherence
    survives; labels are untouched.
    """
    out = [FrameSequence(frames=seq.frames.copy(), label=seq.label, source_id=seq.source_id)]
    out.append(mirror_sequence(seq))
    out.extend(rotate_sequence(seq, deg) for deg in ROTATION_DEGREES)
    return out


# ---------------------------------------------------------------------------
# PNG io
# ---------------------------------------------------------------------------

def read_frame_file(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            if img.mode in ("L", "I", "F"):
                return np.asarray(img.convert("L"))
            return np.asarray(img.convert("RGB"))
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise IngestionError(f"cannot read frame file {path}: {exc}") from exc


def write_frame_file(path, frame: np.ndarray) -> None:
    """Store a [0, 1] float frame (2-D or [1, h, w]) as 8-bit grayscale PNG."""
    img = frame[0] if frame.ndim == 3 else frame
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path)


# ---------------------------------------------------------------------------
# manifest and splits
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    path: str
    label: str
    subject: Optional[str] = None

    def subject_key(self) -> str:
        if self.subject:
            return self.subject
        stem = Path(self.path).name
        return stem.split("_", 1)[0]


@dataclass
class DatasetManifest:
    labels: tuple
    entries: list
    root: Path

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    def label_index(self, name: str) -> int:
        try:
            return self.labels.index(name)
        except ValueError:
            raise ManifestError(f"label {name!r} not in vocabulary {self.labels}")


def write_manifest(path, labels: Iterable[str], entries: Iterable[ManifestEntry]) -> None:
    labels = tuple(sorted(set(labels)))
    lines = ["# labels: " + ",".join(labels)]
    for e in entries:
        cols = [e.path, e.label] + ([e.subject] if e.subject else [])
        lines.append("\t".join(cols))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("# labels:"):
        raise ManifestError(f"{path}: first line must be '# labels: a,b,...'")
    labels = tuple(sorted(v.strip() for v in lines[0].split(":", 1)[1].split(",") if v.strip()))
    if not labels:
        raise ManifestError(f"{path}: empty label vocabulary")
    entries = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) not in (2, 3):
            raise ManifestError(f"{path}:{lineno}: expected 'path<TAB>label[<TAB>subject]'")
        entry = ManifestEntry(path=cols[0].strip(), label=cols[1].strip(),
                              subject=cols[2].strip() if len(cols) == 3 else None)
        if entry.label not in labels:
            raise ManifestError(f"{path}:{lineno}: label {entry.label!r} not in vocabulary")
        entries.append(entry)
    return DatasetManifest(labels=labels, entries=entries, root=path.parent)


def split_entries(manifest: DatasetManifest, seed: int, test_fraction: float,
                  by_subject: bool = False):
    """Deterministic disjoint (train, test) split covering every entry."""
    entries = manifest.entries
    rng = np.random.default_rng(seed)
    if not entries:
        return [], []
    if by_subject:
        subjects = sorted({e.subject_key() for e in entries})
        order = [subjects[i] for i in rng.permutation(len(subjects))]
        target = test_fraction * len(entries)
        test_subjects, covered = set(), 0
        for s in order:
            if covered >= target:
                break
            test_subjects.add(s)
            covered += sum(1 for e in entries if e.subject_key() == s)
        test = [e for e in entries if e.subject_key() in test_subjects]
        train = [e for e in entries if e.subject_key() not in test_subjects]
        return train, test
    order = rng.permutation(len(entries))
    n_test = int(round(test_fraction * len(entries)))
    test = [entries[i] for i in order[:n_test]]
    train = [entries[i] for i in order[n_test:]]
    return train, test


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def load_sequence_dir(seq_dir, label: int, source_id: str, side: int,
                      window: int = DEFAULT_WINDOW) -> FrameSequence:
    seq_dir = Path(seq_dir)
    files = sorted(seq_dir.glob("*.png"))
    if not files:
        raise IngestionError(f"no frame files under {seq_dir}")
    chosen = select_middle_frames(files, window)
    frames = np.stack([normalize_frame(read_frame_file(f), side) for f in chosen])
    return FrameSequence(frames=frames, label=label, source_id=source_id)


def load_dataset(manifest_path, split: str, augment: bool, side: int = 48,
                 window: int = DEFAULT_WINDOW, split_seed: int = 0,
                 test_fraction: float = 0.2, by_subject: bool = False,
                 data_root=None) -> Iterator[FrameSequence]:
    """Stream clips for one split in a seed-determined order.

    Augmentation expands the training split only; the test split always
    streams originals. Manifest entries resolve against ``data_root`` when
    given, else against the manifest's own directory.
    """
    if split not in ("train", "test", "all"):
        raise ManifestError(f"split must be train/test/all, got {split!r}")
    manifest = load_manifest(manifest_path)
    root = Path(data_root) if data_root is not None else manifest.root
    train, test = split_entries(manifest, split_seed, test_fraction, by_subject)
    chosen = {"train": train, "test": test, "all": train + test}[split]

    def load_one(entry: ManifestEntry) -> list[FrameSequence]:
        seq_dir = root / entry.path
        seq = load_sequence_dir(seq_dir, manifest.label_index(entry.label), entry.path,
                                side, window)
        if augment and split == "train":
            return augment_x8(seq)
        return [seq]

    workers = worker_count()
    if workers <= 1 or len(chosen) <= 1:
        for entry in chosen:
            yield from load_one(entry)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for group in pool.map(load_one, chosen):  # map preserves submission order
            yield from group


# ---------------------------------------------------------------------------
# synthetic dataset
# ---------------------------------------------------------------------------

def _render_moving_bar(rng: np.random.Generator, class_index: int, num_classes: int,
                       side: int, frame_count: int) -> np.ndarray:
    """One clip of a bright oriented bar drifting along a class-specific track.

    Class k puts its bar on its own row band with its own orientation
    (vertical for even k, horizontal for odd k) and moves it left-to-right
    for even k, right-to-left for odd k, so 2-class sets stay linearly
    separable by the sign of the mean horizontal displacement while the
    orientation gives the convolution stack a strong static cue.
    """
    row = side * (class_index + 1.0) / (num_classes + 1.0) + rng.uniform(-1.5, 1.5)
    direction = 1.0 if class_index % 2 == 0 else -1.0
    span = side * 0.4
    speed = span / max(frame_count - 1, 1)
    start = (side - direction * span) / 2.0 + rng.uniform(-2.0, 2.0)
    long_axis, short_axis = side * 0.24, side * 0.055
    sy, sx = (long_axis, short_axis) if class_index % 2 == 0 else (short_axis, long_axis)
    ys = np.arange(side)[:, None]
    xs = np.arange(side)[None, :]
    frames = np.empty((frame_count, 1, side, side))
    for t in range(frame_count):
        cx = start + direction * speed * t
        # quartic falloff: near-flat bright core with soft edges
        bar = np.exp(-(((ys - row) / sy) ** 4 + ((xs - cx) / sx) ** 4))
        img = 0.06 + 0.88 * bar + rng.uniform(-0.03, 0.03, size=(side, side))
        frames[t, 0] = np.clip(img, 0.0, 1.0)
    return frames


def generate_synthetic(num_classes: int, sequences_per_class: int, seed: int, out_dir,
                       side: int = 48, frame_count: int = DEFAULT_WINDOW) -> Path:
    """Materialize a labelled synthetic dataset; returns the manifest path.

    Same arguments produce bit-identical frame files and manifest.
    """
    if num_classes < 2:
        raise ManifestError(f"synthetic dataset needs >= 2 classes, got {num_classes}")
    out_dir = Path(out_dir)
    frames_root = out_dir / "frames"
    frames_root.mkdir(parents=True, exist_ok=True)
    labels = [f"class{k:02d}" for k in range(num_classes)]
    entries = []
    for k, label in enumerate(labels):
        for i in range(sequences_per_class):
            rng = np.random.default_rng([seed, k, i])
            clip = _render_moving_bar(rng, k, num_classes, side, frame_count)
            seq_dir = frames_root / f"{label}_{i:03d}"
            seq_dir.mkdir(parents=True, exist_ok=True)
            for t in range(frame_count):
                write_frame_file(seq_dir / f"frame_{t:04d}.png", clip[t])
            entries.append(ManifestEntry(path=str(Path("frames") / seq_dir.name), label=label))
    manifest_path = out_dir / "manifest.tsv"
    write_manifest(manifest_path, labels, entries)
    return manifest_path


# ---------------------------------------------------------------------------
# raw-directory preprocessing (feeds the CLI)
# ---------------------------------------------------------------------------

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def _image_files(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def preprocess_tree(in_dir, out_dir, side: int = 48, window: int = DEFAULT_WINDOW,
                    augment: bool = False) -> Path:
    """Normalize raw frame directories into dataset layout plus manifest.

    Accepted input layouts: ``<in>/<label>/<sequence>/frames...`` or a single
    flat directory of frames (labelled ``unlabeled``). Writes per-sequence
    processed PNG directories and a manifest; with ``augment`` the eight
    variants are materialized alongside the originals.
    """
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    if not in_dir.is_dir():
        raise IngestionError(f"input directory not found: {in_dir}")
    jobs = []  # (label, sequence name, frame files)
    flat = _image_files(in_dir)
    if flat:
        jobs.append(("unlabeled", in_dir.name, flat))
    else:
        for label_dir in sorted(p for p in in_dir.iterdir() if p.is_dir()):
            direct = _image_files(label_dir)
            if direct:
                jobs.append((label_dir.name, label_dir.name, direct))
                continue
            for seq_dir in sorted(p for p in label_dir.iterdir() if p.is_dir()):
                files = _image_files(seq_dir)
                if files:
                    jobs.append((label_dir.name, seq_dir.name, files))
    if not jobs:
        raise IngestionError(f"no frame files found under {in_dir}")

    frames_root = out_dir / "frames"
    frames_root.mkdir(parents=True, exist_ok=True)
    entries = []
    labels = sorted({label for label, _, _ in jobs})
    for label, seq_name, files in jobs:
        chosen = select_middle_frames(files, window)
        frames = np.stack([normalize_frame(read_frame_file(f), side) for f in chosen])
        seq = FrameSequence(frames=frames, label=labels.index(label),
                            source_id=f"{label}_{seq_name}")
        variants = augment_x8(seq) if augment else [seq]
        for v in variants:
            dir_name = v.source_id.replace("#", "-")
            seq_dir = frames_root / dir_name
            seq_dir.mkdir(parents=True, exist_ok=True)
            for t in range(v.frames.shape[0]):
                write_frame_file(seq_dir / f"frame_{t:04d}.png", v.frames[t])
            entries.append(ManifestEntry(path=str(Path("frames") / dir_name), label=label))
    manifest_path = out_dir / "manifest.tsv"
    write_manifest(manifest_path, labels, entries)
    return manifest_path
