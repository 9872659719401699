"""Dataset ingestion, MCAR masking, normalisation and batching.

Series are stored as ``values`` of shape ``(N, T, n)`` alongside a mask of the
same shape (1 = observed, 0 = missing). The mask is authoritative: values at
missing positions are stored as 0 and never read.

Mask cache format (text, ASCII, ``\\n`` line endings)::

    <dataset>,<ratio>,<seed>,<T>,<n>,<N>
    <row for sample 0>
    ...

Each row holds ``T*n`` characters ``0``/``1`` with no separator, ordered
coordinate-major: all ``T`` steps of dimension 0, then dimension 1, and so on.
``ratio`` is written with ``repr`` of the float.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

log = logging.getLogger(__name__)

SPLITS = ("TRAIN", "TEST")


class DataFormatError(ValueError):
    """A data or mask file could not be parsed."""


@dataclass(frozen=True)
class TimeSeriesSample:
    values: np.ndarray  # (T, n)
    mask: np.ndarray  # (T, n)
    label: int
    id: str


@dataclass(frozen=True)
class Split:
    values: np.ndarray  # (N, T, n)
    masks: np.ndarray  # (N, T, n) uint8
    labels: np.ndarray  # (N,) int64, remapped to 0..C-1
    ids: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def length(self) -> int:
        return self.values.shape[1]

    @property
    def dims(self) -> int:
        return self.values.shape[2]

    def sample(self, i: int) -> TimeSeriesSample:
        return TimeSeriesSample(self.values[i], self.masks[i], int(self.labels[i]), self.ids[i])

    def __iter__(self) -> Iterator[TimeSeriesSample]:
        return (self.sample(i) for i in range(len(self)))

    def missing_fraction(self) -> float:
        return float(1.0 - self.masks.mean())

    def take(self, idx: np.ndarray) -> "Split":
        return Split(self.values[idx], self.masks[idx], self.labels[idx], tuple(self.ids[i] for i in idx))


@dataclass(frozen=True)
class DatasetBundle:
    name: str
    train: Split
    test: Split
    num_classes: int
    class_values: tuple  # original label tokens, index = remapped label
    provenance: dict = field(default_factory=dict)
    mask_info: dict = field(default_factory=dict)
    norm_stats: dict = field(default_factory=dict)

    @property
    def length(self) -> int:
        return self.train.length

    @property
    def dims(self) -> int:
        return self.train.dims


# ---------------------------------------------------------------------------
# UCR-style files
# ---------------------------------------------------------------------------

def _parse_token(tok: str, row: int, col: int, path) -> float:
    t = tok.strip()
    if t.lower() in ("nan", "?", ""):
        return np.nan
    try:
        return float(t)
    except ValueError:
        raise DataFormatError(f"{path}: row {row}, column {col}: cannot parse {tok!r}") from None


def read_ucr_file(path) -> tuple[list[str], np.ndarray]:
    """Parse one label-first file; returns raw label tokens and ``(N, T)`` values
    with NaN at missing positions. Tabs, commas or whitespace may delimit."""
    path = Path(path)
    labels, rows = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if "\t" in line:
                toks = line.split("\t")
            elif "," in line:
                toks = line.split(",")
            else:
                toks = line.split()
            if len(toks) < 2:
                raise DataFormatError(f"{path}: row {lineno} has no values after the label")
            labels.append(toks[0].strip())
            rows.append([_parse_token(t, lineno, j + 1, path) for j, t in enumerate(toks[1:], start=1)])
            if len(rows[-1]) != len(rows[0]):
                raise DataFormatError(
                    f"{path}: row {lineno} has {len(rows[-1])} values, row 1 has {len(rows[0])} (ragged rows)")
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    return labels, np.asarray(rows, dtype=np.float64)


def _label_key(tok: str):
    try:
        return (0, float(tok), tok)
    except ValueError:
        return (1, 0.0, tok)


def _make_split(tokens: list[str], values: np.ndarray, lookup: dict, prefix: str) -> Split:
    mask = np.isfinite(values)
    vals = np.where(mask, values, 0.0)[:, :, None]
    labels = np.array([lookup[t] for t in tokens], dtype=np.int64)
    ids = tuple(f"{prefix}{i}" for i in range(len(tokens)))
    return Split(vals, mask[:, :, None].astype(np.uint8), labels, ids)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def resolve_ucr_paths(path) -> tuple[str, Path, Path]:
    """Accept a dataset directory ``<dir>/<Name>_{TRAIN,TEST}.{tsv,txt,csv}``
    or the TRAIN file itself."""
    path = Path(path)
    if path.is_dir():
        name = path.name
        for ext in (".tsv", ".txt", ".csv"):
            tr, te = path / f"{name}_TRAIN{ext}", path / f"{name}_TEST{ext}"
            if tr.exists() and te.exists():
                return name, tr, te
        raise FileNotFoundError(f"no {name}_TRAIN/{name}_TEST files in {path}")
    stem = path.stem
    if not stem.endswith("_TRAIN"):
        raise FileNotFoundError(f"{path} is neither a dataset directory nor a *_TRAIN file")
    name = stem[: -len("_TRAIN")]
    test = path.with_name(f"{name}_TEST{path.suffix}")
    if not test.exists():
        raise FileNotFoundError(f"missing test split {test}")
    return name, path, test


def load_ucr(path) -> DatasetBundle:
    """Load a UCR-format dataset (train and test split)."""
    name, train_path, test_path = resolve_ucr_paths(path)
    tr_tok, tr_val = read_ucr_file(train_path)
    te_tok, te_val = read_ucr_file(test_path)
    if tr_val.shape[1] != te_val.shape[1]:
        raise DataFormatError(f"train length {tr_val.shape[1]} differs from test length {te_val.shape[1]}")
    classes = sorted(set(tr_tok) | set(te_tok), key=_label_key)
    lookup = {c: i for i, c in enumerate(classes)}
    train = _make_split(tr_tok, tr_val, lookup, "train-")
    test = _make_split(te_tok, te_val, lookup, "test-")
    prov = {
        "path": str(Path(path).resolve()),
        "train_sha256": _sha256(train_path),
        "test_sha256": _sha256(test_path),
    }
    return DatasetBundle(name, train, test, len(classes), tuple(classes), prov)


def write_ucr_file(path, labels, values: np.ndarray) -> None:
    """Write ``(N, T)`` values label-first, tab-delimited, NaN for missing."""
    with open(path, "w") as fh:
        for lab, row in zip(labels, values):
            fh.write(str(lab) + "\t" + "\t".join("NaN" if not np.isfinite(v) else repr(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# MCAR masking
# ---------------------------------------------------------------------------

def mcar_masks(shape: tuple[int, int, int], ratio: float, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Independent Bernoulli missingness; every series keeps >= 1 observation.
    Returns ``(masks, retries)``."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"missing ratio must lie in (0, 1), got {ratio}")
    N = shape[0]
    masks = (rng.random(shape) >= ratio).astype(np.uint8)
    retries = 0
    for i in range(N):
        while not masks[i].any():
            masks[i] = (rng.random(shape[1:]) >= ratio).astype(np.uint8)
            retries += 1
    return masks, retries


def _split_rng(seed: int, split: str) -> np.random.Generator:
    return np.random.default_rng([seed, SPLITS.index(split)])


def with_masks(split: Split, masks: np.ndarray) -> Split:
    masks = masks.astype(np.uint8) & split.masks
    return replace(split, values=np.where(masks != 0, split.values, 0.0), masks=masks)


def apply_mcar(bundle: DatasetBundle, ratio: float, seed: int) -> DatasetBundle:
    """Remove values completely at random from both splits, each split with
    its own generator derived from ``seed``."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"missing ratio must lie in (0, 1), got {ratio}")
    new, info = {}, {"ratio": ratio, "seed": seed, "retries": {}}
    for split in SPLITS:
        s = getattr(bundle, split.lower())
        if not s.masks.all():
            raise ValueError(f"{split} split already has missing values; synthetic masking applies once")
        masks, retries = mcar_masks(s.values.shape, ratio, _split_rng(seed, split))
        info["retries"][split] = retries
        new[split.lower()] = with_masks(s, masks)
    return replace(bundle, mask_info=info, **new)


# ---------------------------------------------------------------------------
# Mask cache files
# ---------------------------------------------------------------------------

def mask_cache_path(root, dataset: str, split: str, ratio: float, seed: int) -> Path:
    return Path(root) / f"{dataset}_{split}_r{ratio:g}_s{seed}.mask"


def format_mask_cache(dataset: str, ratio: float, seed: int, masks: np.ndarray) -> bytes:
    N, T, n = masks.shape
    lines = [f"{dataset},{ratio!r},{seed},{T},{n},{N}"]
    flat = masks.transpose(0, 2, 1).reshape(N, n * T).astype(np.uint8)
    digits = (flat + ord("0")).astype(np.uint8)
    lines.extend(row.tobytes().decode("ascii") for row in digits)
    return ("\n".join(lines) + "\n").encode("ascii")


def write_mask_cache(path, dataset: str, ratio: float, seed: int, masks: np.ndarray) -> bool:
    """Write a mask cache. If an identical file exists it is left untouched;
    a differing file raises. Returns True when a file was written."""
    path = Path(path)
    payload = format_mask_cache(dataset, ratio, seed, masks)
    if path.exists():
        if path.read_bytes() == payload:
            return False
        raise FileExistsError(f"{path} exists with different contents")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)
    return True


def read_mask_cache(path) -> tuple[dict, np.ndarray]:
    path = Path(path)
    lines = path.read_text(encoding="ascii").splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty mask file")
    head = lines[0].split(",")
    if len(head) != 6:
        raise DataFormatError(f"{path}: bad header {lines[0]!r}")
    try:
        meta = {"dataset": head[0], "ratio": float(head[1]), "seed": int(head[2]),
                "T": int(head[3]), "n": int(head[4]), "N": int(head[5])}
    except ValueError:
        raise DataFormatError(f"{path}: bad header {lines[0]!r}") from None
    T, n, N = meta["T"], meta["n"], meta["N"]
    body = lines[1:]
    if len(body) != N:
        raise DataFormatError(f"{path}: header says {N} rows, found {len(body)}")
    masks = np.empty((N, n * T), dtype=np.uint8)
    for i, row in enumerate(body):
        if len(row) != n * T or set(row) - {"0", "1"}:
            raise DataFormatError(f"{path}: row {i + 2} is not {n * T} characters of 0/1")
        masks[i] = np.frombuffer(row.encode("ascii"), dtype=np.uint8) - ord("0")
    return meta, masks.reshape(N, n, T).transpose(0, 2, 1).copy()


def apply_mask_cache(bundle: DatasetBundle, mask_dir, ratio: float, seed: int) -> DatasetBundle:
    new = {}
    for split in SPLITS:
        s = getattr(bundle, split.lower())
        meta, masks = read_mask_cache(mask_cache_path(mask_dir, bundle.name, split, ratio, seed))
        if masks.shape != s.masks.shape:
            raise DataFormatError(f"mask shape {masks.shape} does not match {split} data {s.masks.shape}")
        new[split.lower()] = with_masks(s, masks)
    return replace(bundle, mask_info={"ratio": ratio, "seed": seed, "source": str(mask_dir)}, **new)


def ensure_mask_cache(bundle: DatasetBundle, mask_dir, ratio: float, seed: int) -> list[Path]:
    """Synthesise masks for both splits and persist them (idempotent)."""
    masked = apply_mcar(bundle, ratio, seed)
    paths = []
    for split in SPLITS:
        p = mask_cache_path(mask_dir, bundle.name, split, ratio, seed)
        write_mask_cache(p, f"{bundle.name}_{split}", ratio, seed, getattr(masked, split.lower()).masks)
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# Normalisation and batching
# ---------------------------------------------------------------------------

def _znorm_split(s: Split) -> tuple[Split, np.ndarray, np.ndarray]:
    obs = s.masks != 0
    cnt = obs.sum(axis=1, keepdims=True)
    safe = np.maximum(cnt, 1)
    vals = np.where(obs, s.values, 0.0)
    mean = vals.sum(axis=1, keepdims=True) / safe
    var = np.where(obs, (vals - mean) ** 2, 0.0).sum(axis=1, keepdims=True) / safe
    std = np.sqrt(var)
    std = np.where(std < 1e-8, 1.0, std)
    out = np.where(obs, (vals - mean) / std, 0.0)
    return replace(s, values=out), mean[:, 0], std[:, 0]


def znormalize(bundle: DatasetBundle) -> DatasetBundle:
    """Per series and dimension, standardise using observed positions only."""
    tr, tr_mean, tr_std = _znorm_split(bundle.train)
    te, te_mean, te_std = _znorm_split(bundle.test)
    stats = {"train_mean": tr_mean, "train_std": tr_std, "test_mean": te_mean, "test_std": te_std}
    return replace(bundle, train=tr, test=te, norm_stats=stats)


def batch_iter(n_samples: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffled index batches for one epoch; the last partial batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng([seed, epoch]).permutation(n_samples)
    return [order[i:i + batch_size] for i in range(0, n_samples, batch_size)]
