"""Generators for two classic synthetic benchmarks, written out in UCR layout.

``make_cbf`` follows the Cylinder-Bell-Funnel definition of Saito (1994).
``make_two_patterns`` follows the construction of Geurts (2002): two
embedded step patterns (up or down) per series, four classes. Both
series are z-normalised per sample as in the archive.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import write_ucr_file


def _znorm_rows(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True)
    return (x - mu) / np.where(sd < 1e-8, 1.0, sd)


def make_cbf(n_samples: int, rng: np.random.Generator, length: int = 128) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(labels in {1,2,3}, values (N, length))``, classes balanced."""
    labels = np.arange(n_samples) % 3 + 1
    rng.shuffle(labels)
    t = np.arange(1, length + 1)
    out = np.empty((n_samples, length))
    for i, c in enumerate(labels):
        a = rng.integers(16, 33)
        b = a + rng.integers(32, 97)
        eta = rng.standard_normal()
        eps = rng.standard_normal(length)
        on = ((t >= a) & (t <= b)).astype(float)
        if c == 1:  # cylinder
            shape = on
        elif c == 2:  # bell
            shape = on * (t - a) / (b - a)
        else:  # funnel
            shape = on * (b - t) / (b - a)
        out[i] = (6 + eta) * shape + eps
    return labels, _znorm_rows(out)


def make_two_patterns(n_samples: int, rng: np.random.Generator, length: int = 128) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(labels in {1..4}, values)``. Class encodes the (first, second)
    pattern: 1 = down-down, 2 = up-down, 3 = down-up, 4 = up-up."""
    labels = np.arange(n_samples) % 4 + 1
    rng.shuffle(labels)
    out = rng.standard_normal((n_samples, length))
    for i, c in enumerate(labels):
        first_up = c in (2, 4)
        second_up = c in (3, 4)
        l1, l2 = rng.integers(length // 8, length // 4 + 1, size=2)
        t1 = rng.integers(0, length // 2 - l1 + 1)
        t2 = rng.integers(t1 + l1, length - l2 + 1)
        for start, ln, up in ((t1, l1, first_up), (t2, l2, second_up)):
            half = ln // 2
            lo, hi = (-5.0, 5.0) if up else (5.0, -5.0)
            out[i, start:start + half] = lo
            out[i, start + half:start + ln] = hi
    return labels, _znorm_rows(out)


GENERATORS = {
    "CBF": (make_cbf, 30, 900),
    "TwoPatterns": (make_two_patterns, 1000, 4000),
}


def write_dataset(root, name: str, seed: int = 0, n_train: int | None = None, n_test: int | None = None) -> Path:
    """Generate ``name`` under ``root/name/`` as ``{name}_TRAIN.tsv`` and
    ``{name}_TEST.tsv``; returns the dataset directory. Existing files are
    reused."""
    gen, default_train, default_test = GENERATORS[name]
    d = Path(root) / name
    tr, te = d / f"{name}_TRAIN.tsv", d / f"{name}_TEST.tsv"
    if tr.exists() and te.exists():
        return d
    d.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    y, x = gen(n_train or default_train, rng)
    write_ucr_file(tr, y, x)
    y, x = gen(n_test or default_test, rng)
    write_ucr_file(te, y, x)
    return d
