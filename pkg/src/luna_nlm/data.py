"""Datasets: synthetic gap generators, tabular gap construction, table IO,
and standardization.

A gap dataset holds four splits (train/val/test_not_gap/test_gap) where the
gap split covers an input region deliberately absent from training, used to
probe whether a model's epistemic uncertainty rises where it has seen no
data. Synthetic targets carry the same observation noise in every split; the
noiseless function values are kept alongside for plotting.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np

CUBIC_NOISE_SD = 3.0


def cubic_fn(x: np.ndarray) -> np.ndarray:
    return x**3


def squiggle_fn(x: np.ndarray) -> np.ndarray:
    return x**3 + 20.0 * np.exp(-(x**2)) * np.sin(10.0 * x)


@dataclass(frozen=True)
class Split:
    x: np.ndarray
    y: np.ndarray
    y_clean: np.ndarray | None = None

    def __len__(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class Standardization:
    """Per-column z-score statistics fitted on the train split."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float


@dataclass(frozen=True)
class GapDataset:
    name: str
    train: Split
    val: Split
    test_not_gap: Split
    test_gap: Split
    gap_dim: int = 0
    seed: int = 0
    standardized: bool = False
    stats: Standardization | None = None

    @property
    def input_dim(self) -> int:
        return self.train.x.shape[1]

    def splits(self) -> dict[str, Split]:
        return {
            "train": self.train,
            "val": self.val,
            "test_not_gap": self.test_not_gap,
            "test_gap": self.test_gap,
        }

    def input_range(self) -> np.ndarray:
        """Per-dimension spread of the training inputs (used for FD probes)."""
        return np.ptp(self.train.x, axis=0)

    def manifest(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "gap_dim": self.gap_dim,
            "input_dim": self.input_dim,
            "standardized": self.standardized,
            "split_sizes": {k: len(v) for k, v in self.splits().items()},
        }


def _uniform_union(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform draws on [-4, -2] union [2, 4]."""
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return sign * rng.uniform(2.0, 4.0, n)


def _synthetic(
    name: str,
    fn,
    n_train: int,
    n_test: int,
    noise_sd: float,
    seed: int,
    val_fraction: float = 0.2,
) -> GapDataset:
    if n_train < 1 or n_test < 1:
        raise ValueError("n_train and n_test must be at least 1")
    rng = np.random.default_rng(seed)

    def make(x: np.ndarray) -> Split:
        clean = fn(x)
        return Split(x=x[:, None], y=clean + rng.normal(0.0, noise_sd, x.shape[0]), y_clean=clean)

    pool = make(_uniform_union(rng, n_train))
    n_val = int(np.floor(val_fraction * n_train))
    order = rng.permutation(n_train)
    tr, va = order[n_val:], order[:n_val]
    train = Split(pool.x[tr], pool.y[tr], pool.y_clean[tr])
    val = Split(pool.x[va], pool.y[va], pool.y_clean[va])
    test_not_gap = make(_uniform_union(rng, n_test))
    test_gap = make(rng.uniform(-2.0, 2.0, n_test))
    return GapDataset(
        name=name, train=train, val=val, test_not_gap=test_not_gap, test_gap=test_gap, seed=seed
    )


def gen_cubic_gap(
    n_train: int = 100, n_test: int = 100, noise_sd: float = CUBIC_NOISE_SD, seed: int = 0
) -> GapDataset:
    """y = x^3 + noise, inputs uniform on [-4,-2] u [2,4]; gap inputs on (-2, 2)."""
    return _synthetic("cubic-gap", cubic_fn, n_train, n_test, noise_sd, seed)


def gen_squiggle_gap(
    n_train: int = 100, n_test: int = 100, noise_sd: float = CUBIC_NOISE_SD, seed: int = 0
) -> GapDataset:
    """Cubic plus a localized oscillation that only matters inside the gap."""
    return _synthetic("squiggle-gap", squiggle_fn, n_train, n_test, noise_sd, seed)


def make_gap_split(x: np.ndarray, y: np.ndarray, gap_dim: int, seed: int = 0, name: str = "ucigap") -> GapDataset:
    """Gap construction for a tabular dataset.

    Rows are sorted by column ``gap_dim``; the middle floor(N/3) rows
    (starting at index floor(N/3)) form the gap test split, and the rest is
    randomly split 80/10/10 into train/test_not_gap/val.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    n = x.shape[0]
    if y.shape[0] != n:
        raise ValueError("x and y disagree on the number of rows")
    if n < 3:
        raise ValueError("need at least 3 rows to carve out a gap")
    if not 0 <= gap_dim < x.shape[1]:
        raise ValueError(f"gap_dim {gap_dim} out of range for {x.shape[1]} columns")
    order = np.argsort(x[:, gap_dim], kind="stable")
    block = n // 3
    gap_idx = order[block : 2 * block]
    rest = np.concatenate([order[:block], order[2 * block :]])
    rng = np.random.default_rng(seed)
    rest = rest[rng.permutation(rest.shape[0])]
    n_rest = rest.shape[0]
    n_test = n_rest // 10
    n_val = n_rest // 10
    test_idx = rest[:n_test]
    val_idx = rest[n_test : n_test + n_val]
    train_idx = rest[n_test + n_val :]
    mk = lambda idx: Split(x[idx], y[idx])
    return GapDataset(
        name=name,
        train=mk(train_idx),
        val=mk(val_idx),
        test_not_gap=mk(test_idx),
        test_gap=mk(gap_idx),
        gap_dim=gap_dim,
        seed=seed,
    )


class TableFormatError(ValueError):
    pass


def load_table(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Read a rectangular numeric table; last column is the target.

    Comma- or whitespace-delimited; lines starting with '#' and blank lines
    are skipped; one non-numeric header line is tolerated.
    """
    rows: list[list[float]] = []
    header_seen = False
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            tokens = [t for t in (text.split(",") if "," in text else text.split()) if t.strip()]
            values = []
            for col, tok in enumerate(tokens):
                try:
                    values.append(float(tok))
                except ValueError:
                    if not rows and not header_seen:
                        header_seen = True
                        values = None
                        break
                    raise TableFormatError(f"{path}: non-numeric value {tok!r} at line {lineno}, column {col + 1}")
            if values is None:
                continue
            if rows and len(values) != len(rows[0]):
                raise TableFormatError(
                    f"{path}: line {lineno} has {len(values)} columns, expected {len(rows[0])}"
                )
            rows.append(values)
    if not rows:
        raise TableFormatError(f"{path}: no data rows")
    if len(rows[0]) < 2:
        raise TableFormatError(f"{path}: need at least one input column plus the target")
    arr = np.asarray(rows, dtype=np.float64)
    return arr[:, :-1], arr[:, -1]


def write_table(path: str, x: np.ndarray, y: np.ndarray, comment: str | None = None) -> None:
    """Comma-delimited table with full-precision floats; inverse of load_table."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    with open(path, "w") as fh:
        if comment is not None:
            fh.write(f"# {comment}\n")
        for xi, yi in zip(x, y):
            fh.write(",".join(repr(float(v)) for v in xi) + f",{float(yi)!r}\n")


def fit_stats(train: Split) -> Standardization:
    x_std = train.x.std(axis=0)
    y_std = float(train.y.std())
    return Standardization(
        x_mean=train.x.mean(axis=0),
        x_std=np.where(x_std > 0, x_std, 1.0),
        y_mean=float(train.y.mean()),
        y_std=y_std if y_std > 0 else 1.0,
    )


def standardize(ds: GapDataset) -> GapDataset:
    """Z-score every split by train-split statistics (constant columns kept)."""
    if ds.standardized:
        return ds
    stats = fit_stats(ds.train)

    def tf(s: Split) -> Split:
        clean = None if s.y_clean is None else (s.y_clean - stats.y_mean) / stats.y_std
        return Split((s.x - stats.x_mean) / stats.x_std, (s.y - stats.y_mean) / stats.y_std, clean)

    return replace(
        ds,
        train=tf(ds.train),
        val=tf(ds.val),
        test_not_gap=tf(ds.test_not_gap),
        test_gap=tf(ds.test_gap),
        standardized=True,
        stats=stats,
    )


def destandardize_y(stats: Standardization, y: np.ndarray) -> np.ndarray:
    return np.asarray(y) * stats.y_std + stats.y_mean


_SPLIT_FILES = ("train", "val", "test_not_gap", "test_gap")


def save_dataset(ds: GapDataset, out_dir: str, comment: str | None = None) -> None:
    """Write the four split tables plus a JSON manifest (and, for synthetic
    data, parallel *_clean tables holding the noiseless targets)."""
    os.makedirs(out_dir, exist_ok=True)
    for key, split in ds.splits().items():
        write_table(os.path.join(out_dir, f"{key}.csv"), split.x, split.y, comment=comment)
        if split.y_clean is not None:
            write_table(os.path.join(out_dir, f"{key}_clean.csv"), split.x, split.y_clean, comment=comment)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        if comment is not None:
            fh.write(f"# {comment}\n")
        json.dump(ds.manifest(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(data_dir: str) -> GapDataset:
    with open(os.path.join(data_dir, "manifest.json")) as fh:
        text = "\n".join(line for line in fh.read().splitlines() if not line.startswith("#"))
    manifest = json.loads(text)
    splits = {}
    for key in _SPLIT_FILES:
        x, y = load_table(os.path.join(data_dir, f"{key}.csv"))
        clean_path = os.path.join(data_dir, f"{key}_clean.csv")
        y_clean = load_table(clean_path)[1] if os.path.exists(clean_path) else None
        splits[key] = Split(x, y, y_clean)
    return GapDataset(
        name=manifest["name"],
        train=splits["train"],
        val=splits["val"],
        test_not_gap=splits["test_not_gap"],
        test_gap=splits["test_gap"],
        gap_dim=manifest.get("gap_dim", 0),
        seed=manifest.get("seed", 0),
        standardized=manifest.get("standardized", False),
    )
