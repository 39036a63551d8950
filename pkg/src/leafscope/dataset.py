"""Corpus scanning, stratified splitting, and manifest-driven loading.

A corpus is a directory of class subdirectories, each holding image files.
Scanning produces a deterministic manifest (sorted by class name, then
filename); splitting assigns each entry to train/val/test per class with a
seeded shuffle. The manifest round-trips through a TSV file so downstream
steps never re-scan the filesystem.
"""

from __future__ import annotations

import concurrent.futures
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetError, FormatError
from .preprocess import PreprocessConfig, load_rgb, preprocess_image

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")
SPLIT_NAMES = ("train", "val", "test")
_TSV_HEADER = "path\tclass_id\tclass_name\tsplit"


@dataclass(frozen=True)
class ManifestEntry:
    path: str                  # relative to the corpus root, forward slashes
    class_id: int
    class_name: str
    split: str = ""            # empty until split_dataset assigns one


@dataclass
class Manifest:
    entries: list
    class_names: list

    def __len__(self) -> int:
        return len(self.entries)

    def counts_by_class(self) -> dict:
        out = {name: 0 for name in self.class_names}
        for e in self.entries:
            out[e.class_name] += 1
        return out


@dataclass
class SplitAssignment:
    manifest: Manifest
    seed: int | None = None

    def indices(self, split: str) -> list:
        if split not in SPLIT_NAMES:
            raise ValueError(f"unknown split {split!r}")
        return [i for i, e in enumerate(self.manifest.entries) if e.split == split]


def scan_dataset(root) -> Manifest:
    """Walk root/<class>/<image> and build a sorted, unsplit manifest."""
    rootp = Path(root)
    if not rootp.is_dir():
        raise DatasetError(f"corpus root {root} is not a directory")
    class_dirs = sorted(p for p in rootp.iterdir() if p.is_dir())
    if not class_dirs:
        raise DatasetError(f"no class directories under {root}")
    class_names = [p.name for p in class_dirs]
    entries = []
    for cid, cdir in enumerate(class_dirs):
        files = sorted(p.name for p in cdir.iterdir()
                       if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS)
        if not files:
            raise DatasetError(f"class directory {cdir} holds no images")
        for fname in files:
            entries.append(ManifestEntry(
                path=f"{cdir.name}/{fname}", class_id=cid, class_name=cdir.name))
    return Manifest(entries=entries, class_names=class_names)


def split_dataset(manifest: Manifest, seed: int = 42,
                  fractions: tuple = (0.8, 0.1, 0.1)) -> SplitAssignment:
    """Stratified train/val/test assignment.

    Per class of size n: floor(f_train*n) train, floor(f_val*n) val, the
    remainder test, over a shuffle drawn from a per-class child of the seed
    so class order never perturbs another class's assignment. Every class
    needs at least 3 members so each split is non-empty.
    """
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f <= 0 for f in fractions):
        raise ValueError(f"fractions must be positive and sum to 1, got {fractions}")
    by_class: dict = {}
    for i, e in enumerate(manifest.entries):
        by_class.setdefault(e.class_id, []).append(i)
    for cid, idxs in sorted(by_class.items()):
        if len(idxs) < 3:
            raise DatasetError(
                f"class {manifest.class_names[cid]!r} has {len(idxs)} images; need >= 3")

    new_entries = list(manifest.entries)
    for cid, idxs in sorted(by_class.items()):
        rng = np.random.default_rng([seed, cid])
        order = rng.permutation(len(idxs))
        n = len(idxs)
        # floor/floor/remainder, with an epsilon so exact products like
        # 0.8*105 survive float representation
        n_train = int(fractions[0] * n + 1e-9)
        n_val = int(fractions[1] * n + 1e-9)
        for rank, pos in enumerate(order):
            idx = idxs[pos]
            split = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")
            e = new_entries[idx]
            new_entries[idx] = ManifestEntry(e.path, e.class_id, e.class_name, split)
    return SplitAssignment(
        manifest=Manifest(entries=new_entries, class_names=list(manifest.class_names)),
        seed=seed)


def write_manifest(manifest: Manifest, path) -> None:
    """Serialize to TSV: header then one path/class_id/class_name/split row per entry."""
    lines = [_TSV_HEADER]
    for e in manifest.entries:
        if "\t" in e.path or "\t" in e.class_name:
            raise FormatError(f"tab character in manifest field: {e.path!r}")
        lines.append(f"{e.path}\t{e.class_id}\t{e.class_name}\t{e.split}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_manifest(path) -> Manifest:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.split("\n") if ln != ""]
    if not lines or lines[0] != _TSV_HEADER:
        raise FormatError(f"manifest {path} missing header {_TSV_HEADER!r}")
    entries = []
    names: dict = {}
    for ln in lines[1:]:
        parts = ln.split("\t")
        if len(parts) != 4:
            raise FormatError(f"manifest row has {len(parts)} fields: {ln!r}")
        p, cid_s, cname, split = parts
        try:
            cid = int(cid_s)
        except ValueError as exc:
            raise FormatError(f"bad class_id {cid_s!r}") from exc
        if split not in ("",) + SPLIT_NAMES:
            raise FormatError(f"bad split value {split!r}")
        if cname in names and names[cname] != cid:
            raise FormatError(f"class {cname!r} maps to both id {names[cname]} and {cid}")
        names[cname] = cid
        entries.append(ManifestEntry(p, cid, cname, split))
    by_id = sorted(names.items(), key=lambda kv: kv[1])
    if [cid for _, cid in by_id] != list(range(len(by_id))):
        raise FormatError("class ids are not a dense 0..K-1 range")
    return Manifest(entries=entries, class_names=[n for n, _ in by_id])


def _worker_count() -> int:
    # unset or "0" means the deterministic single-worker default
    env = os.environ.get("LEAFSCOPE_THREADS", "").strip()
    if not env:
        return 1
    try:
        n = int(env)
    except ValueError as exc:
        raise ValueError(f"LEAFSCOPE_THREADS={env!r} is not an integer") from exc
    if n < 0:
        raise ValueError("LEAFSCOPE_THREADS must be >= 0")
    return max(n, 1)


def load_entries(manifest: Manifest, indices, root,
                 config: PreprocessConfig | None = None) -> tuple:
    """Load + preprocess manifest entries into (B,3,S,S) float32 and (B,) int64 labels.

    Decoding is file-bound, so entries load on a thread pool when
    LEAFSCOPE_THREADS allows; result order always matches the requested
    index order.
    """
    cfg = config or PreprocessConfig()
    rootp = Path(root)
    idxs = list(indices)

    def one(i):
        e = manifest.entries[i]
        try:
            rgb = load_rgb(rootp / e.path)
        except (OSError, ValueError) as exc:
            raise DatasetError(f"failed to load {e.path}: {exc}") from exc
        return preprocess_image(rgb, cfg), e.class_id

    workers = _worker_count()
    if workers == 1 or len(idxs) <= 1:
        results = [one(i) for i in idxs]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, idxs))
    if not results:
        s = cfg.out_size
        return np.zeros((0, 3, s, s), np.float32), np.zeros((0,), np.int64)
    images = np.stack([r[0] for r in results])
    labels = np.asarray([r[1] for r in results], dtype=np.int64)
    return images, labels


def load_batch(assignment: SplitAssignment, tag: str, indices, root,
               config: PreprocessConfig | None = None) -> tuple:
    """Load a batch addressed by positions within one split's entry list."""
    subset = assignment.indices(tag)
    try:
        chosen = [subset[i] for i in indices]
    except IndexError as exc:
        raise DatasetError(f"batch index outside the {tag} split "
                           f"({len(subset)} entries)") from exc
    return load_entries(assignment.manifest, chosen, root, config)


def load_split_arrays(assignment: SplitAssignment, tag: str, root,
                      config: PreprocessConfig | None = None) -> tuple:
    """Materialize one whole split as arrays (small/medium corpora only)."""
    return load_entries(assignment.manifest, assignment.indices(tag), root, config)
