"""Seeded program generator and (image, code) dataset builder."""
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import dsl
from .prng import MASK64, below
from .render import read_ppm, render, write_ppm


@dataclass(frozen=True)
class GenConfig:
    min_rows: int = 2
    max_rows: int = 6
    min_leaves: int = 1
    max_leaves: int = 4
    image_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.min_rows <= self.max_rows:
            raise ValueError("need 1 <= min_rows <= max_rows")
        if not 1 <= self.min_leaves <= self.max_leaves:
            raise ValueError("need 1 <= min_leaves <= max_leaves")
        if self.image_size < 32:
            raise ValueError("image_size must be >= 32")
        if not 0 <= self.seed <= MASK64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass
class Manifest:
    entries: list  # (id, image relpath, code relpath, split)
    n_train: int
    n_test: int
    config: GenConfig
    root: str = "."

    def split(self, name):
        return [e for e in self.entries if e[3] == name]


def gen_program(cfg, state):
    """Draw a depth-2 program; returns ``(ast, state)``.

    Draw order: row count, then for each row its leaf count followed by its
    leaf tags.
    """
    n_rows, state = below(state, cfg.max_rows - cfg.min_rows + 1)
    rows = []
    for _ in range(cfg.min_rows + n_rows):
        n_leaves, state = below(state, cfg.max_leaves - cfg.min_leaves + 1)
        leaves = []
        for _ in range(cfg.min_leaves + n_leaves):
            tag, state = below(state, len(dsl.LEAF_TAGS))
            leaves.append(dsl.Leaf(dsl.LEAF_TAGS[tag]))
        rows.append(dsl.Container("row", tuple(leaves)))
    return dsl.Container("stack", tuple(rows)), state


def example_program(cfg, example_id):
    """Program for one dataset entry; its stream is seeded with ``seed ^ id``."""
    return gen_program(cfg, cfg.seed ^ example_id)[0]


def _write_example(cfg, out_dir, i):
    ast = example_program(cfg, i)
    img_rel = f"images/{i}.ppm"
    code_rel = f"programs/{i}.gui"
    write_ppm(os.path.join(out_dir, img_rel), render(ast, cfg.image_size, cfg.image_size))
    with open(os.path.join(out_dir, code_rel), "w", encoding="utf-8", newline="\n") as f:
        f.write(dsl.serialize(ast) + "\n")
    return img_rel, code_rel


def manifest_header(cfg, n_train, n_test):
    items = asdict(cfg)
    items.update(n_train=n_train, n_test=n_test)
    return "# " + " ".join(f"{k}={v}" for k, v in items.items())


def build_dataset(n_train, n_test, cfg, out_dir, threads=1):
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "programs"), exist_ok=True)
    ids = range(n_train + n_test)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            paths = list(pool.map(lambda i: _write_example(cfg, out_dir, i), ids))
    else:
        paths = [_write_example(cfg, out_dir, i) for i in ids]
    entries = [
        (i, img, code, "train" if i < n_train else "test")
        for i, (img, code) in zip(ids, paths)
    ]
    with open(os.path.join(out_dir, "manifest.txt"), "w", encoding="utf-8", newline="\n") as f:
        f.write(manifest_header(cfg, n_train, n_test) + "\n")
        for e in entries:
            f.write("\t".join(map(str, e)) + "\n")
    return Manifest(entries, n_train, n_test, cfg, out_dir)


def read_manifest(out_dir):
    path = os.path.join(out_dir, "manifest.txt")
    entries, header = [], {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                for item in line[1:].split():
                    k, _, v = item.partition("=")
                    header[k] = int(v)
                continue
            i, img, code, split = line.split("\t")
            entries.append((int(i), img, code, split))
    n_train = header.pop("n_train", sum(e[3] == "train" for e in entries))
    n_test = header.pop("n_test", sum(e[3] == "test" for e in entries))
    return Manifest(entries, n_train, n_test, GenConfig(**header), out_dir)


def image_tensor(img, dtype=np.float32):
    """``(H, W, 3)`` bytes to a channel-major ``(3, H, W)`` array in [0, 1]."""
    return (np.transpose(img, (2, 0, 1)).astype(np.float64) / 255.0).astype(dtype)


def load_example(image_path, code_path, vocab=dsl.VOCAB):
    img = read_ppm(image_path)
    with open(code_path, encoding="utf-8") as f:
        ids = dsl.tokenize(f.read(), vocab)
    return image_tensor(img), ids


def load_split(manifest, split):
    out = []
    for i, img, code, s in manifest.entries:
        if s == split:
            x, ids = load_example(os.path.join(manifest.root, img), os.path.join(manifest.root, code))
            out.append((i, x, ids))
    return out
