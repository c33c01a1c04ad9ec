"""Synthetic two-domain benchmark: stuff bands, shape objects, domain shift.

Scenes have a sky/ground style split at a tilted horizon and a handful of
non-overlapping shape objects ("thing" classes). The two domains share the
geometry generator but differ in colour palette rotation, brightness and
pixel noise. Private classes exist in both domains; the scenario transform
hides them in the source (ignore) and collapses them to one unknown label
for evaluation.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .core import IGNORE_ID, ClassSpace
from .netpbm import from_uint8, read_pgm, read_ppm, to_uint8, write_pgm, write_ppm

# The four default known colours sit 90 degrees apart on a ring of radius
# 0.35 around mid grey in the chroma plane; the private cross is a darker
# grey near the ring centre, so it resembles no known class in particular.
STUFF_COLORS = {
    "sky": (0.7475, 0.2525, 0.5000),
    "ground": (0.6429, 0.6429, 0.2142),
    "water": (0.15, 0.40, 0.55),
}
THING_COLORS = {
    "disc": (0.2525, 0.7475, 0.5000),
    "square": (0.3571, 0.3571, 0.7858),
    "cross": (0.40, 0.40, 0.40),
    "triangle": (0.90, 0.80, 0.20),
    "ring": (0.20, 0.75, 0.70),
    "diamond": (0.95, 0.55, 0.15),
}
ARCHIVE_VERSION = 1


@dataclass(frozen=True)
class DomainParams:
    hue_deg: float = 0.0
    brightness: float = 0.0
    noise: float = 0.02


@dataclass(frozen=True)
class SceneConfig:
    height: int = 64
    width: int = 64
    stuff_classes: tuple[str, ...] = ("sky", "ground")
    thing_classes: tuple[str, ...] = ("disc", "square", "cross")
    private_classes: tuple[str, ...] = ("cross",)
    allow_stuff_private: bool = False
    objects_min: int = 5
    objects_max: int = 6
    size_min: int = 9
    size_max: int = 15
    color_jitter: float = 0.04
    edge_blur: float = 0.5
    source: DomainParams = field(default_factory=DomainParams)
    target: DomainParams = field(default_factory=lambda: DomainParams(hue_deg=15.0, brightness=-0.05, noise=0.08))

    def __post_init__(self):
        for name in self.stuff_classes:
            if name not in STUFF_COLORS:
                raise ValueError(f"unknown stuff class {name!r}; choose from {sorted(STUFF_COLORS)}")
        for name in self.thing_classes:
            if name not in THING_COLORS:
                raise ValueError(f"unknown thing class {name!r}; choose from {sorted(THING_COLORS)}")
        if set(self.stuff_classes) & set(self.thing_classes):
            raise ValueError("stuff and thing classes overlap")
        if not self.stuff_classes:
            raise ValueError("at least one stuff class is required")
        for name in self.private_classes:
            if name not in self.class_names:
                raise ValueError(f"private class {name!r} is not a scene class")
            if name in self.stuff_classes and not self.allow_stuff_private:
                raise ValueError(f"private class {name!r} is a stuff class (set allow_stuff_private)")
        if not 0 <= self.objects_min <= self.objects_max:
            raise ValueError("need 0 <= objects_min <= objects_max")
        if not 3 <= self.size_min <= self.size_max:
            raise ValueError("need 3 <= size_min <= size_max")
        if self.size_max > min(self.height, self.width):
            raise ValueError("size_max exceeds the image size")

    @property
    def class_names(self) -> tuple[str, ...]:
        return self.stuff_classes + self.thing_classes

    @property
    def private_ids(self) -> tuple[int, ...]:
        return tuple(self.class_names.index(n) for n in self.private_classes)


class SceneObject(NamedTuple):
    class_id: int
    kind: str
    top: int
    left: int
    size: int


class Scene(NamedTuple):
    image: np.ndarray
    labels: np.ndarray
    objects: list[SceneObject]


def shape_mask(kind: str, size: int) -> np.ndarray:
    """Boolean (size, size) footprint of a thing shape."""
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - c, xx - c
    r = size / 2.0
    if kind == "disc":
        m = dy**2 + dx**2 <= r**2
    elif kind == "square":
        m = np.ones((size, size), dtype=bool)
    elif kind == "cross":
        t = max(1.0, size / 6.0)
        m = (np.abs(dy) <= t) | (np.abs(dx) <= t)
    elif kind == "triangle":
        # apex at the top row, base on the bottom row
        m = np.abs(dx) <= (yy + 1) / 2.0
    elif kind == "ring":
        d2 = dy**2 + dx**2
        m = (d2 <= r**2) & (d2 >= (0.5 * r) ** 2)
    elif kind == "diamond":
        m = np.abs(dy) + np.abs(dx) <= r
    else:
        raise ValueError(f"unknown shape {kind!r}")
    return m


def _soften(image: np.ndarray, weight: float) -> np.ndarray:
    # 3x3 blur with centre weight 1 - weight, edge-replicated borders
    if weight <= 0:
        return image
    p = np.pad(image, ((1, 1), (1, 1), (0, 0)), mode="edge")
    h, w = image.shape[:2]
    ring = sum(p[dy:dy + h, dx:dx + w] for dy in range(3) for dx in range(3)) - image
    return (1 - weight) * image + weight * ring / 8.0


def _hue_rotation(deg: float) -> np.ndarray:
    # rotation about the grey axis (1, 1, 1) / sqrt(3)
    a = np.deg2rad(deg)
    k = np.ones(3) / np.sqrt(3.0)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(a) * kx + (1 - np.cos(a)) * (kx @ kx)


def layout_scene(cfg: SceneConfig, rng: np.random.Generator, n_objects: int | None = None) -> tuple[int, float, list[SceneObject]]:
    """Draw the horizon and non-overlapping object boxes."""
    h, w = cfg.height, cfg.width
    horizon = int(rng.integers(h // 3, 2 * h // 3 + 1))
    slope = float(rng.uniform(-0.25, 0.25))
    if n_objects is None:
        n_objects = int(rng.integers(cfg.objects_min, cfg.objects_max + 1))
    n_stuff = len(cfg.stuff_classes)
    # shuffled round robin so every thing class shows up before any repeats
    order = []
    while len(order) < n_objects and cfg.thing_classes:
        order.extend(rng.permutation(len(cfg.thing_classes)).tolist())
    objects: list[SceneObject] = []
    boxes = []
    for t in order[:n_objects]:
        for _ in range(30):
            size = int(rng.integers(cfg.size_min, cfg.size_max + 1))
            top = int(rng.integers(0, h - size + 1))
            left = int(rng.integers(0, w - size + 1))
            # keep a one pixel gap between boxes
            if all(top + size + 1 <= bt or bt + bs + 1 <= top or left + size + 1 <= bl or bl + bs + 1 <= left
                   for bt, bl, bs in boxes):
                boxes.append((top, left, size))
                objects.append(SceneObject(n_stuff + t, cfg.thing_classes[t], top, left, size))
                break
    return horizon, slope, objects


def render_labels(cfg: SceneConfig, horizon: int, slope: float, objects: list[SceneObject]) -> np.ndarray:
    h, w = cfg.height, cfg.width
    yy, xx = np.mgrid[0:h, 0:w]
    labels = np.zeros((h, w), dtype=np.uint8)
    if len(cfg.stuff_classes) > 1:
        edge = horizon + slope * (xx - w / 2.0)
        bands = len(cfg.stuff_classes)
        # extra stuff classes split the lower part evenly
        below = yy >= edge
        labels[below] = 1
        for b in range(2, bands):
            cut = edge + (h - edge) * (b - 1) / (bands - 1)
            labels[yy >= cut] = b
    for obj in objects:
        m = shape_mask(obj.kind, obj.size)
        region = labels[obj.top:obj.top + obj.size, obj.left:obj.left + obj.size]
        region[m] = obj.class_id
    return labels


def generate_scene(domain: DomainParams, cfg: SceneConfig, rng: np.random.Generator, n_objects: int | None = None) -> Scene:
    """Render one scene; colours are quantised to 8 bits so archives round-trip."""
    horizon, slope, objects = layout_scene(cfg, rng, n_objects)
    labels = render_labels(cfg, horizon, slope, objects)
    base = np.array([STUFF_COLORS[n] for n in cfg.stuff_classes] + [THING_COLORS[n] for n in cfg.thing_classes])
    image = base[labels].copy()
    # per-region colour jitter: one offset per stuff band and per object
    for c in range(len(cfg.stuff_classes)):
        image[labels == c] += rng.uniform(-cfg.color_jitter, cfg.color_jitter, 3)
    for obj in objects:
        m = np.zeros(labels.shape, dtype=bool)
        m[obj.top:obj.top + obj.size, obj.left:obj.left + obj.size] = shape_mask(obj.kind, obj.size)
        image[m] += rng.uniform(-cfg.color_jitter, cfg.color_jitter, 3)
    image = _soften(image, cfg.edge_blur)
    image = image @ _hue_rotation(domain.hue_deg).T + domain.brightness
    image = image + rng.normal(0.0, domain.noise, image.shape)
    image = from_uint8(to_uint8(np.clip(image, 0.0, 1.0)))
    return Scene(image, labels, objects)


@dataclass
class Benchmark:
    class_names: tuple[str, ...]
    cs: ClassSpace
    thing_ids: tuple[int, ...]
    source_images: np.ndarray
    source_labels: np.ndarray
    target_images: np.ndarray
    eval_images: np.ndarray
    eval_labels: np.ndarray
    private_names: tuple[str, ...] = ()
    seed: int = 0

    @property
    def known_names(self) -> tuple[str, ...]:
        return self.class_names[: self.cs.num_known]


def apply_scenario(bench: Benchmark, private_ids) -> Benchmark:
    """Hide private classes: ignore in the source, one unknown class in eval.

    ``bench`` must be a raw benchmark (no private classes applied yet);
    surviving classes are re-indexed densely in their original order.
    """
    private_ids = sorted(set(int(p) for p in private_ids))
    n = bench.cs.num_known
    if any(not 0 <= p < n for p in private_ids):
        raise ValueError(f"private ids {private_ids} out of range [0, {n})")
    known = [c for c in range(n) if c not in private_ids]
    if not known:
        raise ValueError("private set covers every class; nothing left to adapt")
    cs = ClassSpace(len(known))
    src_lut = np.full(256, IGNORE_ID, dtype=np.uint8)
    eval_lut = np.full(256, IGNORE_ID, dtype=np.uint8)
    for new, old in enumerate(known):
        src_lut[old] = new
        eval_lut[old] = new
    for p in private_ids:
        eval_lut[p] = cs.unknown_id
    return Benchmark(
        class_names=tuple(bench.class_names[c] for c in known) + tuple(bench.class_names[p] for p in private_ids),
        cs=cs,
        thing_ids=tuple(known.index(t) for t in bench.thing_ids if t in known),
        source_images=bench.source_images,
        source_labels=src_lut[bench.source_labels],
        target_images=bench.target_images,
        eval_images=bench.eval_images,
        eval_labels=eval_lut[bench.eval_labels],
        private_names=tuple(bench.class_names[p] for p in private_ids),
        seed=bench.seed,
    )


def _split(domain: DomainParams, cfg: SceneConfig, seed_seq: np.random.SeedSequence, count: int):
    # one child seed per scene keeps scenes independent of the split size
    images, labels = [], []
    for child in seed_seq.spawn(count):
        scene = generate_scene(domain, cfg, np.random.default_rng(child))
        images.append(scene.image)
        labels.append(scene.labels)
    return np.stack(images), np.stack(labels)


def build_benchmark(cfg: SceneConfig, counts: tuple[int, ...], seed: int) -> Benchmark:
    """Generate source/target/eval splits and apply the private scenario.

    ``counts`` is (source, target) or (source, target, eval); eval defaults
    to the target count. Target training images carry no labels.
    """
    if len(counts) == 2:
        counts = (counts[0], counts[1], counts[1])
    if len(counts) != 3 or min(counts) < 1:
        raise ValueError(f"counts must be two or three positive integers, got {counts}")
    root = np.random.SeedSequence(seed)
    s_seq, t_seq, e_seq = root.spawn(3)
    src_img, src_lbl = _split(cfg.source, cfg, s_seq, counts[0])
    tgt_img, _ = _split(cfg.target, cfg, t_seq, counts[1])
    ev_img, ev_lbl = _split(cfg.target, cfg, e_seq, counts[2])
    n_stuff = len(cfg.stuff_classes)
    raw = Benchmark(
        class_names=cfg.class_names,
        cs=ClassSpace(len(cfg.class_names)),
        thing_ids=tuple(range(n_stuff, len(cfg.class_names))),
        source_images=src_img,
        source_labels=src_lbl,
        target_images=tgt_img,
        eval_images=ev_img,
        eval_labels=ev_lbl,
        seed=seed,
    )
    return apply_scenario(raw, cfg.private_ids)


# -- archive ---------------------------------------------------------------

def _manifest_lines(bench: Benchmark) -> list[str]:
    return [
        f"format_version = {ARCHIVE_VERSION}",
        f"height = {bench.source_images.shape[1]}",
        f"width = {bench.source_images.shape[2]}",
        f"num_known = {bench.cs.num_known}",
        f"unknown_id = {bench.cs.unknown_id}",
        f"ignore_id = {bench.cs.ignore_id}",
        f"class_names = {','.join(bench.class_names)}",
        f"private_names = {','.join(bench.private_names)}",
        f"thing_ids = {','.join(str(t) for t in bench.thing_ids)}",
        f"seed = {bench.seed}",
        f"num_source = {len(bench.source_images)}",
        f"num_target = {len(bench.target_images)}",
        f"num_eval = {len(bench.eval_images)}",
    ]


def save_archive(bench: Benchmark, root) -> str:
    """Write the archive directory and return its checksum."""
    root = Path(root)
    for sub in ("source/images", "source/labels", "target/images", "eval/images", "eval/labels"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for i, (img, lbl) in enumerate(zip(bench.source_images, bench.source_labels)):
        write_ppm(root / "source/images" / f"{i:05d}.ppm", to_uint8(img))
        write_pgm(root / "source/labels" / f"{i:05d}.pgm", lbl.astype(np.uint8))
    for i, img in enumerate(bench.target_images):
        write_ppm(root / "target/images" / f"{i:05d}.ppm", to_uint8(img))
    for i, (img, lbl) in enumerate(zip(bench.eval_images, bench.eval_labels)):
        write_ppm(root / "eval/images" / f"{i:05d}.ppm", to_uint8(img))
        write_pgm(root / "eval/labels" / f"{i:05d}.pgm", lbl.astype(np.uint8))
    (root / "manifest.txt").write_text("\n".join(_manifest_lines(bench)) + "\n")
    return archive_checksum(root)


def read_manifest(root) -> dict[str, str]:
    path = Path(root) / "manifest.txt"
    out = {}
    for line in path.read_text().splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def _names(value: str) -> tuple[str, ...]:
    return tuple(v for v in value.split(",") if v)


def load_archive(root, with_eval: bool = True) -> Benchmark:
    root = Path(root)
    if not (root / "manifest.txt").is_file():
        raise FileNotFoundError(f"no benchmark archive at {root}")
    m = read_manifest(root)
    if int(m["format_version"]) != ARCHIVE_VERSION:
        raise ValueError(f"unsupported archive version {m['format_version']}")
    cs = ClassSpace(int(m["num_known"]), int(m["ignore_id"]))

    def stack(paths, reader, convert):
        return np.stack([convert(reader(p)) for p in paths])

    def files(sub, n):
        return [root / sub / f"{i:05d}.{'ppm' if 'images' in sub else 'pgm'}" for i in range(n)]

    ns, nt, ne = int(m["num_source"]), int(m["num_target"]), int(m["num_eval"])
    h, w = int(m["height"]), int(m["width"])
    ev_img = stack(files("eval/images", ne), read_ppm, from_uint8) if with_eval else np.zeros((0, h, w, 3))
    ev_lbl = stack(files("eval/labels", ne), read_pgm, np.asarray) if with_eval else np.zeros((0, h, w), np.uint8)
    return Benchmark(
        class_names=_names(m["class_names"]),
        cs=cs,
        thing_ids=tuple(int(t) for t in _names(m["thing_ids"])),
        source_images=stack(files("source/images", ns), read_ppm, from_uint8),
        source_labels=stack(files("source/labels", ns), read_pgm, np.asarray),
        target_images=stack(files("target/images", nt), read_ppm, from_uint8),
        eval_images=ev_img,
        eval_labels=ev_lbl,
        private_names=_names(m["private_names"]),
        seed=int(m["seed"]),
    )


def archive_checksum(root) -> str:
    """sha256 over (relative path, bytes) of every file, in sorted order."""
    root = Path(root)
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        digest.update(path.relative_to(root).as_posix().encode() + b"\0")
        digest.update(path.read_bytes())
    return digest.hexdigest()

