"""Seeded synthetic stand-in for QLF dental photographs.

A scene is one row of teeth (ellipses) hanging below a band of gingiva on a
dark background. Red-fluorescent plaque grows from each tooth's gingival
margin (and the interproximal sides) until it covers the requested fraction of
visible tooth area. Channel semantics:

* R - plaque fluoresces red; gingiva is almost as red, so R alone confuses them.
* G - healthy enamel is bright green, plaque is dark green, gingiva in between.
* B - backscatter edges, blurred more as plaque gets thicker.

Every image is jittered (rotation, translation, scale, focus blur,
illumination gain, per-person gum colour and tooth layout) and carries
Gaussian pixel noise. Labels come from the realized plaque fraction, i.e. the
exact ratio of plaque pixels to visible tooth pixels in the rendered mask.
"""

from __future__ import annotations

import bisect
import enum
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import RangeError

# canonical scene is laid out on a 54 x 81 grid and scaled to the resolution
_CANON_H, _CANON_W = 54.0, 81.0

# base RGB of each region; per-person tints and white balance vary these
BACKGROUND = np.array([0.06, 0.08, 0.10])
TOOTH = np.array([0.20, 0.62, 0.45])
GUM = np.array([0.50, 0.42, 0.30])
PLAQUE_THIN = np.array([0.60, 0.20, 0.38])
PLAQUE_THICK = np.array([0.70, 0.15, 0.32])


class LabelScheme(enum.Enum):
    """Plaque-score class schemes and their fraction thresholds."""

    RFPP3 = (0.10, 0.30)
    RFMQH5 = (0.05, 0.15, 0.30, 0.50)
    MSLP4 = (0.05, 0.20, 0.50)

    @property
    def thresholds(self) -> tuple:
        return self.value

    @property
    def n_classes(self) -> int:
        return len(self.value) + 1

    @property
    def key(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> "LabelScheme":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown label scheme {text!r}; expected rfpp3, rfmqh5 or mslp4") from None

    def bin(self, c: int) -> tuple:
        edges = (0.0,) + self.thresholds + (1.0,)
        return edges[c], edges[c + 1]


def derive_label(fraction: float, scheme: LabelScheme) -> int:
    """Index of the half-open bin [t_i, t_i+1) holding ``fraction``."""
    if not 0.0 <= fraction <= 1.0:
        raise RangeError(f"plaque fraction must lie in [0, 1], got {fraction}")
    return bisect.bisect_right(scheme.thresholds, fraction)


@dataclass(frozen=True)
class SceneParams:
    """Everything that determines one image.

    Jitter fields are maxima; the realized values are drawn from ``seed``.
    ``translation`` and ``blur`` are in pixels of the 54 x 81 layout and scale
    with the resolution.
    """

    resolution: tuple = (54, 81)
    plaque_fraction: float = 0.2
    rotation: float = 20.0
    translation: float = 6.0
    scale: float = 0.15
    blur: float = 1.0
    illumination: float = 0.25
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        h, w = self.resolution
        object.__setattr__(self, "resolution", (int(h), int(w)))
        if h < 16 or w < 16:
            raise ValueError(f"resolution must be at least 16x16, got {h}x{w}")
        if not 0.0 <= self.plaque_fraction <= 1.0:
            raise ValueError(f"plaque_fraction must lie in [0, 1], got {self.plaque_fraction}")
        if min(self.rotation, self.translation, self.scale, self.blur, self.illumination, self.noise_sigma) < 0:
            raise ValueError("jitter and noise magnitudes must be non-negative")
        if self.scale >= 1 or self.illumination >= 1:
            raise ValueError("scale and illumination jitter must be < 1")


@dataclass
class Scene:
    image: np.ndarray
    tooth: np.ndarray
    plaque: np.ndarray
    fraction: float


def _layout(rng):
    """Per-person geometry in canonical coordinates."""
    n_teeth = int(rng.integers(3, 5))
    widths = rng.uniform(0.8, 1.2, size=n_teeth)
    widths = widths / widths.sum() * rng.uniform(64, 74)
    left = (_CANON_W - widths.sum()) / 2
    centers = left + np.cumsum(widths) - widths / 2
    return {
        "cx": centers,
        "rx": widths / 2 * rng.uniform(0.92, 1.0, size=n_teeth),
        "cy": rng.uniform(22, 26),
        "ry": rng.uniform(17, 21, size=n_teeth),
        "gum": rng.uniform(8, 17),
        "scallop": rng.uniform(2.0, 4.0),
        # fluorescence strength differs per person and per tissue; hue varies less
        "gum_colour": GUM * rng.uniform(0.9, 1.1, size=3) * rng.uniform(0.7, 1.3),
        "tooth_colour": TOOTH * rng.uniform(0.9, 1.1, size=3) * rng.uniform(0.75, 1.25),
        "plaque_gain": rng.uniform(0.75, 1.25),
        "balance": rng.uniform(0.92, 1.08, size=3),
        "rough_phase": rng.uniform(0, 2 * np.pi, size=3),
        "rough_freq": rng.uniform(0.15, 0.35, size=3),
    }


def render_scene(params: SceneParams) -> Scene:
    """Render one jittered scene and its tooth / plaque masks."""
    rng = np.random.default_rng(params.seed)
    h, w = params.resolution
    lay = _layout(rng)
    s = h / _CANON_H
    angle = np.deg2rad(rng.uniform(-params.rotation, params.rotation))
    shift = rng.uniform(-params.translation, params.translation, size=2) * s
    zoom = 1.0 + rng.uniform(-params.scale, params.scale)
    focus = rng.uniform(0, params.blur) * s
    gain = 1.0 + rng.uniform(-params.illumination, params.illumination)
    upper = rng.random() < 0.5  # upper-jaw views have the gum at the bottom

    # inverse-map pixel centres into the canonical layout
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5
    yc, xc = yy - h / 2 - shift[0], xx - w / 2 - shift[1]
    if upper:
        yc = -yc
    cos, sin = np.cos(angle), np.sin(angle)
    y = (cos * yc + sin * xc) / (zoom * s) + _CANON_H / 2
    x = (-sin * yc + cos * xc) / (zoom * s) + _CANON_W / 2

    # gum line dips between teeth (scalloped margin)
    cx = lay["cx"]
    nearest = np.abs(x[..., None] - cx).argmin(axis=-1)
    rel = (x - cx[nearest]) / lay["rx"][nearest]
    gum_line = lay["gum"] + lay["scallop"] * np.clip(rel, -1, 1) ** 2
    gum = y < gum_line

    tooth = np.zeros((h, w), dtype=bool)
    depth = np.full((h, w), np.inf)
    rough = sum(0.06 * np.sin(f * x + p) for f, p in zip(lay["rough_freq"], lay["rough_phase"]))
    for i in range(len(cx)):
        u = (x - cx[i]) / lay["rx"][i]
        v = (y - lay["cy"]) / lay["ry"][i]
        inside = (u ** 2 + v ** 2 <= 1.0) & ~gum & (y >= lay["cy"] - lay["ry"][i])
        bottom = lay["cy"] + lay["ry"][i] * np.sqrt(np.clip(1 - u ** 2, 0, 1))
        vertical = (y - gum_line) / np.maximum(bottom - gum_line, 1e-6)
        lateral = 1.0 - np.abs(u)
        d = np.minimum(vertical, 1.8 * lateral) + rough
        tooth |= inside
        depth = np.where(inside, np.minimum(depth, d), depth)

    n_tooth = int(tooth.sum())
    plaque = np.zeros_like(tooth)
    if n_tooth:
        k = int(round(params.plaque_fraction * n_tooth))
        flat = np.flatnonzero(tooth.ravel())
        order = flat[np.argsort(depth.ravel()[flat], kind="stable")]
        plaque.ravel()[order[:k]] = True
    fraction = plaque.sum() / n_tooth if n_tooth else 0.0

    # thickness 1 at the margin, 0 at the plaque front
    thickness = np.zeros((h, w))
    if plaque.any():
        front = depth[plaque].max()
        lo = depth[plaque].min()
        thickness[plaque] = 1.0 - (depth[plaque] - lo) / max(front - lo, 1e-6)

    img = np.empty((3, h, w))
    for c in range(3):
        plane = np.full((h, w), BACKGROUND[c])
        plane[gum] = lay["gum_colour"][c]
        plane[tooth] = lay["tooth_colour"][c]
        plane[plaque] = lay["plaque_gain"] * (PLAQUE_THIN[c] + (PLAQUE_THICK[c] - PLAQUE_THIN[c]) * thickness[plaque])
        img[c] = plane
    # backscatter edges soften as plaque thickens
    img[2] = gaussian_filter(img[2], (0.4 + 3.0 * params.plaque_fraction) * s, mode="nearest")
    if focus > 0:
        for c in range(3):
            img[c] = gaussian_filter(img[c], focus, mode="nearest")
    img *= gain * lay["balance"][:, None, None]
    if params.noise_sigma > 0:
        img += rng.normal(0.0, params.noise_sigma, size=img.shape)
    np.clip(img, 0.0, 1.0, out=img)
    return Scene(img, tooth, plaque, float(fraction))


def generate_image(params: SceneParams):
    """(image, realized plaque fraction) for one scene."""
    scene = render_scene(params)
    return scene.image, scene.fraction


def image_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    scheme: LabelScheme
    fractions: np.ndarray
    seeds: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.fractions = np.asarray(self.fractions, dtype=np.float64)
        if not (len(self.images) == len(self.labels) == len(self.fractions)):
            raise ValueError("images, labels and fractions must have equal lengths")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.scheme.n_classes):
            raise ValueError(f"labels out of range for {self.scheme.name}")

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self):
        return self.images.shape[1:]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        seeds = [self.seeds[i] for i in idx] if self.seeds else []
        return Dataset(self.images[idx], self.labels[idx], self.scheme, self.fractions[idx], seeds, self.params)


def _allocate(n, mix):
    """Largest-remainder split of n items by proportions."""
    raw = np.asarray(mix) * n
    counts = np.floor(raw).astype(int)
    rest = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:rest]] += 1
    return counts


def generate_dataset(n: int, scheme: LabelScheme, class_mix=None, base_seed: int = 0,
                     scene: SceneParams | None = None) -> Dataset:
    """Sample ``n`` scenes with per-class plaque fractions drawn uniformly
    inside each class bin; labels follow the realized fractions."""
    k = scheme.n_classes
    mix = np.full(k, 1.0 / k) if class_mix is None else np.asarray(class_mix, dtype=np.float64)
    if mix.shape != (k,) or np.any(mix < 0) or abs(mix.sum() - 1.0) > 1e-9:
        raise ValueError(f"class_mix must be {k} non-negative proportions summing to 1")
    if n < 10 * k:
        raise ValueError(f"need at least {10 * k} images for {k} classes, got {n}")
    scene = scene or SceneParams()
    rng = np.random.default_rng([base_seed, 0xDA7A])
    targets = []
    for c, count in enumerate(_allocate(n, mix)):
        lo, hi = scheme.bin(c)
        targets += [(c, f) for f in rng.uniform(lo, hi, size=count)]
    order = rng.permutation(n)
    images, labels, fractions, seeds = [], [], [], []
    for i, j in enumerate(order):
        seed = image_seed(base_seed, i)
        img, frac = generate_image(replace(scene, plaque_fraction=float(targets[j][1]), seed=seed))
        images.append(img)
        fractions.append(frac)
        labels.append(derive_label(frac, scheme))
        seeds.append(seed)
    params = asdict(scene)
    params.pop("plaque_fraction")
    params.pop("seed")
    params["resolution"] = list(scene.resolution)
    return Dataset(np.stack(images), np.array(labels), scheme, np.array(fractions), seeds, params)
