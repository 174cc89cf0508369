"""Binary PPM (P6) images and the on-disk dataset layout.

A dataset directory holds ``img_00000.ppm`` ... , ``labels.csv`` with the
columns filename, scheme, class, realized_fraction, and ``manifest.json``
with the per-image seeds, generator parameters and scheme thresholds.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .datagen import Dataset, LabelScheme
from .errors import ConsistencyError, ParseError
from .tensor import normalize

FORMAT_VERSION = 1
LABEL_COLUMNS = ["filename", "scheme", "class", "realized_fraction"]
IMAGE_NAME = "img_{:05d}.ppm"


def fmt_float(x) -> str:
    """Six significant digits, the format of every float in text output."""
    return f"{float(x):.6g}"


def round6(x) -> float:
    return float(fmt_float(x))


def write_text(path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


# --------------------------------------------------------------------------
# PPM

def encode_ppm(image) -> bytes:
    """(3, H, W) intensities in [0, 1] -> P6 bytes with maxval 255."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"PPM images need shape (3, H, W), got {image.shape}")
    raw = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    h, w = image.shape[1:]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + raw.transpose(1, 2, 0).tobytes()


def decode_ppm(data: bytes, path="<bytes>") -> np.ndarray:
    """P6 bytes -> (3, H, W) uint8 array. Header comments are allowed."""
    if data[:2] != b"P6":
        raise ParseError(path, f"bad magic bytes {data[:2]!r}, expected b'P6'")
    fields, pos = [], 2
    while len(fields) < 3:
        if pos >= len(data):
            raise ParseError(path, "truncated header")
        ch = data[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        elif ch.isdigit() and data[pos - 1:pos].isspace():
            start = pos
            while pos < len(data) and data[pos:pos + 1].isdigit():
                pos += 1
            fields.append(int(data[start:pos]))
        else:
            raise ParseError(path, f"unexpected byte {ch!r} in header at offset {pos}")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ParseError(path, "header must end with one whitespace byte")
    pos += 1
    w, h, maxval = fields
    if w < 1 or h < 1:
        raise ParseError(path, f"invalid size {w}x{h}")
    if not 0 < maxval < 256:
        raise ParseError(path, f"only 8-bit images are supported, maxval is {maxval}")
    size = 3 * w * h
    if len(data) - pos != size:
        raise ParseError(path, f"expected {size} pixel bytes for {w}x{h}, found {len(data) - pos}")
    raw = np.frombuffer(data, dtype=np.uint8, count=size, offset=pos).reshape(h, w, 3)
    if maxval != 255:
        if raw.max() > maxval:
            raise ParseError(path, f"sample value above maxval {maxval}")
        raw = np.round(raw.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    return np.ascontiguousarray(raw.transpose(2, 0, 1))


def read_ppm(path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ParseError(path, f"cannot read file ({exc.strerror})") from None
    return decode_ppm(data, path)


def write_ppm(path, image):
    Path(path).write_bytes(encode_ppm(image))


# --------------------------------------------------------------------------
# dataset directories

def export_dataset(ds: Dataset, path, base_seed=None):
    """Write ``ds`` in the directory layout; the directory may exist."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    out = io.StringIO(newline="")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(LABEL_COLUMNS)
    for i, (img, label, frac) in enumerate(zip(ds.images, ds.labels, ds.fractions)):
        name = IMAGE_NAME.format(i)
        write_ppm(path / name, img)
        writer.writerow([name, ds.scheme.name, int(label), fmt_float(frac)])
    write_text(path / "labels.csv", out.getvalue())
    manifest = {
        "format_version": FORMAT_VERSION,
        "count": len(ds),
        "scheme": ds.scheme.name,
        "thresholds": list(ds.scheme.thresholds),
        "shape": list(ds.shape),
        "base_seed": base_seed,
        "seeds": [int(s) for s in ds.seeds],
        "params": ds.params,
    }
    write_text(path / "manifest.json", dump_json(manifest))


def _read_manifest(path: Path) -> dict:
    file = path / "manifest.json"
    if not file.exists():
        raise ConsistencyError(f"{path}: no manifest.json (is this a dataset directory?)")
    try:
        manifest = json.loads(file.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(file, f"invalid JSON ({exc})") from None
    need = {"format_version", "count", "scheme", "thresholds", "seeds"}
    if not isinstance(manifest, dict) or not need <= manifest.keys():
        raise ParseError(file, f"manifest must be an object with keys {sorted(need)}")
    if manifest["format_version"] != FORMAT_VERSION:
        raise ParseError(file, f"unsupported format_version {manifest['format_version']}")
    try:
        scheme = LabelScheme.parse(str(manifest["scheme"]))
    except ValueError as exc:
        raise ParseError(file, str(exc)) from None
    if [float(t) for t in manifest["thresholds"]] != list(scheme.thresholds):
        raise ConsistencyError(f"{file}: thresholds {manifest['thresholds']} differ from {scheme.name}")
    return manifest


def _read_labels(file: Path):
    if not file.exists():
        raise ConsistencyError(f"{file.parent}: no labels.csv")
    try:
        rows = list(csv.reader(file.read_text(encoding="utf-8").splitlines()))
    except UnicodeDecodeError as exc:
        raise ParseError(file, f"not UTF-8 text ({exc})") from None
    if not rows or rows[0] != LABEL_COLUMNS:
        raise ParseError(file, f"header must be {','.join(LABEL_COLUMNS)}")
    out = []
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != 4:
            raise ParseError(file, f"line {line}: expected 4 fields, got {len(row)}")
        try:
            out.append((row[0], row[1], int(row[2]), float(row[3])))
        except ValueError:
            raise ParseError(file, f"line {line}: class must be an integer and fraction a number") from None
    return out


def load_dataset(path) -> Dataset:
    """Read a dataset directory; pixels are scaled to [0, 1]."""
    path = Path(path)
    if not path.is_dir():
        raise ConsistencyError(f"{path}: not a directory")
    if not any(path.iterdir()):
        raise ConsistencyError(f"{path}: empty directory")
    manifest = _read_manifest(path)
    scheme = LabelScheme.parse(manifest["scheme"])
    rows = _read_labels(path / "labels.csv")
    images_on_disk = sorted(p.name for p in path.glob("*.ppm"))
    if not (len(rows) == len(images_on_disk) == manifest["count"] == len(manifest["seeds"])):
        raise ConsistencyError(
            f"{path}: {len(images_on_disk)} images, {len(rows)} label rows, manifest count "
            f"{manifest['count']} and {len(manifest['seeds'])} seeds do not agree")
    if len(rows) == 0:
        raise ConsistencyError(f"{path}: dataset holds no images")
    by_name = {}
    for name, sch, label, frac in rows:
        if name in by_name:
            raise ConsistencyError(f"{path / 'labels.csv'}: {name} listed twice")
        if sch.upper() != scheme.name:
            raise ConsistencyError(f"{path / 'labels.csv'}: {name} has scheme {sch}, manifest says {scheme.name}")
        if not 0 <= label < scheme.n_classes:
            raise ConsistencyError(f"{path / 'labels.csv'}: {name} has class {label} outside {scheme.name}")
        by_name[name] = (label, frac)
    missing = sorted(set(images_on_disk) - by_name.keys()) + sorted(by_name.keys() - set(images_on_disk))
    if missing:
        raise ConsistencyError(f"{path}: images and labels.csv disagree on {missing[:5]}")
    names = [r[0] for r in rows]
    images = [read_ppm(path / n) for n in names]
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ConsistencyError(f"{path}: images have different sizes {sorted(shapes)}")
    stack = normalize(np.stack(images).astype(np.float64))
    labels = np.array([by_name[n][0] for n in names], dtype=np.int64)
    fractions = np.array([by_name[n][1] for n in names])
    return Dataset(stack, labels, scheme, fractions, [int(s) for s in manifest["seeds"]],
                   manifest.get("params") or {})
