"""Experiment configuration: a strict JSON document.

Schema (every key optional, unknown keys rejected)::

    {
      "dataset": {"generate": {"n": 300, "base_seed": 0, "class_mix": null,
                               "scene": {"resolution": [54, 81], "rotation": 20.0, ...}}}
                 or {"path": "some/dataset/dir"},
      "scheme": "rfpp3" | "rfmqh5" | "mslp4",
      "compositions": ["r", "rg", "rgb"],
      "models": ["lr", "svmk", "svml", "gnb", "gbc", "knc", "rfc", "cnn"],
      "grids": {"knc": {"k": [1, 3]}, ...},
      "cnn": {"arch": {"stem_maps": 8, "blocks": [[8, true], ...], "dense_hidden": 32, "kernel": 3},
              "train": {"learning_rate": 0.01, "momentum": 0.9, "epochs": 20, "batch_size": 16,
                        "l2": 0.0001, "dtype": "float32", "flips": true},
              "crop": null | [48, 80]},
      "seed": 0,
      "out": null | "output/dir"
    }

``seed`` drives the splits and every model; ``dataset.generate.base_seed``
drives the images. Nothing else is random.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import cnn
from .datagen import LabelScheme, SceneParams
from .eval import CnnSettings, EVAL_CNN_ARCH, EVAL_CNN_TRAIN, MODEL_ORDER, parse_model
from .shallow import DEFAULT_GRIDS, HYPER_KEYS, ModelKind, check_hyperparams, expand_grid
from .tensor import ChannelMask

CLI_NAMES = {"LR": "lr", "SVMC_K": "svmk", "SVMC_L": "svml", "GNB": "gnb", "GBC": "gbc", "KNC": "knc",
             "RFC": "rfc", "CNN": "cnn"}
_ALIASES = {v: k for k, v in CLI_NAMES.items()}
SCENE_KEYS = tuple(f.name for f in fields(SceneParams) if f.name not in ("plaque_fraction", "seed"))
ARCH_KEYS = ("stem_maps", "blocks", "dense_hidden", "kernel")
TRAIN_KEYS = tuple(f.name for f in fields(cnn.TrainConfig) if f.name != "seed")


class ConfigError(ValueError):
    """The configuration is malformed or refers to unknown names."""


def model_name(text) -> str:
    """'svmk' or 'SVMC_K' -> 'SVMC_K'; 'cnn' -> 'CNN'."""
    key = str(text).strip().lower()
    try:
        return _ALIASES[key] if key in _ALIASES else parse_model(text)
    except ValueError:
        raise ConfigError(f"unknown model {text!r}; expected one of {', '.join(CLI_NAMES.values())}") from None


def composition_name(text) -> str:
    try:
        return ChannelMask.parse(str(text)).name
    except (ValueError, KeyError):
        raise ConfigError(f"unknown channel composition {text!r}; expected letters from r, g, b") from None


def default_dict() -> dict:
    return {
        "dataset": {"generate": {"n": 300, "base_seed": 0, "class_mix": None, "scene": {}}},
        "scheme": "rfpp3",
        "compositions": ["r", "rg", "rgb"],
        "models": [CLI_NAMES[m] for m in MODEL_ORDER],
        "grids": {},
        "cnn": {"arch": {k: v for k, v in EVAL_CNN_ARCH.to_dict().items() if k in ARCH_KEYS},
                "train": {k: v for k, v in asdict(EVAL_CNN_TRAIN).items() if k in TRAIN_KEYS},
                "crop": None},
        "seed": 0,
        "out": None,
    }


def _strict(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) {extra} in {where}; allowed: {sorted(allowed)}")


def _int(v, where, minimum=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where} must be an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{where} must be >= {minimum}, got {v}")
    return v


def _merge(base: dict, over: dict, where: str) -> dict:
    """Recursive update that keeps the base's nested defaults."""
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("grids", "dataset"):
            out[k] = _merge(out[k], v, f"{where}.{k}")
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    dataset: dict
    scheme: str
    compositions: list
    models: list
    grids: dict
    cnn: dict
    seed: int
    out: str | None

    # ------------------------------------------------------------------
    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        _strict(raw, default_dict().keys(), "config")
        d = _merge(default_dict(), raw, "config")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self)}

    def digest(self) -> str:
        """Hash of everything that affects results (the output path does not)."""
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode("utf-8")).hexdigest()

    # ------------------------------------------------------------------
    def validate(self):
        _strict(self.dataset, ("generate", "path"), "dataset")
        if len(self.dataset) != 1:
            raise ConfigError("dataset must hold exactly one of 'generate' or 'path'")
        if "path" in self.dataset:
            if not isinstance(self.dataset["path"], str):
                raise ConfigError("dataset.path must be a string")
        else:
            gen = self.dataset["generate"]
            _strict(gen, ("n", "base_seed", "class_mix", "scene"), "dataset.generate")
            gen.setdefault("n", 300)
            gen.setdefault("base_seed", 0)
            gen.setdefault("class_mix", None)
            gen.setdefault("scene", {})
            _int(gen["n"], "dataset.generate.n", 1)
            _int(gen["base_seed"], "dataset.generate.base_seed", 0)
            _strict(gen["scene"], SCENE_KEYS, "dataset.generate.scene")
            try:
                self.scene_params()
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"dataset.generate.scene: {exc}") from None
        try:
            LabelScheme.parse(str(self.scheme))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.scheme = self.scheme.lower()
        if not isinstance(self.compositions, list) or not self.compositions:
            raise ConfigError("compositions must be a non-empty list")
        self.compositions = [composition_name(c).lower() for c in self.compositions]
        if not isinstance(self.models, list) or not self.models:
            raise ConfigError("models must be a non-empty list")
        self.models = [CLI_NAMES[model_name(m)] for m in self.models]
        for what, items in (("models", self.models), ("compositions", self.compositions)):
            if len(set(items)) != len(items):
                raise ConfigError(f"{what} must not repeat: {items}")
        if not isinstance(self.grids, dict):
            raise ConfigError("grids must be an object")
        grids = {}
        for name, grid in self.grids.items():
            kind = model_name(name)
            if kind == "CNN":
                raise ConfigError("the CNN has no grid; it is selected by validation epoch")
            _strict(grid, HYPER_KEYS[ModelKind(kind)], f"grids.{name}")
            if not all(isinstance(v, list) and v for v in grid.values()):
                raise ConfigError(f"grids.{name}: every hyperparameter needs a non-empty list of values")
            try:
                for hp in expand_grid({**DEFAULT_GRIDS[ModelKind(kind)], **grid}):
                    check_hyperparams(kind, hp)
            except ValueError as exc:
                raise ConfigError(f"grids.{name}: {exc}") from None
            grids[CLI_NAMES[kind]] = grid
        self.grids = grids
        _strict(self.cnn, ("arch", "train", "crop"), "cnn")
        _strict(self.cnn["arch"], ARCH_KEYS, "cnn.arch")
        _strict(self.cnn["train"], TRAIN_KEYS, "cnn.train")
        crop = self.cnn["crop"]
        if crop is not None and (not isinstance(crop, list) or len(crop) != 2):
            raise ConfigError("cnn.crop must be null or [height, width]")
        try:
            self.cnn_settings()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"cnn: {exc}") from None
        _int(self.seed, "seed", 0)
        if self.out is not None and not isinstance(self.out, str):
            raise ConfigError("out must be null or a path string")

    # ------------------------------------------------------------------
    def scene_params(self) -> SceneParams:
        scene = dict(self.dataset["generate"].get("scene", {}))
        if "resolution" in scene:
            scene["resolution"] = tuple(scene["resolution"])
        return SceneParams(**scene)

    def label_scheme(self) -> LabelScheme:
        return LabelScheme.parse(self.scheme)

    def model_kinds(self) -> list:
        return [model_name(m) for m in self.models]

    def masks(self) -> list:
        return [ChannelMask.parse(c) for c in self.compositions]

    def grid_map(self) -> dict:
        """Full grids per model kind: defaults overridden key by key."""
        return {model_name(n): {**DEFAULT_GRIDS[ModelKind(model_name(n))], **g} for n, g in self.grids.items()}

    def cnn_settings(self) -> CnnSettings:
        arch = {**EVAL_CNN_ARCH.to_dict(), **self.cnn["arch"]}
        arch["blocks"] = tuple(tuple(b) for b in arch["blocks"])
        # placeholder input size; experiments substitute the data's
        pools = sum(bool(b[1]) for b in arch["blocks"] if len(b) == 2)
        arch["input_height"] = arch["input_width"] = 2 ** pools
        train = {**asdict(EVAL_CNN_TRAIN), **self.cnn["train"]}
        crop = self.cnn["crop"]
        return CnnSettings(cnn.ArchSpec(**arch), cnn.TrainConfig(**train), tuple(crop) if crop else None)

