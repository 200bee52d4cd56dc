"""Backbone export and golden activation dumps from the Keras model zoo."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .lwts import encode, write_lwts
from .names import BN_FIELDS, UnmappedError, engine_parameters, map_zoo_name

INPUT_SIDE = 256
SOURCE = "tf.keras.applications.MobileNetV2"


@dataclass
class ExportManifest:
    source: str
    version: str
    weights: str
    mapping: List[Tuple[str, str, str]] = field(default_factory=list)
    fixtures: List[Tuple[str, str]] = field(default_factory=list)
    extra: Dict[str, str] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"source={self.source}", f"version={self.version}", f"weights={self.weights}"]
        lines += [f"{k}={v}" for k, v in sorted(self.extra.items())]
        lines.append(f"mapped_tensors={len(self.mapping)}")
        lines += [f"fixture_{i}={h} {f}" for i, (h, f) in enumerate(self.fixtures)]
        return "\n".join(lines) + "\n"

    def mapping_csv(self) -> str:
        rows = ["zoo_layer,zoo_weight,engine_name"]
        rows += [",".join(r) for r in self.mapping]
        return "\n".join(rows) + "\n"

    def write(self, directory: Path | str) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "export_manifest.txt").write_text(self.to_text())
        (d / "mapping.csv").write_text(self.mapping_csv())


def build_zoo_model(weights: str = "random", seed: int = 0):
    """The reference MobileNetV2 feature extractor at the engine's input side.

    ``weights="imagenet"`` downloads or reuses cached pretrained weights.
    ``weights="random"`` draws seeded kernels and perturbs the batch-norm
    statistics, which exercises every mapped tensor without network access.
    """
    import tensorflow as tf

    tf.keras.utils.set_random_seed(seed)
    model = tf.keras.applications.MobileNetV2(
        input_shape=(INPUT_SIDE, INPUT_SIDE, 3),
        include_top=False,
        weights="imagenet" if weights == "imagenet" else None,
        pooling="avg",
    )
    if weights == "random":
        rng = np.random.default_rng(seed)
        for layer in model.layers:
            if isinstance(layer, tf.keras.layers.BatchNormalization):
                c = layer.gamma.shape[0]
                layer.set_weights([
                    rng.uniform(0.5, 1.5, c).astype(np.float32),
                    rng.uniform(-0.2, 0.2, c).astype(np.float32),
                    rng.uniform(-0.2, 0.2, c).astype(np.float32),
                    rng.uniform(0.5, 1.5, c).astype(np.float32),
                ])
    elif weights != "imagenet":
        raise ValueError(f"unknown weights source {weights!r}")
    return model


def _weight_field(variable) -> str:
    name = getattr(variable, "path", None) or variable.name
    return name.split("/")[-1].split(":")[0]


def collect_tensors(model) -> Tuple[Dict[str, np.ndarray], List[Tuple[str, str, str]]]:
    """Engine-named tensors from a zoo model, with the mapping rows used."""
    expected = engine_parameters()
    tensors: Dict[str, np.ndarray] = {}
    mapping: List[Tuple[str, str, str]] = []
    unmapped: List[str] = []
    for layer in model.layers:
        for variable in layer.weights:
            field_name = _weight_field(variable)
            try:
                name = map_zoo_name(layer.name, field_name)
            except UnmappedError:
                unmapped.append(f"{layer.name}/{field_name}")
                continue
            arr = np.asarray(variable.numpy(), dtype=np.float32)
            if name.endswith(".kernel") and arr.ndim == 4 and len(expected.get(name, ())) == 3:
                arr = arr[..., 0]
            tensors[name] = arr
            mapping.append((layer.name, field_name, name))
    if unmapped:
        raise UnmappedError(unmapped)
    missing = sorted(set(expected) - set(tensors))
    if missing:
        raise UnmappedError(missing)
    for name, dims in expected.items():
        if tuple(tensors[name].shape) != dims:
            raise ValueError(f"{name}: zoo shape {tensors[name].shape} != engine {dims}")
    return tensors, mapping


def export_backbone(output: Path | str, model=None, weights: str = "random", seed: int = 0) -> ExportManifest:
    """Writes the backbone weight file next to its manifest and mapping CSV."""
    if model is None:
        model = build_zoo_model(weights, seed)
    tensors, mapping = collect_tensors(model)
    data = encode(tensors)
    out = Path(output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(data)
    import tensorflow as tf

    manifest = ExportManifest(
        source=SOURCE,
        version=tf.__version__,
        weights=weights,
        mapping=mapping,
        extra={"seed": str(seed), "sha256": hashlib.sha256(data).hexdigest(), "bytes": str(len(data))},
    )
    return manifest


def fixture_images(count: int = 5, seed: int = 0) -> List[np.ndarray]:
    """Deterministic inputs already in the engine's [-1, 1] range."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:INPUT_SIDE, 0:INPUT_SIDE].astype(np.float32) / (INPUT_SIDE - 1)
    images = []
    for i in range(count):
        phase = rng.uniform(0, 2 * np.pi, 3)
        freq = rng.uniform(1.0, 6.0, 3)
        smooth = np.stack([np.sin(freq[c] * (xx + (c + 1) * yy) * np.pi + phase[c]) for c in range(3)], -1)
        noise = rng.uniform(-1.0, 1.0, smooth.shape)
        img = np.clip(0.7 * smooth + 0.3 * noise, -1.0, 1.0).astype(np.float32)
        images.append(img)
    return images


def dump_golden(
    output: Path | str,
    model,
    images: Optional[Sequence[np.ndarray]] = None,
    manifest: Optional[ExportManifest] = None,
) -> Dict[str, np.ndarray]:
    """Writes ``fixture_{i}.input`` and ``fixture_{i}.feature`` for each image."""
    images = list(images) if images is not None else fixture_images()
    if len(images) < 5:
        raise ValueError("at least 5 fixtures are required")
    golden: Dict[str, np.ndarray] = {}
    for i, img in enumerate(images):
        x = np.asarray(img, dtype=np.float32).reshape(1, INPUT_SIDE, INPUT_SIDE, 3)
        if x.min() < -1.0 or x.max() > 1.0:
            raise ValueError(f"fixture {i} leaves [-1, 1]")
        feature = np.asarray(model(x, training=False), dtype=np.float32).reshape(1, -1)
        golden[f"fixture_{i}.input"] = x
        golden[f"fixture_{i}.feature"] = feature
        if manifest is not None:
            digest = hashlib.sha256(x.tobytes()).hexdigest()
            manifest.fixtures.append((digest, " ".join(f"{v:.6g}" for v in feature[0, :4]) + " ..."))
    write_lwts(output, golden)
    return golden


__all__ = [
    "BN_FIELDS",
    "ExportManifest",
    "build_zoo_model",
    "collect_tensors",
    "export_backbone",
    "fixture_images",
    "dump_golden",
]
