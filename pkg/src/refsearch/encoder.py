"""Image -> fixed-dimension embedding, via a pluggable backend.

Two backends:
  - "toy-patch-stats": hermetic, dependency-free. The preprocessed image is
    split into an 8x8 grid of patches; the embedding is every patch's
    per-channel mean followed by every patch's per-channel standard deviation
    (population), patches row-major and channels RGB within each patch:
    2 * 8 * 8 * 3 = 384 values.
  - "interchange-model": a serialized network in ONNX format with signature
    float32[1,3,S,S] -> float32[1,dim], executed with onnxruntime (optional
    dependency).

Backends return raw vectors; unit normalization happens in the reference
store, which is the single owner of that invariant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .rasterize import RenderedImage

BACKEND_TOY = "toy-patch-stats"
BACKEND_ONNX = "interchange-model"

TOY_GRID = 8
TOY_DIM = 2 * TOY_GRID * TOY_GRID * 3  # 384

MANIFEST_KEYS = ("backend", "model_path", "input_size", "channel_mean", "channel_std", "output_head")


class EncoderError(ValueError):
    """Invalid manifest, unloadable backend, or output contract violation."""


@dataclass
class EncoderManifest:
    """Preprocessing constants plus which backend produces the embedding."""

    backend: str = BACKEND_TOY
    model_path: str | None = None
    input_size: int = 224
    channel_mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    channel_std: tuple[float, float, float] = (1.0, 1.0, 1.0)
    output_head: str = "class-token"

    def __post_init__(self):
        if self.backend not in (BACKEND_TOY, BACKEND_ONNX):
            raise EncoderError(f"unknown backend {self.backend!r}")
        if self.backend == BACKEND_ONNX and not self.model_path:
            raise EncoderError("interchange-model backend requires model_path")
        if self.backend == BACKEND_TOY and self.model_path:
            raise EncoderError("toy-patch-stats backend takes no model_path")
        if self.input_size < 1:
            raise EncoderError(f"input_size must be >= 1, got {self.input_size}")
        self.channel_mean = tuple(float(x) for x in self.channel_mean)
        self.channel_std = tuple(float(x) for x in self.channel_std)
        if len(self.channel_mean) != 3 or len(self.channel_std) != 3:
            raise EncoderError("channel_mean and channel_std must have 3 components")
        if any(s <= 0 for s in self.channel_std):
            raise EncoderError("channel_std components must be > 0")
        if self.output_head not in ("class-token", "mean-pooled"):
            raise EncoderError(f"unknown output_head {self.output_head!r}")


def save_manifest(manifest: EncoderManifest, path: str | Path) -> None:
    Path(path).write_text(json.dumps(asdict(manifest), indent=2) + "\n", encoding="utf-8")


def load_manifest(path: str | Path) -> EncoderManifest:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise EncoderError(f"cannot read manifest {path}: {exc}") from exc
    unknown = set(raw) - set(MANIFEST_KEYS)
    if unknown:
        raise EncoderError(f"manifest {path} has unknown keys: {sorted(unknown)}")
    manifest = EncoderManifest(**raw)
    # model_path in a sidecar is resolved relative to the sidecar itself.
    if manifest.model_path and not Path(manifest.model_path).is_absolute():
        manifest.model_path = str(Path(path).parent / manifest.model_path)
    return manifest


def _to_array(image) -> np.ndarray:
    if isinstance(image, RenderedImage):
        return image.pixels
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise EncoderError(f"expected (h, w, 3) RGB image, got shape {arr.shape}")
    return arr


def _resize_bilinear(img: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resample to size x size, pixel centers at half-integers."""
    h, w = img.shape[:2]
    if (h, w) == (size, size):
        return img.astype(np.float64)

    def axis_weights(n_in: int):
        src = (np.arange(size) + 0.5) * (n_in / size) - 0.5
        lo = np.floor(src)
        frac = src - lo
        i0 = np.clip(lo.astype(np.int64), 0, n_in - 1)
        i1 = np.clip(i0 + 1, 0, n_in - 1)
        return i0, i1, frac

    r0, r1, fy = axis_weights(h)
    c0, c1, fx = axis_weights(w)
    img = img.astype(np.float64)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[r0][:, c0] * (1 - fx) + img[r0][:, c1] * fx
    bottom = img[r1][:, c0] * (1 - fx) + img[r1][:, c1] * fx
    return top * (1 - fy) + bottom * fy


def preprocess(image, manifest: EncoderManifest) -> np.ndarray:
    """Resize, scale to [0,1], standardize per channel -> float32 (3, S, S)."""
    arr = _to_array(image)
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise EncoderError("cannot preprocess a zero-dimension image")
    resized = _resize_bilinear(arr, manifest.input_size) / 255.0
    mean = np.asarray(manifest.channel_mean)
    std = np.asarray(manifest.channel_std)
    standardized = (resized - mean) / std
    return standardized.transpose(2, 0, 1).astype(np.float32)


class ToyPatchStatsEncoder:
    """Normative hermetic backend: 8x8 patch means + standard deviations."""

    dim = TOY_DIM

    def encode(self, tensor: np.ndarray) -> np.ndarray:
        _, height, width = tensor.shape
        bounds_r = [i * height // TOY_GRID for i in range(TOY_GRID + 1)]
        bounds_c = [i * width // TOY_GRID for i in range(TOY_GRID + 1)]
        t = tensor.astype(np.float64)
        means = np.empty((TOY_GRID, TOY_GRID, 3))
        stds = np.empty((TOY_GRID, TOY_GRID, 3))
        for r in range(TOY_GRID):
            for c in range(TOY_GRID):
                patch = t[:, bounds_r[r] : bounds_r[r + 1], bounds_c[c] : bounds_c[c + 1]]
                means[r, c] = patch.mean(axis=(1, 2))
                stds[r, c] = patch.std(axis=(1, 2))
        return np.concatenate([means.ravel(), stds.ravel()]).astype(np.float32)


class OnnxEncoder:
    """Runs an interchange-format model with signature [1,3,S,S] -> [1,dim]."""

    def __init__(self, model_path: str):
        try:
            import onnxruntime
        except ImportError as exc:
            raise EncoderError(
                "interchange-model backend needs the onnxruntime package "
                "(install the 'onnx' extra)"
            ) from exc
        if not Path(model_path).is_file():
            raise EncoderError(f"model file not found: {model_path}")
        try:
            self._session = onnxruntime.InferenceSession(
                str(model_path), providers=["CPUExecutionProvider"]
            )
        except Exception as exc:
            raise EncoderError(f"cannot load model {model_path}: {exc}") from exc
        inputs = self._session.get_inputs()
        outputs = self._session.get_outputs()
        if len(inputs) != 1 or len(outputs) != 1:
            raise EncoderError(
                f"model must have exactly one input and one output, "
                f"got {len(inputs)}/{len(outputs)}"
            )
        self._input_name = inputs[0].name
        self._output_name = outputs[0].name
        shape = outputs[0].shape
        if len(shape) != 2 or not isinstance(shape[1], int):
            raise EncoderError(f"model output must be [1, dim], got {shape}")
        self.dim = int(shape[1])

    def encode(self, tensor: np.ndarray) -> np.ndarray:
        batch = tensor[None, ...].astype(np.float32)
        (out,) = self._session.run([self._output_name], {self._input_name: batch})
        vec = np.asarray(out, dtype=np.float32).reshape(-1)
        if vec.shape[0] != self.dim:
            raise EncoderError(
                f"backend produced dim {vec.shape[0]}, declared {self.dim}"
            )
        if not np.isfinite(vec).all():
            raise EncoderError("backend produced non-finite embedding components")
        return vec


def make_encoder(manifest: EncoderManifest):
    """Construct the backend once; the result is immutable and reusable."""
    if manifest.backend == BACKEND_TOY:
        return ToyPatchStatsEncoder()
    return OnnxEncoder(manifest.model_path)


def encode(image, manifest: EncoderManifest, backend=None) -> np.ndarray:
    """Embed one image. Pass a prebuilt backend to avoid reloading models."""
    if backend is None:
        backend = make_encoder(manifest)
    return backend.encode(preprocess(image, manifest))


def encode_batch(images, manifest: EncoderManifest) -> list[np.ndarray]:
    """Embed images in order; a failure aborts with the offending index."""
    if not images:
        return []
    backend = make_encoder(manifest)
    out = []
    for i, image in enumerate(images):
        try:
            out.append(backend.encode(preprocess(image, manifest)))
        except Exception as exc:
            raise EncoderError(f"encoding failed at batch index {i}: {exc}") from exc
    return out
