"""Capture post-ReLU conv activations from torchvision models.

Layer identifiers count conv-layers only (pooling layers excluded), 1-based;
the activation is taken after the ReLU that follows the named conv.  The
`vgg16-paper` preset selects conv layers 9, 10, 12, and 13.  Output files
carry the source crop's pixel dimensions so downstream pixel-space metrics
(patch boxes, diagonal normalization) resolve against the region the
positions were normalized over.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import torch
from PIL import Image
from torchvision import models, transforms

from .fmapwrite import write_fmap_file

log = logging.getLogger("fmap_extractor")

PRESETS = {
    "vgg16-paper": ("vgg16", [9, 10, 12, 13]),
}

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".webp"}

_PREPROCESS = transforms.Compose(
    [
        transforms.Resize((224, 224)),
        transforms.ToTensor(),
        transforms.Normalize(
            mean=[0.485, 0.456, 0.406], std=[0.229, 0.224, 0.225]
        ),
    ]
)


@dataclass
class ExtractConfig:
    model: str = "vgg16"
    conv_layers: list[int] = field(default_factory=lambda: [9, 10, 12, 13])
    images: str | Path = "."
    out: str | Path = "out"
    crops: str | Path | None = None   # YAML: image_id -> [x0, y0, x1, y1]
    weights: str | Path | None = None # state_dict path; None = random init
    pretrained: bool = False          # download torchvision weights
    seed: int = 0                     # random-init determinism

    @classmethod
    def from_preset(cls, preset: str, **kwargs) -> "ExtractConfig":
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}; known: {sorted(PRESETS)}")
        model, layers = PRESETS[preset]
        return cls(model=model, conv_layers=list(layers), **kwargs)


def build_model(config: ExtractConfig) -> torch.nn.Module:
    if config.model != "vgg16":
        raise ValueError(f"unsupported model {config.model!r}")
    torch.manual_seed(config.seed)
    weights = models.VGG16_Weights.IMAGENET1K_V1 if config.pretrained else None
    model = models.vgg16(weights=weights)
    if config.weights:
        state = torch.load(config.weights, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    model.eval()
    return model


def resolve_capture_points(
    model: torch.nn.Module, conv_layers: list[int]
) -> dict[int, int]:
    """Map 1-based conv-layer ordinals to feature-module indices of their ReLU."""
    conv_positions = [
        i for i, layer in enumerate(model.features)
        if isinstance(layer, torch.nn.Conv2d)
    ]
    capture = {}
    for ordinal in conv_layers:
        if not (1 <= ordinal <= len(conv_positions)):
            raise ValueError(
                f"conv layer {ordinal} does not resolve; model has "
                f"{len(conv_positions)} conv layers"
            )
        conv_index = conv_positions[ordinal - 1]
        relu_index = conv_index + 1
        if not isinstance(model.features[relu_index], torch.nn.ReLU):
            raise ValueError(f"no ReLU follows conv layer {ordinal}")
        capture[ordinal] = relu_index
    return capture


def list_images(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    return sorted(
        p for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )


def load_crops(path: str | Path | None) -> dict[str, tuple[int, int, int, int]]:
    if path is None:
        return {}
    import yaml

    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    return {
        str(k): tuple(int(v) for v in box) for k, box in doc.items()
    }


def extract(config: ExtractConfig) -> tuple[list[Path], list[str]]:
    """Run the model over every image; returns (written files, error strings)."""
    model = build_model(config)
    capture = resolve_capture_points(model, sorted(config.conv_layers))
    ordered = sorted(capture)  # ascending conv depth = layer_index 0..n-1
    crops = load_crops(config.crops)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)

    grabbed: dict[int, torch.Tensor] = {}
    hooks = []
    for ordinal, index in capture.items():
        def keep(module, args, output, ordinal=ordinal):
            grabbed[ordinal] = output.detach()
        hooks.append(model.features[index].register_forward_hook(keep))

    written: list[Path] = []
    errors: list[str] = []
    try:
        for path in list_images(config.images):
            image_id = path.stem
            try:
                with Image.open(path) as img:
                    img = img.convert("RGB")
                    if image_id in crops:
                        img = img.crop(crops[image_id])
                    width_px, height_px = img.size
                    tensor = _PREPROCESS(img)[None]
            except OSError as exc:
                errors.append(f"{path}: unreadable image ({exc})")
                continue
            grabbed.clear()
            with torch.no_grad():
                model.features(tensor)
            for layer_index, ordinal in enumerate(ordered):
                values = grabbed[ordinal][0].numpy()
                target = out / f"{image_id}_L{layer_index}.fmap"
                write_fmap_file(
                    target, image_id, layer_index, values, width_px, height_px
                )
                written.append(target)
    finally:
        for hook in hooks:
            hook.remove()
    for message in errors:
        log.error("%s", message)
    return written, errors
