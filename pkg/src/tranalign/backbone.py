"""Small convolutional feature extractor with an explicit gradient contract.

Three conv blocks (3x3 conv with bias, ReLU, 2x average-pool downsample) take
an H x W input to an H/8 x W/8 feature map; global average pooling plus a
linear projection give the global vector f, and a linear classifier maps f to
identity logits. Distances always consume the l2-normalized copy f_unit while
the classifier sees the raw f.

Convolutions use replicate padding, so a spatially constant input stays
spatially constant through the whole stack (an all-zero image produces the
pure bias response at every position).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .align import ImageEmbedding, compress_stripes
from .errors import GradientStateError, InvalidInputError, ShapeError
from .imaging import ModelInput


@dataclass
class BackboneConfig:
    in_channels: int = 3
    widths: tuple[int, ...] = (16, 32, 64)
    c_prime: int = 128
    num_classes: int = 2
    kernel: int = 3

    def __post_init__(self):
        if not self.widths:
            raise InvalidInputError("widths must list at least one block")
        if self.kernel % 2 != 1:
            raise InvalidInputError("kernel size must be odd")
        if self.num_classes < 1:
            raise InvalidInputError("num_classes must be >= 1")

    @property
    def total_stride(self) -> int:
        return 2 ** len(self.widths)


def global_pool(fm: torch.Tensor) -> torch.Tensor:
    """Average over the spatial dims: (B,C,H,W) -> (B,C)."""
    return fm.mean(dim=(2, 3))


def backbone_from_arrays(arrays: dict[str, np.ndarray]) -> "Backbone":
    """Rebuild a model from checkpoint arrays, inferring the layer shapes."""
    widths = []
    i = 1
    while f"conv{i}.weight" in arrays:
        widths.append(arrays[f"conv{i}.weight"].shape[0])
        i += 1
    if not widths or "proj.weight" not in arrays or "cls.weight" not in arrays:
        raise InvalidInputError("arrays do not describe a complete model")
    config = BackboneConfig(
        in_channels=arrays["conv1.weight"].shape[1],
        widths=tuple(widths),
        c_prime=arrays["proj.weight"].shape[0],
        num_classes=arrays["cls.weight"].shape[0],
        kernel=arrays["conv1.weight"].shape[2],
    )
    model = Backbone(config, np.random.default_rng(0))
    model.load_state_arrays(arrays)
    return model


class Backbone:
    """Parameter container plus forward/backward over the conv stack."""

    def __init__(self, config: BackboneConfig, rng: np.random.Generator):
        self.config = config
        self.params: dict[str, torch.Tensor] = {}
        self._backward_done = False

        def he(shape: tuple[int, ...], fan_in: int) -> torch.Tensor:
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(np.float32)
            return torch.from_numpy(w).requires_grad_(True)

        k = config.kernel
        c_in = config.in_channels
        for i, width in enumerate(config.widths, start=1):
            self.params[f"conv{i}.weight"] = he((width, c_in, k, k), c_in * k * k)
            self.params[f"conv{i}.bias"] = torch.zeros(width, requires_grad=True)
            c_in = width
        self.params["proj.weight"] = he((config.c_prime, c_in), c_in)
        self.params["proj.bias"] = torch.zeros(config.c_prime, requires_grad=True)
        cls_w = rng.normal(0.0, 0.01, size=(config.num_classes, config.c_prime))
        self.params["cls.weight"] = torch.from_numpy(cls_w.astype(np.float32)).requires_grad_(True)
        self.params["cls.bias"] = torch.zeros(config.num_classes, requires_grad=True)

    def _as_batch(self, batch) -> torch.Tensor:
        if isinstance(batch, torch.Tensor):
            x = batch
        elif isinstance(batch, np.ndarray):
            x = torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32))
        else:
            if len(batch) == 0:
                raise InvalidInputError("batch is empty")
            tensors = [m.tensor if isinstance(m, ModelInput) else m for m in batch]
            shapes = {t.shape for t in tensors}
            if len(shapes) != 1:
                raise ShapeError(f"batch mixes resolutions: {sorted(shapes)}")
            x = torch.from_numpy(np.stack(tensors).astype(np.float32))
        if x.dim() != 4:
            raise ShapeError(f"expected (B,C,H,W) batch, got {tuple(x.shape)}")
        if x.shape[0] == 0:
            raise InvalidInputError("batch is empty")
        return x

    def forward(self, batch) -> torch.Tensor:
        """Run the conv stack; returns the (B, C, H/s, W/s) feature map."""
        x = self._as_batch(batch)
        stride = self.config.total_stride
        if x.shape[2] % stride or x.shape[3] % stride:
            raise ShapeError(
                f"resolution {x.shape[2]}x{x.shape[3]} not divisible by total stride {stride}"
            )
        pad = self.config.kernel // 2
        for i in range(1, len(self.config.widths) + 1):
            x = F.pad(x, (pad, pad, pad, pad), mode="replicate")
            x = F.conv2d(x, self.params[f"conv{i}.weight"], self.params[f"conv{i}.bias"])
            x = F.relu(x)
            x = F.avg_pool2d(x, 2)
        return x

    def global_head(self, fm: torch.Tensor):
        """GAP -> f -> logits; returns (f, f_unit, logits, zero_flags)."""
        if fm.dim() != 4:
            raise ShapeError(f"expected (B,C,H,W) feature map, got {tuple(fm.shape)}")
        pooled = global_pool(fm)
        f = F.linear(pooled, self.params["proj.weight"], self.params["proj.bias"])
        logits = F.linear(f, self.params["cls.weight"], self.params["cls.bias"])
        norms = f.norm(dim=1, keepdim=True)
        zero_flags = (norms == 0.0).squeeze(1)
        f_unit = f / norms.clamp_min(1e-12)
        return f, f_unit, logits, zero_flags

    def backward(self, loss: torch.Tensor) -> None:
        """Accumulate parameter gradients for a scalar loss."""
        loss.backward()
        self._backward_done = True

    def gradients(self) -> dict[str, np.ndarray]:
        """Latest gradients per parameter; frozen slots are exactly zero."""
        if not self._backward_done:
            raise GradientStateError("no backward pass has run since the last reset")
        out = {}
        for name, p in self.params.items():
            if p.grad is None:
                out[name] = np.zeros(tuple(p.shape), dtype=np.float32)
            else:
                out[name] = p.grad.detach().numpy().copy()
        return out

    def zero_grad(self) -> None:
        for p in self.params.values():
            if p.grad is not None:
                p.grad = None
        self._backward_done = False

    def freeze(self, name: str) -> None:
        if name not in self.params:
            raise InvalidInputError(f"unknown parameter {name!r}")
        self.params[name] = self.params[name].detach().requires_grad_(False)

    def trainable(self) -> list[torch.Tensor]:
        return [p for p in self.params.values() if p.requires_grad]

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.detach().numpy().copy() for k, v in self.params.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        if missing:
            raise InvalidInputError(f"checkpoint missing parameters: {sorted(missing)}")
        for name, p in self.params.items():
            arr = np.asarray(arrays[name], dtype=np.float32)
            if tuple(arr.shape) != tuple(p.shape):
                raise ShapeError(
                    f"parameter {name}: checkpoint shape {arr.shape} vs model {tuple(p.shape)}"
                )
            with torch.no_grad():
                p.copy_(torch.from_numpy(arr))

    def embed(self, inputs, r: int, chunk: int = 64) -> list[ImageEmbedding]:
        """Retrieval embeddings for a list of images, float64 and exact.

        Forward runs in float32 under no_grad; stripes and the unit global
        vector are then recomputed in float64 so identical images produce
        bit-identical embeddings.
        """
        embeddings: list[ImageEmbedding] = []
        for start in range(0, len(inputs), chunk):
            part = inputs[start:start + chunk]
            with torch.no_grad():
                fm = self.forward(part)
                pooled = global_pool(fm)
                f = F.linear(pooled, self.params["proj.weight"], self.params["proj.bias"])
            fm_np = fm.numpy().astype(np.float64)
            f_np = f.numpy().astype(np.float64)
            for b in range(fm_np.shape[0]):
                stripes = compress_stripes(fm_np[b], r)
                norm = float(np.linalg.norm(f_np[b]))
                if norm == 0.0:
                    f_unit = np.zeros_like(f_np[b])
                    flag = True
                else:
                    f_unit = f_np[b] / norm
                    flag = False
                embeddings.append(
                    ImageEmbedding(
                        stripes=stripes.stripes, f=f_np[b], f_unit=f_unit, zero_flag=flag
                    )
                )
        return embeddings
