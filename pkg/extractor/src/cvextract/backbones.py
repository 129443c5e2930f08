"""Backbone registry: frozen encoders producing per-patch feature grids.

A backbone takes a normalized image batch (B, 3, S, S) and returns patch
features (B, C, H, W) plus a class-token batch (B, C). Built-in "toy"
backbones are small randomly-initialized patch encoders with a fixed seed:
deterministic, weight-free, and sufficient for exercising the extraction
pipeline end to end without downloading checkpoints. Real pretrained
models load through ``timm:<name>`` or ``torchhub:<repo>:<entry>``.
"""

from __future__ import annotations

import torch
from torch import nn

TOY_SEED = 8671


class PatchEncoder(nn.Module):
    """Patch embedding + per-patch mixing; ViT-shaped output without the
    transformer stack."""

    def __init__(self, patch_size: int, embed_dim: int):
        super().__init__()
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        self.embed = nn.Conv2d(3, embed_dim, kernel_size=patch_size, stride=patch_size)
        self.norm = nn.LayerNorm(embed_dim)
        self.mix = nn.Linear(embed_dim, embed_dim)
        self.cls_head = nn.Linear(embed_dim, embed_dim)

    def forward(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        grid = self.embed(images)  # (B, C, H, W)
        tokens = grid.flatten(2).transpose(1, 2)  # (B, H*W, C)
        tokens = self.mix(torch.nn.functional.gelu(self.norm(tokens)))
        b, _, c = tokens.shape
        h, w = grid.shape[2], grid.shape[3]
        patches = tokens.transpose(1, 2).reshape(b, c, h, w)
        cls = self.cls_head(tokens.mean(dim=1))
        return patches, cls


def _build_toy(patch_size: int, embed_dim: int) -> nn.Module:
    generator = torch.Generator().manual_seed(TOY_SEED)
    model = PatchEncoder(patch_size, embed_dim)
    with torch.no_grad():
        for parameter in model.parameters():
            parameter.copy_(
                torch.empty_like(parameter).normal_(0.0, 0.02, generator=generator)
            )
    return model


class HubBackbone(nn.Module):
    """Wrapper for ViT-style hub models exposing get_intermediate_layers."""

    def __init__(self, model: nn.Module):
        super().__init__()
        self.model = model

    def forward(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        grids = self.model.get_intermediate_layers(
            images, n=1, reshape=True, return_class_token=True
        )
        patches, cls = grids[0]
        return patches, cls


class TimmBackbone(nn.Module):
    """Wrapper for timm ViTs: forward_features token output reshaped to a grid."""

    def __init__(self, model: nn.Module):
        super().__init__()
        self.model = model

    def forward(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        tokens = self.model.forward_features(images)  # (B, N(+prefix), C)
        prefix = getattr(self.model, "num_prefix_tokens", 1)
        cls = tokens[:, 0] if prefix else tokens.mean(dim=1)
        patches = tokens[:, prefix:]
        b, n, c = patches.shape
        side = int(n**0.5)
        if side * side != n:
            raise ValueError(f"cannot reshape {n} patch tokens into a square grid")
        return patches.transpose(1, 2).reshape(b, c, side, side), cls


def load_backbone(name: str, device: str = "cpu") -> nn.Module:
    """Build or load a backbone by name and freeze it in eval mode.

    Names: ``toy-vit-p16`` / ``toy-vit-p8`` (built-in, deterministic),
    ``timm:<model_name>`` or ``torchhub:<repo>:<entry>`` for pretrained
    checkpoints (require downloaded weights).
    """
    if name == "toy-vit-p16":
        model = _build_toy(patch_size=16, embed_dim=64)
    elif name == "toy-vit-p8":
        model = _build_toy(patch_size=8, embed_dim=32)
    elif name.startswith("timm:"):
        import timm

        model = TimmBackbone(timm.create_model(name[5:], pretrained=True))
    elif name.startswith("torchhub:"):
        _, repo, entry = name.split(":", 2)
        model = HubBackbone(torch.hub.load(repo, entry))
    else:
        raise ValueError(f"unknown backbone '{name}'")
    model.eval()
    for parameter in model.parameters():
        parameter.requires_grad_(False)
    return model.to(device)
