"""Frozen texture reference encoder and the texture regularization term.

The texture encoder mirrors the segmentation encoder's stage layout so its
features align with the segmentation features stage by stage. It is pretrained
to classify procedural texture families from randomly colorized patches, then
frozen. During training, segmentation features on natural-surface pixels are
pulled toward this texture-discriminative reference.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .network import DEFAULT_WIDTHS, Encoder
from .objectives import texture_alignment_loss
from .textures import TEXTURE_FAMILIES, texture_patch_batch

FORMAT_TAG = "styleseg.texture-encoder/v1"

# class ids whose appearance is defined by natural surface texture
NATURAL_CLASS_IDS = (2, 3, 4, 5)

# per-stage weights on the masked feature distance, shallow to deep
STAGE_WEIGHTS = (0.0125, 0.00625, 0.0025, 0.00125)


class TextureEncoder(nn.Module):
    """Segmentation-shaped encoder with a patch classification head."""

    def __init__(self, in_channels: int = 3, widths=DEFAULT_WIDTHS,
                 num_families: int = len(TEXTURE_FAMILIES)):
        super().__init__()
        self.widths = tuple(widths)
        self.num_families = int(num_families)
        self.encoder = Encoder(in_channels, widths)
        self.head = nn.Linear(widths[-1], num_families)

    def forward_features(self, x: torch.Tensor):
        return self.encoder(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.encoder(x)
        pooled = feats[-1].mean(dim=(2, 3))
        return self.head(pooled)


def pretrain_texture_encoder(seed: int = 0, steps: int = 400, batch_size: int = 64,
                             patch_size: int = 32, lr: float = 1e-3,
                             holdout_size: int = 600, log_every: int = 0,
                             widths=DEFAULT_WIDTHS):
    """Train a TextureEncoder on synthetic patches; returns (model, report).

    The report carries the held-out accuracy; callers enforcing a floor should
    check report["holdout_accuracy"]. widths must match the segmentation
    encoder the regularizer will run against.
    """
    import numpy as np

    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    model = TextureEncoder(widths=widths)
    opt = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=0.01)
    model.train()
    for step in range(steps):
        patches, labels = texture_patch_batch(rng, patch_size, batch_size)
        x = torch.from_numpy(patches)
        y = torch.from_numpy(labels)
        loss = F.cross_entropy(model(x), y)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        if log_every and (step + 1) % log_every == 0:
            print(f"texture pretrain step {step + 1}/{steps} loss {loss.item():.4f}")

    model.eval()
    correct = 0
    with torch.inference_mode():
        for start in range(0, holdout_size, 200):
            n = min(200, holdout_size - start)
            patches, labels = texture_patch_batch(rng, patch_size, n)
            pred = model(torch.from_numpy(patches)).argmax(dim=1)
            correct += (pred == torch.from_numpy(labels)).sum().item()
    report = {
        "holdout_accuracy": correct / holdout_size,
        "steps": steps,
        "batch_size": batch_size,
        "patch_size": patch_size,
        "widths": list(model.widths),
        "families": list(TEXTURE_FAMILIES),
        "seed": seed,
    }
    return model, report


def freeze(model: nn.Module) -> nn.Module:
    model.eval()
    model.requires_grad_(False)
    return model


def natural_surface_mask(labels: torch.Tensor, size, natural_ids=NATURAL_CLASS_IDS) -> torch.Tensor:
    """Binary [B, h, w] mask of natural-texture pixels at a feature resolution.

    The label map is nearest-neighbor resized first; membership then matches
    what a full-resolution mask would give at the sampled locations.
    """
    if labels.dim() != 3:
        raise ValueError("labels must be [B, H, W]")
    small = F.interpolate(labels.float().unsqueeze(1), size=size, mode="nearest")
    small = small.squeeze(1).long()
    mask = torch.zeros_like(small, dtype=torch.float32)
    for cid in natural_ids:
        mask = mask + (small == cid).float()
    return mask.clamp_max(1.0)


def texture_regularizer(seg_feats, texture_model: TextureEncoder, images: torch.Tensor,
                        labels: torch.Tensor, weights=STAGE_WEIGHTS,
                        natural_ids=NATURAL_CLASS_IDS) -> torch.Tensor:
    """Masked feature-distance loss between segmentation and texture features.

    seg_feats: the clean-path stage features (with grad). The texture
    encoder's features act as fixed anchors. Stages with no natural pixels
    contribute zero.
    """
    with torch.inference_mode():
        ref_feats = texture_model.forward_features(images)
    ref_feats = [r.clone() for r in ref_feats]
    if len(seg_feats) != len(ref_feats) or len(seg_feats) != len(weights):
        raise ValueError("stage counts of features and weights must agree")
    pairs = []
    for student, reference in zip(seg_feats, ref_feats):
        if student.shape != reference.shape:
            raise ValueError("segmentation and texture encoders disagree on stage shapes")
        mask = natural_surface_mask(labels, student.shape[-2:], natural_ids)
        pairs.append((student, reference, mask))
    return texture_alignment_loss(pairs, weights)


def save_texture_encoder(path, model: TextureEncoder, report: dict | None = None) -> None:
    torch.save({
        "format": FORMAT_TAG,
        "widths": list(model.widths),
        "num_families": model.num_families,
        "state_dict": model.state_dict(),
        "report": dict(report or {}),
    }, path)


def load_texture_encoder(path, map_location="cpu"):
    """Returns (frozen model, report)."""
    payload = torch.load(path, map_location=map_location, weights_only=False)
    if payload.get("format") != FORMAT_TAG:
        raise ValueError(f"unrecognized texture encoder format: {payload.get('format')!r}")
    model = TextureEncoder(widths=tuple(payload["widths"]),
                           num_families=payload["num_families"])
    model.load_state_dict(payload["state_dict"])
    return freeze(model), payload.get("report", {})
