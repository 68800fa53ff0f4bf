"""Segmentation network: strided-conv encoder with style substitution hooks
and a lightweight multi-scale fusion decoder, plus the EMA encoder copy used
to extract styles from unlabeled images.

GroupNorm keeps the two forward paths (clean and style-substituted) from
leaking statistics into each other and makes inference batch-independent.
"""

import copy

import torch
import torch.nn as nn
import torch.nn.functional as F

from .features import compute_style, substitute_style

FORMAT_TAG = "styleseg.network/v1"
DEFAULT_WIDTHS = (32, 64, 128, 256)
GROUPS = 8


def _stage(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1, bias=False),
        nn.GroupNorm(GROUPS, out_ch),
        nn.ReLU(inplace=True),
        nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False),
        nn.GroupNorm(GROUPS, out_ch),
        nn.ReLU(inplace=True),
    )


class Encoder(nn.Module):
    """Four stages, each halving resolution; returns all stage outputs."""

    def __init__(self, in_channels: int = 3, widths=DEFAULT_WIDTHS):
        super().__init__()
        self.widths = tuple(widths)
        chans = [in_channels] + list(widths)
        self.stages = nn.ModuleList(_stage(chans[i], chans[i + 1])
                                    for i in range(len(widths)))

    def forward(self, x: torch.Tensor):
        feats = []
        h = x
        for stage in self.stages:
            h = stage(h)
            feats.append(h)
        return feats

    def forward_from(self, h: torch.Tensor, start_stage: int):
        """Continue the pyramid from an already-computed stage output."""
        feats = []
        for stage in self.stages[start_stage:]:
            h = stage(h)
            feats.append(h)
        return feats


class Decoder(nn.Module):
    """Fuses stages 2..4 at 1/4 resolution and predicts per-pixel classes."""

    def __init__(self, widths=DEFAULT_WIDTHS, num_classes: int = 8, proj_channels: int = 48):
        super().__init__()
        self.proj = nn.ModuleList(
            nn.Sequential(nn.Conv2d(w, proj_channels, 1, bias=False),
                          nn.GroupNorm(GROUPS, proj_channels),
                          nn.ReLU(inplace=True))
            for w in widths[1:])
        fused = proj_channels * (len(widths) - 1)
        self.fuse = nn.Sequential(
            nn.Conv2d(fused, 2 * proj_channels, 3, padding=1, bias=False),
            nn.GroupNorm(GROUPS, 2 * proj_channels),
            nn.ReLU(inplace=True),
        )
        self.classify = nn.Conv2d(2 * proj_channels, num_classes, 1)

    def forward(self, feats, out_size):
        base = feats[1].shape[-2:]
        parts = []
        for proj, feat in zip(self.proj, feats[1:]):
            h = proj(feat)
            if h.shape[-2:] != base:
                h = F.interpolate(h, size=base, mode="bilinear", align_corners=False)
            parts.append(h)
        fused = self.fuse(torch.cat(parts, dim=1))
        logits = self.classify(fused)
        return F.interpolate(logits, size=out_size, mode="bilinear", align_corners=False)


class SegNetwork(nn.Module):
    """Encoder-decoder segmentation model.

    Style substitution plugs in between encoder stages: the augmented path
    reuses the clean stage outputs up to the first substitution point, so the
    shared prefix is computed once per batch.
    """

    def __init__(self, num_classes: int = 8, in_channels: int = 3, widths=DEFAULT_WIDTHS):
        super().__init__()
        self.num_classes = int(num_classes)
        self.in_channels = int(in_channels)
        self.widths = tuple(widths)
        self.encoder = Encoder(in_channels, widths)
        self.decoder = Decoder(widths, num_classes)

    def forward_features(self, x: torch.Tensor):
        return self.encoder(x)

    def decode(self, feats, out_size):
        return self.decoder(feats, out_size)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encoder(x), x.shape[-2:])

    def forward_substituted(self, clean_feats, styles: dict, out_size):
        """Augmented path: substitutes sampled styles after the given stages.

        styles maps stage index -> (mean, std) tensors [B, C]. Stage outputs
        before the earliest substituted stage are shared with the clean path.
        Returns (logits, augmented stage features).
        """
        if not styles:
            raise ValueError("styles must name at least one stage")
        first = min(styles)
        if first < 0 or max(styles) >= len(self.encoder.stages):
            raise ValueError(f"stage indices must lie in [0, {len(self.encoder.stages) - 1}]")
        feats = list(clean_feats[:first])
        h = substitute_style(clean_feats[first], *styles[first])
        feats.append(h)
        for idx in range(first + 1, len(self.encoder.stages)):
            h = self.encoder.stages[idx](h)
            if idx in styles:
                h = substitute_style(h, *styles[idx])
            feats.append(h)
        return self.decode(feats, out_size), feats


class EmaEncoder:
    """Exponential-moving-average copy of an encoder for style extraction.

    update() moves the shadow toward the online weights; extraction runs
    without gradients. The shadow never trains.
    """

    def __init__(self, encoder: Encoder, alpha: float = 0.7):
        if not 0.0 <= alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        self.alpha = float(alpha)
        self.shadow = copy.deepcopy(encoder)
        self.shadow.requires_grad_(False)
        self.shadow.eval()
        self._online = encoder

    @torch.no_grad()
    def update(self) -> None:
        for s, o in zip(self.shadow.parameters(), self._online.parameters()):
            s.mul_(self.alpha).add_(o.detach(), alpha=1.0 - self.alpha)
        for s, o in zip(self.shadow.buffers(), self._online.buffers()):
            s.copy_(o)

    @torch.no_grad()
    def extract_styles(self, x: torch.Tensor, stages) -> dict:
        """Per-channel (mean, std) of the shadow's features at the given stages."""
        feats = self.shadow(x)
        out = {}
        for idx in stages:
            mean, std = compute_style(feats[idx])
            out[idx] = (mean.cpu().numpy(), std.cpu().numpy())
        return out


def save_network(path, model: SegNetwork, extra: dict | None = None) -> None:
    payload = {
        "format": FORMAT_TAG,
        "num_classes": model.num_classes,
        "in_channels": model.in_channels,
        "widths": list(model.widths),
        "state_dict": model.state_dict(),
    }
    if extra:
        overlap = set(extra) & set(payload)
        if overlap:
            raise ValueError(f"extra keys collide with checkpoint fields: {sorted(overlap)}")
        payload.update(extra)
    torch.save(payload, path)


def load_network(path, map_location="cpu"):
    """Returns (model, payload). The payload keeps any extra fields saved along."""
    payload = torch.load(path, map_location=map_location, weights_only=False)
    if payload.get("format") != FORMAT_TAG:
        raise ValueError(f"unrecognized network checkpoint format: {payload.get('format')!r}")
    model = SegNetwork(num_classes=payload["num_classes"],
                       in_channels=payload["in_channels"],
                       widths=tuple(payload["widths"]))
    model.load_state_dict(payload["state_dict"])
    return model, payload
