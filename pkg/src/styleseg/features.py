"""Per-channel style statistics of feature maps and style substitution.

Style here means the spatial mean and standard deviation of each channel of a
[B, C, H, W] feature tensor. Substitution renormalizes a feature map to carry
a different style while keeping its spatial content.
"""

import torch

# Keeps the round trip substitute(F, style(F)) == F well under 1e-4 even for
# channels whose std is as small as 1e-2.
DEFAULT_EPS = 1e-8


def compute_style(features: torch.Tensor):
    """Spatial mean and std per channel of a [B, C, H, W] tensor.

    Returns (mean, std), each [B, C]. Uses the population variance (1/N); a
    constant channel yields std exactly 0.
    """
    if features.dim() != 4:
        raise ValueError(f"expected [B, C, H, W], got shape {tuple(features.shape)}")
    mean = features.mean(dim=(2, 3))
    var = features.var(dim=(2, 3), unbiased=False)
    std = var.clamp_min(0.0).sqrt()
    return mean, std


def substitute_style(features: torch.Tensor, mean: torch.Tensor, std: torch.Tensor,
                     eps: float = DEFAULT_EPS) -> torch.Tensor:
    """Renormalize features to the given per-channel style.

    Whitens each channel by its own spatial statistics and rescales to the
    target (mean, std), both [B, C]. eps guards division for constant
    channels; it must stay small or the round trip stops being exact.
    """
    own_mean, own_std = compute_style(features)
    own_mean = own_mean[:, :, None, None]
    own_std = own_std[:, :, None, None]
    target_mean = mean[:, :, None, None]
    target_std = std[:, :, None, None]
    normalized = (features - own_mean) / (own_std + eps)
    return target_std * normalized + target_mean
