"""Training objectives: per-pixel cross entropy on both forward paths, a
prediction-alignment KL term, and the masked texture feature loss.

All losses reduce to scalars by averaging over pixels then over the batch.
Probabilities are clamped at 1e-12 before any log.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

_LOG_FLOOR = math.log(1e-12)


def cross_entropy_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean over pixels and batch of -log P(true class).

    logits [B, K, H, W], labels [B, H, W] with integer class ids.
    """
    if labels.dtype not in (torch.int64, torch.int32):
        raise ValueError("labels must be integer class ids")
    if labels.max() >= logits.shape[1] or labels.min() < 0:
        raise ValueError("label ids out of range for the class dimension")
    logp = F.log_softmax(logits, dim=1).clamp_min(_LOG_FLOOR)
    picked = logp.gather(1, labels.long().unsqueeze(1)).squeeze(1)
    return -picked.mean()


def kl_alignment_loss(clean_logits: torch.Tensor, aug_logits: torch.Tensor) -> torch.Tensor:
    """KL(P_clean || P_aug), averaged over pixels and batch.

    The clean-path distribution is detached: alignment pulls the augmented
    prediction toward the clean one, not the reverse. Non-negative.
    """
    if clean_logits.shape != aug_logits.shape:
        raise ValueError("logit shapes must match")
    logp_clean = F.log_softmax(clean_logits.detach(), dim=1).clamp_min(_LOG_FLOOR)
    logp_aug = F.log_softmax(aug_logits, dim=1).clamp_min(_LOG_FLOOR)
    p_clean = logp_clean.exp()
    kl = (p_clean * (logp_clean - logp_aug)).sum(dim=1)
    return kl.mean()


def feature_distance(feat_a: torch.Tensor, feat_b: torch.Tensor) -> torch.Tensor:
    """Per-pixel L2 norm over channels of the feature difference: [B, H, W]."""
    if feat_a.shape != feat_b.shape:
        raise ValueError("feature shapes must match")
    return torch.linalg.vector_norm(feat_a - feat_b, dim=1)


def masked_mean(values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Average of values where mask is set; exactly 0 when the mask is empty."""
    if values.shape != mask.shape:
        raise ValueError("value and mask shapes must match")
    mask = mask.to(values.dtype)
    total = mask.sum()
    if total.item() == 0:
        return values.sum() * 0.0
    return (values * mask).sum() / total


def texture_alignment_loss(pairs, weights) -> torch.Tensor:
    """Weighted sum over layers of the masked mean feature distance.

    pairs: iterable of (student_feat, reference_feat, mask) per layer, feats
    [B, C, H, W] and mask [B, H, W] at matching resolution. The reference
    features come from a frozen encoder and are detached here.
    """
    pairs = list(pairs)
    if len(pairs) != len(weights):
        raise ValueError("one weight per layer pair required")
    total = None
    for (student, reference, mask), weight in zip(pairs, weights):
        dist = feature_distance(student, reference.detach())
        term = weight * masked_mean(dist, mask)
        total = term if total is None else total + term
    if total is None:
        raise ValueError("at least one layer pair required")
    return total


@dataclass
class LossBundle:
    """Per-step losses; total is their unweighted sum."""

    ce: torch.Tensor
    style: torch.Tensor
    align: torch.Tensor
    texture: torch.Tensor

    @property
    def total(self) -> torch.Tensor:
        return self.ce + self.style + self.align + self.texture

    def detach_values(self) -> dict:
        out = {"ce": float(self.ce.detach()), "style": float(self.style.detach()),
               "align": float(self.align.detach()), "texture": float(self.texture.detach())}
        out["total"] = sum(out.values())
        return out
