"""Training objectives: pairwise contrastive loss, attentive feature mixup,
and the uncertainty-weighted decision loss.

Contrastive convention. For a batch of N samples, each contributing two
strong-view embeddings, the per-pair loss is

    -log[ exp(D(u_i2, u_i3)/tau) / sum_{j != i} sum_{t_i, t_j in {2,3}}
                                   exp(D(u_{i,t_i}, u_{j,t_j})/tau) ]

with D = cosine similarity. Note the denominator ranges over the four
view pairings against every OTHER sample only; it does NOT contain the
positive pair. Consequently pair losses can be negative, and the loss is
symmetric in which view anchors the pair. This differs from the common
NT-Xent formulation; pass ``include_positive_in_denominator=True`` to add
the positive term for comparison runs.

Embedding layout everywhere: row 2i is sample i's first strong view, row
2i+1 its second, so a batch of N samples is a (2N, p) matrix.
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from .errors import ValidationError

_NORM_FLOOR = 1e-12


def cosine_similarity(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Cosine of the angle between two nonzero vectors."""
    if u.shape != v.shape or u.ndim != 1:
        raise ValidationError(f"expected equal-length vectors, got {u.shape} and {v.shape}")
    nu, nv = torch.linalg.vector_norm(u), torch.linalg.vector_norm(v)
    if nu.detach().item() < _NORM_FLOOR or nv.detach().item() < _NORM_FLOOR:
        raise ValidationError("zero-norm vector in cosine similarity (embedding bug?)")
    return (u @ v) / (nu * nv)


def _normalized(embeddings: torch.Tensor) -> torch.Tensor:
    if embeddings.ndim != 2:
        raise ValidationError(f"embeddings must be (2N, p), got shape {tuple(embeddings.shape)}")
    rows = embeddings.shape[0]
    if rows % 2 != 0 or rows < 4:
        raise ValidationError(
            f"need an even row count covering N >= 2 samples, got {rows} rows"
        )
    norms = torch.linalg.vector_norm(embeddings, dim=1)
    if bool((norms < _NORM_FLOOR).any()):
        raise ValidationError("zero-norm embedding row (embedding bug?)")
    return embeddings / norms[:, None]


def _exp_similarities(embeddings: torch.Tensor, temperature: float) -> torch.Tensor:
    if temperature <= 0:
        raise ValidationError(f"temperature must be positive, got {temperature}")
    z = _normalized(embeddings)
    sim = torch.clamp(z @ z.T, -1.0, 1.0)
    return torch.exp(sim / temperature)


def contrastive_pair_loss(embeddings: torch.Tensor, sample_index: int,
                          anchor_view: int = 2, temperature: float = 0.5,
                          include_positive_in_denominator: bool = False) -> torch.Tensor:
    """Loss of one sample's positive pair against all other-sample pairings.

    ``anchor_view`` (2 or 3) is accepted for symmetry with the two-term sum
    in the batch loss, but the value is anchor-independent: the numerator's
    similarity is symmetric and the denominator sums over both views.
    """
    if anchor_view not in (2, 3):
        raise ValidationError(f"anchor_view must be 2 or 3, got {anchor_view}")
    e = _exp_similarities(embeddings, temperature)
    n = e.shape[0] // 2
    if not 0 <= sample_index < n:
        raise ValidationError(f"sample_index {sample_index} outside [0, {n})")
    i = sample_index
    rows = e[2 * i:2 * i + 2]
    denominator = rows.sum() - rows[:, 2 * i:2 * i + 2].sum()
    positive = e[2 * i, 2 * i + 1]
    if include_positive_in_denominator:
        denominator = denominator + positive
    return -torch.log(positive / denominator)


def contrastive_loss(embeddings: torch.Tensor, temperature: float = 0.5,
                     reduction: str = "mean",
                     include_positive_in_denominator: bool = False) -> torch.Tensor:
    """Batch contrastive loss, vectorized over all samples.

    The raw definition is the sum over samples of both anchor orderings
    (each pair therefore counts twice). ``reduction="sum"`` returns that
    value; ``"mean"`` divides by 2N so the optimizer sees a scale that is
    stable across batch sizes.
    """
    if reduction not in ("mean", "sum"):
        raise ValidationError(f"reduction must be 'mean' or 'sum', got {reduction!r}")
    e = _exp_similarities(embeddings, temperature)
    two_n = e.shape[0]
    n = two_n // 2
    # Per sample: total mass of its two rows minus its own 2x2 block.
    row_sums = e.sum(dim=1).view(n, 2).sum(dim=1)
    blocks = (e.view(n, 2, n, 2).diagonal(dim1=0, dim2=2)  # (2, 2, n)
              .sum(dim=(0, 1)))
    positives = e[torch.arange(0, two_n, 2), torch.arange(1, two_n, 2)]
    denominators = row_sums - blocks
    if include_positive_in_denominator:
        denominators = denominators + positives
    pair_losses = -torch.log(positives / denominators)
    total = 2.0 * pair_losses.sum()
    return total / two_n if reduction == "mean" else total


def mixup_features(features: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Weighted average of a group's feature vectors: sum(w_i v_i) / sum(w_i).

    Accepts one group ``(M, d)`` with weights ``(M,)`` or a batch of groups
    ``(K, M, d)`` with weights ``(K, M)``.
    """
    if features.ndim not in (2, 3) or weights.shape != features.shape[:-1]:
        raise ValidationError(
            f"features {tuple(features.shape)} and weights {tuple(weights.shape)} disagree"
        )
    sums = weights.sum(dim=-1, keepdim=True)
    if bool((sums.detach() < _NORM_FLOOR).any()):
        raise ValidationError("attention weights sum to ~0; cannot normalize the mixup")
    mixed = (weights.unsqueeze(-1) * features).sum(dim=-2)
    return mixed / sums


def mixup_label(labels: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Weighted average of the group's label vectors.

    When every member carries the same label distribution (the intra-class
    case) the shared label is returned exactly, bypassing float round-off;
    the weighted form's gradient w.r.t. the weights is identically zero
    there, so this changes no derivative.
    """
    if labels.ndim not in (2, 3) or weights.shape != labels.shape[:-1]:
        raise ValidationError(
            f"labels {tuple(labels.shape)} and weights {tuple(weights.shape)} disagree"
        )
    first = labels[..., :1, :]
    if bool((labels == first).all()):
        return first.squeeze(-2).clone()
    return mixup_features(labels, weights)


def supervised_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy of softmax(logits) against (possibly soft) targets."""
    if logits.shape != targets.shape or logits.ndim != 2:
        raise ValidationError(
            f"logits {tuple(logits.shape)} and targets {tuple(targets.shape)} "
            "must both be (B, C)"
        )
    t = targets.detach()
    if bool((t < -1e-6).any()) or bool((t.sum(dim=1) - 1.0).abs().max() > 1e-5):
        raise ValidationError("targets must be probability vectors (rows sum to 1)")
    return -(targets * F.log_softmax(logits, dim=1)).sum(dim=1).mean()


def one_hot(labels: torch.Tensor, num_classes: int) -> torch.Tensor:
    return F.one_hot(labels.long(), num_classes).to(torch.get_default_dtype())


def smooth_labels(labels: torch.Tensor, num_classes: int, epsilon: float) -> torch.Tensor:
    """Label-smoothing targets: (1 - eps) one-hot + eps / C."""
    if not 0.0 <= epsilon < 1.0:
        raise ValidationError(f"epsilon must be in [0, 1), got {epsilon}")
    return (1.0 - epsilon) * one_hot(labels, num_classes) + epsilon / num_classes


def decision_loss(mixup_loss, supervised_term, sigma1, sigma2) -> torch.Tensor:
    """Uncertainty-weighted sum: L_m/sigma1 + L_s/sigma2 + log(sigma1*sigma2)."""
    s1 = torch.as_tensor(sigma1)
    s2 = torch.as_tensor(sigma2)
    if float(s1.detach()) <= 0 or float(s2.detach()) <= 0:
        raise ValidationError("decision loss needs strictly positive sigmas")
    return mixup_loss / s1 + supervised_term / s2 + torch.log(s1 * s2)


class UncertaintyWeights(nn.Module):
    """Learnable loss balance (sigma1, sigma2), each kept positive as exp(s).

    The raw parameters start at 0 so both sigmas start at 1.0, and no
    gradient step can push a sigma out of (0, inf).
    """

    def __init__(self):
        super().__init__()
        self.log_sigma1 = nn.Parameter(torch.zeros(()))
        self.log_sigma2 = nn.Parameter(torch.zeros(()))

    @property
    def sigma1(self) -> torch.Tensor:
        return torch.exp(self.log_sigma1)

    @property
    def sigma2(self) -> torch.Tensor:
        return torch.exp(self.log_sigma2)

    def decision_loss(self, mixup_loss, supervised_term) -> torch.Tensor:
        return decision_loss(mixup_loss, supervised_term, self.sigma1, self.sigma2)


def stage_loss(stage: str, contrastive, decision=None,
               coefficient: float = 0.1) -> torch.Tensor:
    """Two-phase total: warm-up uses the contrastive term alone, the main
    phase uses the decision loss with the contrastive term as a regularizer."""
    if coefficient < 0:
        raise ValidationError(f"coefficient must be >= 0, got {coefficient}")
    if stage == "stage1":
        return torch.as_tensor(contrastive)
    if stage == "stage2":
        if decision is None:
            raise ValidationError("stage2 requires the decision loss")
        return decision + coefficient * torch.as_tensor(contrastive)
    raise ValidationError(f"stage must be 'stage1' or 'stage2', got {stage!r}")
