"""Training losses and their uncertainty-weighted aggregation.

Each latent-weight loss is an element-mean MSE against its binary pseudo
ground truth; the generation loss is the sequence-summed negative log
likelihood. The total uses homoscedastic task weighting with trainable
log-variances s_i = ln(delta_i^2), so every task weight 1/(2 delta_i^2) stays
positive by construction and the regulariser ln(delta_1..delta_4) becomes
sum(s_i) / 2.
"""

from __future__ import annotations

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    add,
    exp,
    log_softmax_lastdim,
    mul,
    scale,
    sub,
    sum_all,
    take_per_row,
)


def mse(pred: Tensor, target) -> Tensor:
    """Mean over elements of the squared difference."""
    t = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=np.float64))
    if pred.shape != t.shape:
        raise ShapeError(f"mse: shapes {pred.shape} and {t.shape} differ")
    if pred.size < 1:
        raise ShapeError("mse needs at least one element")
    diff = sub(pred, t)
    return scale(sum_all(mul(diff, diff)), 1.0 / pred.size)


def nll(logits: Tensor, targets: list[int]) -> Tensor:
    """Sequence-summed negative log likelihood, computed via log-sum-exp."""
    if logits.data.ndim != 2:
        raise ShapeError(f"nll needs T x V logits, got {logits.shape}")
    t, v = logits.shape
    if len(targets) != t:
        raise ShapeError(f"{len(targets)} targets for {t} logit rows")
    if any(not 0 <= y < v for y in targets):
        raise IndexError(f"target id outside [0, {v})")
    picked = take_per_row(log_softmax_lastdim(logits), targets)
    return scale(sum_all(picked), -1.0)


class AwlParams:
    """Trainable log-variances, one per task, initialised to zero."""

    def __init__(self):
        self.s = [Tensor(np.zeros(()), requires_grad=True) for _ in range(4)]

    def named(self) -> dict[str, Tensor]:
        return {f"awl.s{i + 1}": s for i, s in enumerate(self.s)}

    def values(self) -> list[float]:
        return [s.item() for s in self.s]


def awl(
    l_clwr: Tensor,
    l_clwk: Tensor,
    l_klw: Tensor,
    l_nll: Tensor,
    params: AwlParams,
    use_loss_clwr: bool = True,
    use_loss_clwk: bool = True,
    use_loss_klw: bool = True,
) -> Tensor:
    """Sum of 1/(2 exp(s_i)) * L_i + s_i / 2 over the enabled tasks.

    A disabled flag drops both the weighted loss term and its s_i
    regulariser, so the corresponding s_i receives no gradient at all. The
    generation loss is always enabled.
    """
    terms = []
    enabled = [
        (l_clwr, params.s[0], use_loss_clwr),
        (l_clwk, params.s[1], use_loss_clwk),
        (l_klw, params.s[2], use_loss_klw),
        (l_nll, params.s[3], True),
    ]
    for loss, s, flag in enabled:
        if not flag:
            continue
        weighted = scale(mul(exp(scale(s, -1.0)), loss), 0.5)
        terms.append(add(weighted, scale(s, 0.5)))
    total = terms[0]
    for term in terms[1:]:
        total = add(total, term)
    return total
