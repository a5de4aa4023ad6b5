from __future__ import annotations

from dataclasses import dataclass

from ..model import SegModel


@dataclass(frozen=True)
class ParamReport:
    total: int
    trainable: int

    @property
    def ratio(self) -> float:
        return self.trainable / self.total if self.total else 0.0

    def format(self) -> str:
        return (f"total={self.total} ({self.total / 1e6:.4g}M)\n"
                f"trainable={self.trainable} ({self.trainable / 1e6:.4g}M)\n"
                f"ratio={self.ratio:.4f}")


def apply_freeze_policy(model: SegModel) -> None:
    """Freeze the encoder (blocks, patch and positional embeddings); train adapters and decoder."""
    for _, p in model.group_parameters("encoder"):
        p.requires_grad = False
        p.grad = None
    for group in ("adapters", "decoder"):
        for _, p in model.group_parameters(group):
            p.requires_grad = True


def count_params(model: SegModel) -> ParamReport:
    total = trainable = 0
    for _, p in model.named_parameters():
        total += p.size
        if p.requires_grad:
            trainable += p.size
    return ParamReport(total, trainable)
