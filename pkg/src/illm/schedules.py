"""Learning-rate and rate-targeting schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DomainError

#: Named rate-target presets: target bpp -> (lambda_a, lambda_b).
RATE_TARGET_PRESETS = {
    "bpp0.00875": (0.00875, 2.0**5, 2.0**-4),
    "bpp0.0175": (0.0175, 2.0**4, 2.0**-4),
    "bpp0.035": (0.035, 2.0**3, 2.0**-4),
    "bpp0.07": (0.07, 2.0**2, 2.0**-4),
    "bpp0.14": (0.14, 2.0**1, 2.0**-4),
    "bpp0.30": (0.30, 2.0**0, 2.0**-4),
    "bpp0.45": (0.45, 2.0**-1, 2.0**-4),
    "bpp0.9": (0.9, 2.0**-2, 2.0**-4),
}


@dataclass
class RateTargetSchedule:
    """Two-sided rate targeting: a strong penalty when the empirical rate
    is above the (temporarily boosted) target, a loose one below it."""

    target_bpp: float
    lambda_a: float
    lambda_b: float
    boost_steps: int = 50_000
    boost_factor: float = 1.429
    lambda_a_early_scale: float = 0.5

    def __post_init__(self):
        if not self.target_bpp > 0:
            raise DomainError("target_bpp must be positive")
        if not self.lambda_a > self.lambda_b > 0:
            raise DomainError("need lambda_a > lambda_b > 0")

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "RateTargetSchedule":
        if name not in RATE_TARGET_PRESETS:
            raise DomainError(
                f"unknown rate preset {name!r}; choose from {sorted(RATE_TARGET_PRESETS)}"
            )
        target, la, lb = RATE_TARGET_PRESETS[name]
        return cls(target, la, lb, **overrides)


def rate_lambda(step: int, empirical_bpp: float, sched: RateTargetSchedule):
    """Rate-penalty multiplier for this step.

    For the first ``boost_steps`` steps the target is boosted by
    ``boost_factor`` and the strong penalty is scaled down by
    ``lambda_a_early_scale``.  Returns ``(penalty, effective_target)``
    where penalty is the (possibly scaled) lambda_a when the empirical
    rate exceeds the effective target and lambda_b otherwise.
    """
    if empirical_bpp < 0:
        raise DomainError("empirical_bpp must be nonnegative")
    early = step < sched.boost_steps
    effective_target = sched.target_bpp * (sched.boost_factor if early else 1.0)
    lam_a = sched.lambda_a * (sched.lambda_a_early_scale if early else 1.0)
    penalty = lam_a if empirical_bpp > effective_target else sched.lambda_b
    return penalty, effective_target


@dataclass
class StagePlan:
    """One training stage: step budget, warmup, optimizer settings."""

    stage: str  # pretrain | finetune | labeler
    total_steps: int = 20_000
    warmup_steps: int = 10_000
    peak_lr: float = 3e-4
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 5e-5
    disc_lr: float = 4e-4  # finetune only

    def __post_init__(self):
        if self.stage not in ("pretrain", "finetune", "labeler"):
            raise DomainError(f"unknown stage {self.stage!r}")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise DomainError("need 0 <= warmup_steps < total_steps")


def finetune_plan(total_steps: int = 20_000, **overrides) -> StagePlan:
    """Decoder fine-tuning defaults: fixed LRs, lowered betas."""
    kw = dict(
        stage="finetune",
        total_steps=total_steps,
        warmup_steps=0,
        peak_lr=1e-4,
        disc_lr=4e-4,
        betas=(0.5, 0.9),
    )
    kw.update(overrides)
    return StagePlan(**kw)


def lr_at_step(step: int, plan: StagePlan) -> float:
    """Linear warmup to the peak, then cosine decay to zero."""
    if not 0 <= step <= plan.total_steps:
        raise DomainError(f"step {step} outside [0, {plan.total_steps}]")
    if plan.warmup_steps and step < plan.warmup_steps:
        return plan.peak_lr * step / plan.warmup_steps
    if plan.stage == "finetune":
        return plan.peak_lr  # fine-tuning runs at a fixed rate
    progress = (step - plan.warmup_steps) / (plan.total_steps - plan.warmup_steps)
    return plan.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def freeze_plan(stage: str) -> dict[str, bool]:
    """Trainable mask per codec parameter group."""
    if stage == "pretrain":
        return {"encoder": True, "entropy": True, "decoder": True}
    if stage == "finetune":
        return {"encoder": False, "entropy": False, "decoder": True}
    if stage == "labeler":
        return {"encoder": False, "entropy": False, "decoder": False}
    raise DomainError(f"unknown stage {stage!r}")
