"""Group-relative advantage estimation and the dynamic-sampling filter.

Each trajectory's scalar advantage is its reward standardized against the
group: A_i = (r_i - mean(r)) / std(r), with the population std (divide by
G). The population choice puts the two-sample case (1, 0) at exactly
(+1, -1). No epsilon is folded into the std: a zero-variance group either
gets all-zero advantages or is filtered out, decided explicitly by the
caller.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .env import RolloutGroup

DEGENERATE_STD = 1e-8

DegeneratePolicy = Literal["zero", "filter"]


@dataclass(eq=False)
class AdvantageBatch:
    """Per-trajectory advantages for one group, plus the group statistics."""

    advantages: np.ndarray
    mean: float
    std: float
    degenerate: bool


def advantages_from_rewards(rewards: np.ndarray,
                            degenerate_policy: DegeneratePolicy = "zero",
                            ) -> AdvantageBatch | None:
    """Standardize rewards within a group; None means "filtered out"."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size < 2:
        raise ValueError(f"group must have >= 2 rewards, got {rewards.size}")
    if degenerate_policy not in ("zero", "filter"):
        raise ValueError(f"unknown degenerate_policy {degenerate_policy!r}")
    mean = float(rewards.mean())
    std = float(rewards.std())  # population std
    if std < DEGENERATE_STD:
        if degenerate_policy == "filter":
            return None
        return AdvantageBatch(np.zeros_like(rewards), mean, std, degenerate=True)
    return AdvantageBatch((rewards - mean) / std, mean, std, degenerate=False)


def group_advantages(group: RolloutGroup,
                     degenerate_policy: DegeneratePolicy = "zero",
                     ) -> AdvantageBatch | None:
    """Group-relative advantages for a rollout group.

    The scalar advantage of trajectory i is broadcast to all its tokens
    downstream (the normalization is response-level).
    """
    return advantages_from_rewards(group.rewards, degenerate_policy)


def dynamic_sampling_filter(groups: list[RolloutGroup]) -> list[RolloutGroup]:
    """Drop groups whose responses all share identical correctness.

    Such groups carry zero normalized advantage and therefore no signal.
    Order of the retained groups is preserved. An empty result is the
    caller's cue to resample.
    """
    retained = []
    for group in groups:
        rewards = group.rewards
        if rewards.max() != rewards.min():
            retained.append(group)
    return retained
