"""Entropy-change prediction and the four-quadrant token taxonomy.

The predictor makes the first-order analysis of entropy evolution
executable: for a tabular softmax row updated by the idealized policy
gradient step z <- z + eta * pi * A (advantages centered so
E_{a~pi}[A] = 0), the entropy change is

    dH ~= -eta * Cov_{a~pi}( log pi(a), pi(a) * A(a) )

with error second order in eta. Both sides are computed exactly here: the
covariance from the distribution, the actual dH by applying the update to
a scratch copy, so the approximation quality itself is measurable.

Tokens are classified by advantage sign x probability level into
PA&HP / NA&LP / PA&LP / NA&HP. The high/low probability split has no
canonical threshold; callers typically pass the uniform probability 1/V.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .objectives import ObjectiveSpec
from .policy import _SoftmaxTable, entropy_logit_gradient

CENTERING_TOLERANCE = 1e-9
DEGENERATE_ENTROPY = 1e-6
ERROR_FLOOR = 1e-13
RATIO_BAND = (3.0, 5.0)

# 40 log-spaced ratio bins over [e^-3, e^3] plus an overflow bin at each end
HISTOGRAM_EDGES = np.exp(np.linspace(-3.0, 3.0, 41))


class Quadrant(str, enum.Enum):
    PA_HP = "pa_hp"
    NA_LP = "na_lp"
    PA_LP = "pa_lp"
    NA_HP = "na_hp"
    NEUTRAL = "neutral"


class ClipSide(str, enum.Enum):
    NONE = "none"
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class TokenRecord:
    """One generated token with everything the taxonomy needs."""

    state: int
    action: int
    old_logprob: float
    new_logprob: float
    advantage: float

    @property
    def ratio(self) -> float:
        return math.exp(self.new_logprob - self.old_logprob)

    @property
    def old_prob(self) -> float:
        return math.exp(self.old_logprob)


def classify_token(delta: float, adv: float, prob: float, eps_low: float,
                   eps_high: float, prob_threshold: float) -> tuple[Quadrant, ClipSide]:
    """Quadrant from sign(A) x (prob >= threshold); clip flag from the
    standard branch conditions (ratio beyond a bound with matching
    advantage sign). Zero-advantage tokens are tagged neutral and excluded
    from quadrant fractions downstream.
    """
    if not delta > 0.0:
        raise ValueError(f"importance ratio must be > 0, got {delta}")
    if not 0.0 < prob <= 1.0:
        raise ValueError(f"token probability must be in (0, 1], got {prob}")
    if adv == 0.0:
        return Quadrant.NEUTRAL, ClipSide.NONE
    high = prob >= prob_threshold
    if adv > 0.0:
        quadrant = Quadrant.PA_HP if high else Quadrant.PA_LP
        clip = ClipSide.RIGHT if delta > 1.0 + eps_high else ClipSide.NONE
    else:
        quadrant = Quadrant.NA_HP if high else Quadrant.NA_LP
        clip = ClipSide.LEFT if delta < 1.0 - eps_low else ClipSide.NONE
    return quadrant, clip


def center_advantages(policy: _SoftmaxTable, state: int,
                      advantages: Sequence[float] | np.ndarray) -> np.ndarray:
    """Subtract the on-policy mean so E_{a~pi}[A] = 0."""
    adv = np.asarray(advantages, dtype=np.float64)
    probs = policy.action_probabilities(state)
    if adv.shape != probs.shape:
        raise ValueError(f"need one advantage per action ({probs.size}), got shape {adv.shape}")
    return adv - float(probs @ adv)


def entropy_covariance(policy: _SoftmaxTable, state: int,
                       advantages: Sequence[float] | np.ndarray) -> float:
    """Cov_{a~pi}(log pi(a), pi(a) * A(a)), as E[XY] - E[X]E[Y].

    Zero-probability actions carry zero weight and are excluded.
    """
    probs = policy.action_probabilities(state)
    adv = np.asarray(advantages, dtype=np.float64)
    support = probs > 0.0
    p = probs[support]
    x = np.log(p)
    y = p * adv[support]
    return float((p * x * y).sum() - (p * x).sum() * (p * y).sum())


@dataclass
class EntropyPrediction:
    """Predicted vs actual one-step entropy change at one state."""

    state: int
    eta: float
    covariance: float
    predicted_delta_h: float   # always exactly -eta * covariance
    actual_delta_h: float
    abs_error: float
    # "policy_gradient": the idealized update the derivation covers.
    # "taylor_extrapolation": an arbitrary supplied update, scored by the
    # same first-order machinery outside its derivation's validity domain.
    mode: str

    def to_dict(self) -> dict:
        return {"state": self.state, "eta": self.eta, "covariance": self.covariance,
                "predicted_delta_h": self.predicted_delta_h,
                "actual_delta_h": self.actual_delta_h, "abs_error": self.abs_error,
                "mode": self.mode}


def _entropy_of_logit_row(row: np.ndarray) -> float:
    shifted = row - row.max()
    e = np.exp(shifted)
    p = e / e.sum()
    nz = p > 0.0
    return float(-(p[nz] * np.log(p[nz])).sum())


def predict_entropy_change(policy: _SoftmaxTable, state: int,
                           advantages: Sequence[float] | np.ndarray,
                           eta: float) -> EntropyPrediction:
    """Covariance prediction vs the exact post-update entropy.

    Applies z <- z + eta * pi * A to a scratch copy of the state's row and
    recomputes the entropy exactly. Advantages must arrive centered
    (|E_{a~pi}[A]| < 1e-9); centering is the caller's statement that the
    update really is the policy-gradient step.
    """
    if not eta > 0.0:
        raise ValueError(f"eta must be > 0, got {eta}")
    probs = policy.action_probabilities(state)
    adv = np.asarray(advantages, dtype=np.float64)
    if adv.shape != probs.shape:
        raise ValueError(f"need one advantage per action ({probs.size}), got shape {adv.shape}")
    residual = float(probs @ adv)
    if abs(residual) >= CENTERING_TOLERANCE:
        raise ValueError(
            f"advantages are not baseline-centered: E_pi[A] = {residual:.3e} "
            f"(tolerance {CENTERING_TOLERANCE}); center them first")
    cov = entropy_covariance(policy, state, adv)
    predicted = -eta * cov
    row = policy.logits[int(state)]
    h_before = _entropy_of_logit_row(row)
    h_after = _entropy_of_logit_row(row + eta * probs * adv)
    actual = h_after - h_before
    return EntropyPrediction(int(state), float(eta), cov, predicted, actual,
                             abs(actual - predicted), mode="policy_gradient")


def predict_entropy_change_for_update(policy: _SoftmaxTable, state: int,
                                      update_row: Sequence[float] | np.ndarray,
                                      eta: float = 1.0) -> EntropyPrediction:
    """Score an arbitrary logit update with the same first-order predictor.

    predicted dH = <dH/dz, eta * update_row>. The covariance field holds
    the implied covariance -predicted/eta so the -eta * cov identity still
    reads true, but the mode is labeled an extrapolation: the derivation
    only covers the idealized policy-gradient step.
    """
    if not eta > 0.0:
        raise ValueError(f"eta must be > 0, got {eta}")
    update = np.asarray(update_row, dtype=np.float64)
    row = policy.logits[int(state)]
    if update.shape != row.shape:
        raise ValueError(f"update row shape {update.shape} does not match {row.shape}")
    # implied covariance first, then predicted = -eta * cov, so the identity
    # between the stored fields holds bit-exactly in this mode too
    implied_cov = float(entropy_logit_gradient(policy, state) @ update) / -1.0
    predicted = -eta * implied_cov
    h_before = _entropy_of_logit_row(row)
    h_after = _entropy_of_logit_row(row + eta * update)
    actual = h_after - h_before
    return EntropyPrediction(int(state), float(eta), implied_cov, predicted, actual,
                             abs(actual - predicted), mode="taylor_extrapolation")


@dataclass
class ConvergenceReport:
    """Does |actual - predicted| shrink quadratically as eta halves?"""

    state: int
    etas: list[float]
    errors: list[float]
    ratios: list[float]
    passed: bool
    degenerate: bool
    reason: str

    def to_dict(self) -> dict:
        return {"state": self.state, "etas": self.etas, "errors": self.errors,
                "ratios": self.ratios, "passed": self.passed,
                "degenerate": self.degenerate, "reason": self.reason}


def verify_predictor_convergence(policy: _SoftmaxTable, state: int,
                                 advantages: Sequence[float] | np.ndarray,
                                 eta_sequence: Sequence[float],
                                 ratio_band: tuple[float, float] = RATIO_BAND,
                                 ) -> ConvergenceReport:
    """Check second-order error shrinkage over a halving eta sequence.

    The sequence must be geometric with ratio 1/2 and have >= 4 points.
    Passing requires the final two consecutive error ratios to land in
    ratio_band (default [3, 5], around the ideal 4). Instances whose
    errors sit at the floating-point floor, or whose row entropy is below
    the smooth regime, are tagged degenerate and excluded rather than
    failed: there is nothing to measure there.
    """
    etas = [float(e) for e in eta_sequence]
    if len(etas) < 4:
        raise ValueError(f"need at least 4 eta values, got {len(etas)}")
    for a, b in zip(etas, etas[1:]):
        if not (a > b > 0.0) or abs(a / b - 2.0) > 1e-6:
            raise ValueError(f"eta sequence must halve at each step, got {etas}")

    def degenerate(reason: str) -> ConvergenceReport:
        return ConvergenceReport(int(state), etas, errors, ratios, passed=True,
                                 degenerate=True, reason=reason)

    errors: list[float] = []
    ratios: list[float] = []
    if policy.exact_entropy(state) < DEGENERATE_ENTROPY:
        return degenerate("row entropy below smooth regime")
    errors = [predict_entropy_change(policy, state, advantages, eta).abs_error
              for eta in etas]
    if all(e < ERROR_FLOOR for e in errors):
        return degenerate("errors at floating-point floor")
    relevant = errors[-3:]
    if any(e < ERROR_FLOOR for e in relevant):
        return degenerate("final-pair errors at floating-point floor")
    ratios = [errors[i] / errors[i + 1] for i in range(len(errors) - 1)]
    final_two = ratios[-2:]
    lo, hi = ratio_band
    passed = all(lo <= r <= hi for r in final_two)
    reason = "" if passed else (
        f"final error ratios {final_two} outside [{lo}, {hi}]; "
        f"measured sequence errors={errors} ratios={ratios}")
    return ConvergenceReport(int(state), etas, errors, ratios, passed,
                             degenerate=False, reason=reason)


@dataclass
class QuadrantStats:
    """Batch-level token taxonomy and ratio histogram."""

    counts: dict[str, int]
    fractions: dict[str, float]
    left_clip_fraction: float
    right_clip_fraction: float
    n_tokens: int
    n_neutral: int
    histogram_counts: list[int]       # [underflow, 40 bins, overflow]
    histogram_edges: list[float]

    def to_dict(self) -> dict:
        return {"counts": self.counts, "fractions": self.fractions,
                "left_clip_fraction": self.left_clip_fraction,
                "right_clip_fraction": self.right_clip_fraction,
                "n_tokens": self.n_tokens, "n_neutral": self.n_neutral,
                "histogram_counts": self.histogram_counts,
                "histogram_edges": self.histogram_edges}


def quadrant_stats_arrays(deltas: np.ndarray, advantages: np.ndarray,
                          probs: np.ndarray, eps_low: float, eps_high: float,
                          prob_threshold: float) -> QuadrantStats:
    """Vectorized taxonomy over parallel arrays.

    Quadrant fractions are over tokens with A != 0 (they sum to 1 there);
    clip fractions are over all tokens. The histogram uses the fixed
    log-spaced edges so runs are comparable.
    """
    deltas = np.asarray(deltas, dtype=np.float64)
    advantages = np.asarray(advantages, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    n = len(deltas)
    if n == 0:
        raise ValueError("empty token batch")
    pos = advantages > 0.0
    neg = advantages < 0.0
    high = probs >= prob_threshold
    counts = {
        Quadrant.PA_HP.value: int((pos & high).sum()),
        Quadrant.PA_LP.value: int((pos & ~high).sum()),
        Quadrant.NA_HP.value: int((neg & high).sum()),
        Quadrant.NA_LP.value: int((neg & ~high).sum()),
    }
    n_signed = int(pos.sum() + neg.sum())
    fractions = {k: (c / n_signed if n_signed else 0.0) for k, c in counts.items()}
    left = neg & (deltas < 1.0 - eps_low)
    right = pos & (deltas > 1.0 + eps_high)
    inner = np.histogram(deltas, bins=HISTOGRAM_EDGES)[0]
    hist = [int((deltas < HISTOGRAM_EDGES[0]).sum()), *inner.tolist(),
            int((deltas >= HISTOGRAM_EDGES[-1]).sum())]
    return QuadrantStats(
        counts=counts, fractions=fractions,
        left_clip_fraction=float(left.sum() / n),
        right_clip_fraction=float(right.sum() / n),
        n_tokens=n, n_neutral=int(n - n_signed),
        histogram_counts=hist, histogram_edges=HISTOGRAM_EDGES.tolist())


def batch_quadrant_stats(records: Sequence[TokenRecord], spec: ObjectiveSpec,
                         prob_threshold: float) -> QuadrantStats:
    """Taxonomy of a TokenRecord batch under an objective's clip bounds.

    Probabilities are the rollout-time (old) probabilities: the taxonomy
    describes the distribution the tokens were drawn from.
    """
    eps_low = 1.0 - spec.clip_bounds()[0]
    eps_high = spec.clip_bounds()[1] - 1.0
    deltas = np.array([r.ratio for r in records])
    advs = np.array([r.advantage for r in records])
    probs = np.array([r.old_prob for r in records])
    return quadrant_stats_arrays(deltas, advs, probs, eps_low, eps_high, prob_threshold)
