"""Exact tabular softmax policies.

A policy is a (num_states, num_actions) table of 64-bit logits z. Row s
induces the distribution pi(a|s) = exp(z[s,a]) / sum_a' exp(z[s,a']),
computed with max-subtraction for stability. Everything downstream
(entropy, KL, gradients) is exact, which is what makes finite-difference
and closed-form oracles meaningful.

Sign convention: gradients passed to ``apply_gradient`` are gradients of
an objective J to be maximized (ascent), never a negated loss.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_SCHEMA = "tabular-policy/v1"


def _validate_logits(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] < 1 or logits.shape[1] < 1:
        raise ValueError(f"logits must be a 2-D (states, actions) matrix, got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite (no NaN/Inf)")
    return logits


class _SoftmaxTable:
    """Read-side operations shared by the live policy and its snapshots."""

    logits: np.ndarray

    @property
    def num_states(self) -> int:
        return self.logits.shape[0]

    @property
    def num_actions(self) -> int:
        return self.logits.shape[1]

    def _check_state(self, state: int) -> int:
        state = int(state)
        if not 0 <= state < self.num_states:
            raise ValueError(f"state {state} out of range [0, {self.num_states})")
        return state

    def action_probabilities(self, state: int) -> np.ndarray:
        """Softmax over the state's logit row; sums to 1 within 1e-12."""
        row = self.logits[self._check_state(state)]
        shifted = row - row.max()
        e = np.exp(shifted)
        return e / e.sum()

    def log_probabilities(self, state: int) -> np.ndarray:
        """Elementwise log of action_probabilities (so the two agree exactly).

        Probabilities that underflow to 0 map to -inf.
        """
        probs = self.action_probabilities(state)
        with np.errstate(divide="ignore"):
            return np.log(probs)

    def probability_matrix(self) -> np.ndarray:
        """All rows' probabilities as a (num_states, num_actions) matrix."""
        shifted = self.logits - self.logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def exact_entropy(self, state: int) -> float:
        """Shannon entropy -sum pi log pi in nats, with 0*log(0) = 0."""
        probs = self.action_probabilities(state)
        nz = probs > 0.0
        return float(-(probs[nz] * np.log(probs[nz])).sum())

    def sample_action(self, state: int, rng: np.random.Generator) -> tuple[int, float]:
        """Draw an action from the state's softmax row.

        Returns (action, log_probability) where the log-probability equals
        log(action_probabilities(state)[action]) exactly as computed.
        Sampling uses inverse-CDF on a single uniform draw, so a stream
        advances by exactly one draw per call.
        """
        probs = self.action_probabilities(state)
        cdf = np.cumsum(probs)
        action = int(np.searchsorted(cdf, rng.random(), side="right"))
        action = min(action, self.num_actions - 1)
        return action, float(np.log(probs[action]))


@dataclass(frozen=True, eq=False)
class PolicySnapshot(_SoftmaxTable):
    """Immutable copy of a policy's logits, captured at rollout time.

    Serves as the reference ("old") policy for every importance ratio in
    the batches it produced; later updates to the live policy cannot
    affect it.
    """

    logits: np.ndarray

    def __post_init__(self):
        logits = _validate_logits(self.logits).copy()
        logits.setflags(write=False)
        object.__setattr__(self, "logits", logits)


@dataclass(eq=False)
class TabularPolicy(_SoftmaxTable):
    """Mutable tabular softmax policy over (state, action) logits.

    Read operations (probabilities, entropy, sampling with a caller-owned
    stream) are safe to run concurrently; apply_gradient assumes exclusive
    access (single writer, no concurrent reads during the write).
    """

    logits: np.ndarray = field()

    def __post_init__(self):
        self.logits = _validate_logits(self.logits).copy()

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "TabularPolicy":
        return cls(np.zeros((num_states, num_actions)))

    @classmethod
    def random(cls, num_states: int, num_actions: int, scale: float,
               rng: np.random.Generator) -> "TabularPolicy":
        return cls(rng.normal(0.0, scale, size=(num_states, num_actions)))

    def copy(self) -> "TabularPolicy":
        return TabularPolicy(self.logits)

    def snapshot(self) -> PolicySnapshot:
        return PolicySnapshot(self.logits)

    def apply_gradient(self, gradient: np.ndarray, learning_rate: float) -> "TabularPolicy":
        """Ascent step: logits <- logits + learning_rate * gradient.

        Rejects non-finite gradients (and rejects updates that would push
        any logit out of the finite range) leaving the logits untouched.
        """
        gradient = np.asarray(gradient, dtype=np.float64)
        if gradient.shape != self.logits.shape:
            raise ValueError(
                f"gradient shape {gradient.shape} does not match logits shape {self.logits.shape}")
        if not learning_rate > 0.0:
            raise ValueError(f"learning_rate must be > 0, got {learning_rate}")
        if not np.all(np.isfinite(gradient)):
            bad = np.argwhere(~np.isfinite(gradient))[0]
            raise ValueError(
                f"update rejected: non-finite gradient entry at (state={bad[0]}, action={bad[1]})")
        updated = self.logits + learning_rate * gradient
        if not np.all(np.isfinite(updated)):
            bad = np.argwhere(~np.isfinite(updated))[0]
            raise ValueError(
                f"update rejected: logit overflow at (state={bad[0]}, action={bad[1]})")
        self.logits = updated
        return self

    def save(self, path: str | Path, rng_lineage: dict | None = None) -> None:
        """Write a self-describing JSON checkpoint.

        Logits are stored row-major as 17-significant-digit decimal
        strings, which round-trip 64-bit floats exactly.
        """
        doc = {
            "schema": CHECKPOINT_SCHEMA,
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "logits": [format(x, ".17g") for x in self.logits.ravel(order="C")],
            "rng_lineage": rng_lineage or {},
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path: str | Path) -> tuple["TabularPolicy", dict]:
        doc = json.loads(Path(path).read_text())
        if doc.get("schema") != CHECKPOINT_SCHEMA:
            raise ValueError(f"not a policy checkpoint: schema={doc.get('schema')!r}")
        shape = (doc["num_states"], doc["num_actions"])
        flat = np.array([float(x) for x in doc["logits"]], dtype=np.float64)
        if flat.size != shape[0] * shape[1]:
            raise ValueError("checkpoint logit count does not match dimensions")
        return cls(flat.reshape(shape)), doc.get("rng_lineage", {})


def exact_kl(p: _SoftmaxTable, q: _SoftmaxTable, state: int) -> float:
    """KL(p || q) at a state, in nats.

    Returns +inf (a loggable sentinel, not an exception) when q assigns
    zero probability to an action p supports: monitors must be able to
    record a transient divergence without aborting.
    """
    if (p.num_states, p.num_actions) != (q.num_states, q.num_actions):
        raise ValueError(
            f"policy shapes differ: {(p.num_states, p.num_actions)} vs {(q.num_states, q.num_actions)}")
    pp = p.action_probabilities(state)
    qp = q.action_probabilities(state)
    support = pp > 0.0
    if np.any(qp[support] == 0.0):
        return float("inf")
    return float((pp[support] * (np.log(pp[support]) - np.log(qp[support]))).sum())


def entropy_logit_gradient(policy: _SoftmaxTable, state: int) -> np.ndarray:
    """Exact dH/dz for one state's logit row.

    For the tabular softmax, dH/dz_a = -pi_a * (log pi_a - E_pi[log pi]).
    Zero-probability actions contribute zero.
    """
    probs = policy.action_probabilities(state)
    with np.errstate(divide="ignore"):
        logp = np.log(probs)
    logp = np.where(probs > 0.0, logp, 0.0)
    mean_logp = float((probs * logp).sum())
    return -probs * (logp - mean_logp)
