"""ModSum: a synthetic verifiable-reward sequence environment.

An episode emits T tokens from a vocabulary of size V; the binary reward
is 1 iff the sum of token ids is congruent to the task's target residue
mod M. The state is the exact pair (position, running residue), encoded
as state_id = position * M + residue, plus one terminal state, so a
tabular policy over T*M + 1 states sees the full environment state and
every policy-side quantity stays exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .policy import PolicySnapshot, TabularPolicy, _SoftmaxTable


@dataclass(frozen=True)
class EnvConfig:
    """Environment dimensions plus the residues tasks may target."""

    vocab_size: int = 8
    seq_len: int = 6
    modulus: int = 5
    # None -> targets drawn from all residues [0, M)
    train_targets: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.seq_len < 1:
            raise ValueError(f"seq_len must be >= 1, got {self.seq_len}")
        if self.modulus < 2:
            raise ValueError(
                f"modulus must be >= 2, got {self.modulus} (reward would be constant)")
        if self.train_targets is not None:
            targets = tuple(int(t) for t in self.train_targets)
            if not targets:
                raise ValueError("train_targets must be non-empty when given")
            if any(not 0 <= t < self.modulus for t in targets):
                raise ValueError(f"train_targets {targets} outside [0, {self.modulus})")
            if len(set(targets)) != len(targets):
                raise ValueError(f"train_targets {targets} contain duplicates")
            object.__setattr__(self, "train_targets", targets)

    @property
    def num_states(self) -> int:
        return self.seq_len * self.modulus + 1

    def allowed_targets(self) -> tuple[int, ...]:
        if self.train_targets is None:
            return tuple(range(self.modulus))
        return self.train_targets


@dataclass(frozen=True)
class ModSumTask:
    vocab_size: int
    seq_len: int
    modulus: int
    target: int

    def __post_init__(self):
        if self.vocab_size < 2 or self.seq_len < 1 or self.modulus < 2:
            raise ValueError(
                f"invalid task dimensions V={self.vocab_size} T={self.seq_len} M={self.modulus}")
        if not 0 <= self.target < self.modulus:
            raise ValueError(f"target {self.target} outside [0, {self.modulus})")

    @property
    def num_states(self) -> int:
        return self.seq_len * self.modulus + 1

    @property
    def terminal_state(self) -> int:
        return self.seq_len * self.modulus

    def state_id(self, position: int, residue: int) -> int:
        if not 0 <= position < self.seq_len:
            raise ValueError(f"position {position} outside [0, {self.seq_len})")
        if not 0 <= residue < self.modulus:
            raise ValueError(f"residue {residue} outside [0, {self.modulus})")
        return position * self.modulus + residue

    def to_dict(self) -> dict:
        return {"vocab_size": self.vocab_size, "seq_len": self.seq_len,
                "modulus": self.modulus, "target": self.target}


@dataclass(eq=False)
class Trajectory:
    """One complete episode with the snapshot log-probs it was drawn under."""

    task: ModSumTask
    actions: np.ndarray      # int, length T
    old_logprobs: np.ndarray  # float, length T
    states: np.ndarray       # int, length T: state where each action was taken
    reward: int

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.old_logprobs = np.asarray(self.old_logprobs, dtype=np.float64)
        self.states = np.asarray(self.states, dtype=np.int64)
        if not (len(self.actions) == len(self.old_logprobs) == len(self.states)):
            raise ValueError("actions, old_logprobs and states must have equal length")
        if self.reward not in (0, 1):
            raise ValueError(f"reward must be 0 or 1, got {self.reward}")

    def __len__(self) -> int:
        return len(self.actions)


@dataclass(eq=False)
class RolloutGroup:
    """G trajectories for one task, all sampled from the same snapshot."""

    task: ModSumTask
    trajectories: list[Trajectory]
    snapshot: PolicySnapshot

    def __post_init__(self):
        if len(self.trajectories) < 2:
            raise ValueError(
                f"group size must be >= 2 (got {len(self.trajectories)}); "
                "group-relative normalization is undefined for a single sample")
        if any(t.task != self.task for t in self.trajectories):
            raise ValueError("all trajectories in a group must share the group's task")

    @property
    def rewards(self) -> np.ndarray:
        return np.array([t.reward for t in self.trajectories], dtype=np.float64)


def sample_task(config: EnvConfig, rng: np.random.Generator) -> ModSumTask:
    """Draw a task with target uniform over the config's allowed residues."""
    targets = config.allowed_targets()
    target = int(targets[rng.integers(len(targets))])
    return ModSumTask(config.vocab_size, config.seq_len, config.modulus, target)


def verify_reward(trajectory: Trajectory) -> int:
    """Recompute the modular-sum predicate from scratch. Pure function."""
    task = trajectory.task
    if len(trajectory.actions) != task.seq_len:
        raise ValueError(
            f"incomplete trajectory: {len(trajectory.actions)} of {task.seq_len} actions")
    return int(int(trajectory.actions.sum()) % task.modulus == task.target)


def rollout_trajectory(policy: _SoftmaxTable, task: ModSumTask,
                       rng: np.random.Generator) -> Trajectory:
    """Sample one episode from the given (usually snapshot) policy."""
    if policy.num_states != task.num_states or policy.num_actions != task.vocab_size:
        raise ValueError(
            f"policy table ({policy.num_states} states, {policy.num_actions} actions) does not "
            f"match task state space ({task.num_states} states, {task.vocab_size} actions)")
    actions = np.empty(task.seq_len, dtype=np.int64)
    logprobs = np.empty(task.seq_len, dtype=np.float64)
    states = np.empty(task.seq_len, dtype=np.int64)
    residue = 0
    for t in range(task.seq_len):
        state = task.state_id(t, residue)
        action, lp = policy.sample_action(state, rng)
        actions[t], logprobs[t], states[t] = action, lp, state
        residue = (residue + action) % task.modulus
    traj = Trajectory(task, actions, logprobs, states, reward=0)
    traj.reward = verify_reward(traj)
    return traj


def rollout_group(policy: TabularPolicy, task: ModSumTask, group_size: int,
                  rng: np.random.Generator) -> RolloutGroup:
    """Snapshot the policy, then sample a group of episodes from the snapshot."""
    if group_size < 2:
        raise ValueError(f"group_size must be >= 2, got {group_size}")
    snapshot = policy.snapshot()
    trajectories = [rollout_trajectory(snapshot, task, rng) for _ in range(group_size)]
    return RolloutGroup(task, trajectories, snapshot)


def write_rollout_log(path: str | Path, groups: list[RolloutGroup],
                      append: bool = False) -> None:
    """Dump trajectories as line-delimited JSON for offline analysis.

    One line per trajectory: task fields, group index, actions,
    old_logprobs, reward. Floats round-trip exactly (json uses repr).
    """
    mode = "a" if append else "w"
    with open(path, mode) as fh:
        for gi, group in enumerate(groups):
            for traj in group.trajectories:
                fh.write(json.dumps({
                    **traj.task.to_dict(),
                    "group": gi,
                    "actions": traj.actions.tolist(),
                    "old_logprobs": traj.old_logprobs.tolist(),
                    "reward": traj.reward,
                }) + "\n")


def read_rollout_log(path: str | Path) -> list[dict]:
    """Parse a rollout log back into dicts (tasks reconstructed)."""
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            task = ModSumTask(doc["vocab_size"], doc["seq_len"], doc["modulus"], doc["target"])
            actions = np.array(doc["actions"], dtype=np.int64)
            residues = np.concatenate(([0], np.cumsum(actions) % task.modulus))[:-1]
            states = np.arange(task.seq_len) * task.modulus + residues
            records.append({
                "task": task,
                "group": doc["group"],
                "trajectory": Trajectory(task, actions, np.array(doc["old_logprobs"]),
                                         states, doc["reward"]),
            })
    return records
