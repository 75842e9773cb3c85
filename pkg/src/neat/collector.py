"""Exploration-record collection: three cooperating Q-agents (head feature,
operator, tail feature) grow a feature set step by step, rewarded by the
label-free utility of each resulting set. A random-generation variant draws
crosses blindly through the same bookkeeping.

Each record pairs a full token sequence with the utility of the set it
materializes, forming the training corpus for the encoder/decoder stages.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nn
from .expr import (
    MAX_LEN,
    OPCODES,
    OP_SYMBOLS,
    SEGMENT_CAP,
    CrossSequence,
    FeatureCross,
    FeatureMatrix,
    OpCode,
    eval_cross,
    feature_token,
    op_set_hash,
    random_cross,
)
from .tabular import DataTable
from .utility import UtilityConfig, mdcg, redundancy_utility

log = logging.getLogger(__name__)

STATE_WIDTH = 49


@dataclass(frozen=True)
class Transition:
    """One replay entry; next_valid is the valid-action count at next_state."""

    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    next_valid: int
    terminal: bool


@dataclass(frozen=True)
class ExplorationRecord:
    sequence: CrossSequence
    utility: float
    episode: int
    step: int


@dataclass(frozen=True)
class CollectorConfig:
    utility: UtilityConfig = field(default_factory=UtilityConfig)
    utility_kind: str = "mdcg"            # "mdcg" | "redundancy"
    max_features: int | None = None       # None -> 2 * d, resolved per dataset
    gamma: float = 0.9
    replay_capacity: int = 4096
    batch_size: int = 64
    sync_every: int = 50
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_fraction: float = 0.7
    hidden: int = 64
    lr: float = 0.001
    record_crosses_only: bool = False

    def utility_fn(self) -> Callable[[FeatureMatrix], float]:
        if self.utility_kind == "mdcg":
            cfg = self.utility
            return lambda F: mdcg(F, cfg)
        if self.utility_kind == "redundancy":
            return redundancy_utility
        raise ValueError(f"unknown utility kind {self.utility_kind!r}")


def describe_state(F) -> np.ndarray:
    """Fixed-width description of a feature set: 7 per-column statistics,
    each summarized across columns by the same 7 statistics."""
    v = F.values if isinstance(F, FeatureMatrix) else np.asarray(F, dtype=np.float64)
    q = np.percentile(v, [25.0, 50.0, 75.0], axis=0)
    col_stats = np.vstack([
        v.mean(axis=0), v.std(axis=0), v.min(axis=0), q[0], q[1], q[2], v.max(axis=0)])
    out = np.empty(STATE_WIDTH)
    for s in range(7):
        row = col_stats[s]
        rq = np.percentile(row, [25.0, 50.0, 75.0])
        out[s * 7:(s + 1) * 7] = (
            row.mean(), row.std(), row.min(), rq[0], rq[1], rq[2], row.max())
    return out


class ReplayBuffer:
    """Preallocated ring buffer over transition fields."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, STATE_WIDTH))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, STATE_WIDTH))
        self.next_valid = np.zeros(capacity, dtype=np.int64)
        self.terminal = np.zeros(capacity, dtype=bool)
        self.pos = 0
        self.size = 0

    def push(self, t: Transition) -> None:
        i = self.pos
        self.states[i] = t.state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.next_states[i] = t.next_state
        self.next_valid[i] = t.next_valid
        self.terminal[i] = t.terminal
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator):
        idx = rng.choice(self.size, size=batch, replace=False)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.next_valid[idx], self.terminal[idx])


class QAgent:
    """Two-layer Q-network with a synced target copy and replay buffer."""

    def __init__(self, name: str, n_actions: int, cfg: CollectorConfig,
                 rng: np.random.Generator):
        self.name = name
        self.n_actions = n_actions
        self.gamma = cfg.gamma
        self.sync_every = cfg.sync_every
        self.batch_size = cfg.batch_size
        self.d1 = nn.Dense(f"{name}.d1", STATE_WIDTH, cfg.hidden, rng)
        self.d2 = nn.Dense(f"{name}.d2", cfg.hidden, n_actions, rng)
        self.t1 = nn.Dense(f"{name}.t1", STATE_WIDTH, cfg.hidden, rng)
        self.t2 = nn.Dense(f"{name}.t2", cfg.hidden, n_actions, rng)
        self._sync_target()
        self.opt = nn.Adam(self.d1.params() + self.d2.params(), lr=cfg.lr)
        self.buffer = ReplayBuffer(cfg.replay_capacity)
        self.updates = 0

    def _sync_target(self) -> None:
        self.t1.W.value[...] = self.d1.W.value
        self.t1.b.value[...] = self.d1.b.value
        self.t2.W.value[...] = self.d2.W.value
        self.t2.b.value[...] = self.d2.b.value

    def q_values(self, states: np.ndarray, target: bool = False):
        one = states.ndim == 1
        x = states[None, :] if one else states
        l1, l2 = (self.t1, self.t2) if target else (self.d1, self.d2)
        a1, c1 = l1.forward(x)
        h1, r1 = nn.relu(a1)
        q, c2 = l2.forward(h1)
        cache = (c1, r1, c2)
        return (q[0] if one else q), cache

    def select(self, state: np.ndarray, valid: int, epsilon: float,
               rng: np.random.Generator) -> int:
        valid = min(valid, self.n_actions)
        if rng.random() < epsilon:
            return int(rng.integers(valid))
        q, _ = self.q_values(state)
        q = q.copy()
        q[valid:] = -np.inf
        return int(np.argmax(q))


def bellman_update(agent: QAgent, batch, gamma: float | None = None) -> float:
    """One TD step on a batch: y = r + gamma * masked max target-Q (r when
    terminal); returns the mean squared TD error. Syncs the target network
    every ``sync_every`` updates."""
    if isinstance(batch, (list, tuple)) and batch and isinstance(batch[0], Transition):
        states = np.stack([t.state for t in batch])
        actions = np.array([t.action for t in batch], dtype=np.int64)
        rewards = np.array([t.reward for t in batch])
        next_states = np.stack([t.next_state for t in batch])
        next_valid = np.array([t.next_valid for t in batch], dtype=np.int64)
        terminal = np.array([t.terminal for t in batch], dtype=bool)
    else:
        states, actions, rewards, next_states, next_valid, terminal = batch
    gamma = agent.gamma if gamma is None else gamma
    B = states.shape[0]

    tq, _ = agent.q_values(next_states, target=True)
    mask = np.arange(agent.n_actions)[None, :] < next_valid[:, None]
    tq = np.where(mask, tq, -np.inf)
    best_next = tq.max(axis=1)
    y = np.where(terminal, rewards, rewards + gamma * best_next)

    q, cache = agent.q_values(states)
    picked = q[np.arange(B), actions]
    diff = picked - y
    loss = float(np.mean(diff * diff))
    dq = np.zeros_like(q)
    dq[np.arange(B), actions] = 2.0 * diff / B
    c1, r1, c2 = cache
    dh = agent.d2.backward(dq, c2)
    da = nn.relu_backward(dh, r1)
    agent.d1.backward(da, c1)
    agent.opt.step()
    agent.updates += 1
    if agent.updates % agent.sync_every == 0:
        agent._sync_target()
    return loss


@dataclass
class AgentTriplet:
    head: QAgent
    op: QAgent
    tail: QAgent

    @classmethod
    def build(cls, max_features: int, cfg: CollectorConfig,
              rng: np.random.Generator) -> "AgentTriplet":
        seeds = rng.integers(np.iinfo(np.int64).max, size=3)
        return cls(
            head=QAgent("head", max_features, cfg, np.random.default_rng(int(seeds[0]))),
            op=QAgent("op", len(OP_SYMBOLS), cfg, np.random.default_rng(int(seeds[1]))),
            tail=QAgent("tail", max_features, cfg, np.random.default_rng(int(seeds[2]))),
        )


def select_actions(agents: AgentTriplet, state: np.ndarray, n_features: int,
                   epsilon: float, rng: np.random.Generator
                   ) -> tuple[int, OpCode, int | None]:
    """Pick (head feature, operator, tail feature); tail is None for unary ops."""
    head = agents.head.select(state, n_features, epsilon, rng)
    op_idx = agents.op.select(state, len(OP_SYMBOLS), epsilon, rng)
    opcode = OPCODES[OP_SYMBOLS[op_idx]]
    tail = None
    if opcode.arity == 2:
        tail = agents.tail.select(state, n_features, epsilon, rng)
    return head, opcode, tail


class _Workspace:
    """Mutable exploration state: the growing matrix plus column provenance."""

    def __init__(self, table: DataTable):
        self.table = table
        columns, provenance, keys = [], [], set()
        for i in range(table.n_features):
            cross = FeatureCross((feature_token(i),))
            col = eval_cross(cross, table)
            key = col.tobytes()
            if key in keys:
                continue
            keys.add(key)
            columns.append(col)
            provenance.append(cross)
        self.columns = columns
        self.provenance = provenance
        self.keys = keys

    @property
    def n_features(self) -> int:
        return len(self.columns)

    def matrix(self) -> FeatureMatrix:
        return FeatureMatrix(values=np.column_stack(self.columns),
                             provenance=tuple(self.provenance))

    def sequence_tokens(self) -> int:
        body = sum(len(c.tokens) for c in self.provenance)
        return body + len(self.provenance) + 1   # SOS + SEPs + EOS

    def sequence(self) -> CrossSequence:
        return CrossSequence.from_crosses(self.provenance)

    def append(self, cross: FeatureCross, col: np.ndarray) -> None:
        self.keys.add(col.tobytes())
        self.columns.append(col)
        self.provenance.append(cross)


def _compose_cross(workspace: _Workspace, head: int, opcode: OpCode,
                   tail: int | None) -> FeatureCross:
    tokens = list(workspace.provenance[head].tokens)
    if opcode.arity == 2:
        tokens += list(workspace.provenance[tail].tokens)
    tokens.append(opcode.symbol)
    return FeatureCross(tuple(tokens))


def _advance(workspace: _Workspace, cross: FeatureCross, max_features: int,
             utility_fn, current_utility: float) -> tuple[float, bool]:
    """Try to append a cross; no-op (same set, current utility) when the
    column is a bitwise duplicate, the feature cap is hit, or the sequence
    would overflow its token budgets."""
    if workspace.n_features >= max_features:
        return current_utility, False
    if len(cross.tokens) > SEGMENT_CAP:
        return current_utility, False
    if workspace.sequence_tokens() + len(cross.tokens) + 1 > MAX_LEN:
        return current_utility, False
    col = eval_cross(cross, workspace.table)
    if col.tobytes() in workspace.keys:
        return current_utility, False
    workspace.append(cross, col)
    return utility_fn(workspace.matrix()), True


def collector_step(F: FeatureMatrix, actions, X: DataTable, cfg: CollectorConfig,
                   current_utility: float | None = None, episode: int = 0,
                   step: int = 0) -> tuple[FeatureMatrix, float, ExplorationRecord]:
    """Apply one (head, op, tail) action to a materialized set.

    Standalone entry point used by tests and tooling; episode rollouts keep a
    workspace alive across steps instead of rebuilding it.
    """
    workspace = _Workspace(X)
    workspace.columns = [c.copy() for c in F.values.T]
    workspace.provenance = list(F.provenance)
    workspace.keys = {c.tobytes() for c in workspace.columns}
    utility_fn = cfg.utility_fn()
    if current_utility is None:
        current_utility = utility_fn(F)
    head, opcode, tail = actions
    if isinstance(opcode, str):
        opcode = OPCODES[opcode]
    max_features = cfg.max_features or 2 * X.n_features
    cross = _compose_cross(workspace, head, opcode, tail)
    reward, _ = _advance(workspace, cross, max_features, utility_fn, current_utility)
    record = _make_record(workspace, cfg, reward, episode, step)
    return workspace.matrix(), reward, record


def _make_record(workspace: _Workspace, cfg: CollectorConfig, reward: float,
                 episode: int, step: int) -> ExplorationRecord | None:
    if not cfg.record_crosses_only:
        return ExplorationRecord(workspace.sequence(), reward, episode, step)
    crosses = [c for c in workspace.provenance if len(c.tokens) > 1]
    if not crosses:
        return None
    values = np.column_stack(
        [col for col, c in zip(workspace.columns, workspace.provenance)
         if len(c.tokens) > 1])
    utility = cfg.utility_fn()(FeatureMatrix(values, tuple(crosses)))
    return ExplorationRecord(CrossSequence.from_crosses(crosses), utility, episode, step)


def _epsilon(episode: int, episodes: int, cfg: CollectorConfig) -> float:
    span = cfg.epsilon_fraction * episodes
    frac = 1.0 if span <= 0 else min(1.0, episode / span)
    return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac


def collect(X: DataTable, episodes: int, steps: int,
            cfg: CollectorConfig | None = None,
            rng: np.random.Generator | None = None) -> list[ExplorationRecord]:
    """Q-learning exploration: one record per step, agents shared across
    episodes, epsilon decaying linearly over the first 70% of episodes."""
    cfg = cfg or CollectorConfig()
    rng = np.random.default_rng(0) if rng is None else rng
    max_features = cfg.max_features or 2 * X.n_features
    agents = AgentTriplet.build(max_features, cfg, rng)
    utility_fn = cfg.utility_fn()
    records: list[ExplorationRecord] = []

    for episode in range(episodes):
        epsilon = _epsilon(episode, episodes, cfg)
        workspace = _Workspace(X)
        utility = utility_fn(workspace.matrix())
        state = describe_state(workspace.matrix())
        for step in range(steps):
            m_before = workspace.n_features
            head, opcode, tail = select_actions(agents, state, m_before, epsilon, rng)
            cross = _compose_cross(workspace, head, opcode, tail)
            utility, _ = _advance(workspace, cross, max_features, utility_fn, utility)
            record = _make_record(workspace, cfg, utility, episode, step)
            if record is not None:
                records.append(record)
            next_state = describe_state(workspace.matrix())
            terminal = step == steps - 1
            m_after = workspace.n_features
            agents.head.buffer.push(Transition(
                state, head, utility, next_state, m_after, terminal))
            agents.op.buffer.push(Transition(
                state, OP_SYMBOLS.index(opcode.symbol), utility, next_state,
                len(OP_SYMBOLS), terminal))
            if tail is not None:
                agents.tail.buffer.push(Transition(
                    state, tail, utility, next_state, m_after, terminal))
            for agent in (agents.head, agents.op, agents.tail):
                if agent.buffer.size >= agent.batch_size:
                    bellman_update(agent, agent.buffer.sample(agent.batch_size, rng))
            state = next_state
        if (episode + 1) % 32 == 0 or episode == episodes - 1:
            log.info("stage=collect episode=%d epsilon=%.3f utility=%.6f",
                     episode, epsilon, utility)
    return records


def collect_random(X: DataTable, N: int, steps: int,
                   rng: np.random.Generator | None = None,
                   cfg: CollectorConfig | None = None,
                   depth_limit: int = 3) -> list[ExplorationRecord]:
    """Blind variant: crosses drawn by random_cross, same record format."""
    cfg = cfg or CollectorConfig()
    rng = np.random.default_rng(0) if rng is None else rng
    max_features = cfg.max_features or 2 * X.n_features
    utility_fn = cfg.utility_fn()
    records: list[ExplorationRecord] = []
    workspace, utility = None, 0.0
    for i in range(N):
        episode, step = divmod(i, steps)
        if step == 0:
            workspace = _Workspace(X)
            utility = utility_fn(workspace.matrix())
        cross = random_cross(X.n_features, depth_limit, rng)
        utility, _ = _advance(workspace, cross, max_features, utility_fn, utility)
        record = _make_record(workspace, cfg, utility, episode, step)
        if record is not None:
            records.append(record)
    return records


# --- record file round-trip ---

def write_records(path: str | Path, records: Sequence[ExplorationRecord],
                  dataset_id: str, seed: int, episodes: int, steps: int) -> None:
    """Line-delimited record file: a key=value header, then
    ``<utility repr>\\t<serialized sequence>`` per record. Byte-deterministic
    for a given record list."""
    lines = [f"dataset_id={dataset_id}\topset={op_set_hash()}\tseed={seed}"
             f"\tepisodes={episodes}\tsteps={steps}"]
    for rec in records:
        lines.append(f"{rec.utility!r}\t{rec.sequence.text()}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_records(path: str | Path) -> tuple[list[ExplorationRecord], dict[str, str]]:
    lines = Path(path).read_text().splitlines()
    header = dict(kv.split("=", 1) for kv in lines[0].split("\t"))
    steps = int(header.get("steps", 1))
    records = []
    for i, line in enumerate(lines[1:]):
        utility, text = line.split("\t", 1)
        episode, step = divmod(i, steps)
        records.append(ExplorationRecord(
            CrossSequence.from_text(text), float(utility), episode, step))
    return records, header
