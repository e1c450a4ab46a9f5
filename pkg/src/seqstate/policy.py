"""Offline treatment-policy learning on frozen latent states.

Pipeline: encode trajectories into transition tuples, behavior-clone the
clinician policy, train a discrete batch-constrained Q-network whose
action choices are restricted to the behavior model's support, and score
policies with weighted importance sampling on held-out trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .cohort import N_ACTIONS, Trajectory
from .encoders import EncoderModel, encode_trajectory
from .optim import adam_init, adam_step, collect_grads

TERMINAL_REWARD = {0: 1.0, 1: -1.0}  # survived / died
EVAL_EPSILON = 0.01                  # greedy smoothing for the WIS target policy
WEIGHT_CLIP = (1e-8, 1e8)
PROB_FLOOR = 1e-12


@dataclass
class TransitionBuffer:
    """Flat (s, a, r, s', done) arrays with seeded uniform sampling."""

    states: np.ndarray       # (N, d_s)
    actions: np.ndarray      # (N,)
    rewards: np.ndarray      # (N,)
    next_states: np.ndarray  # (N, d_s)
    done: np.ndarray         # (N,) bool
    seed: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self._rng = np.random.default_rng(self.seed)

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def d_s(self) -> int:
        return self.states.shape[1]

    def sample(self, size: int) -> tuple[np.ndarray, ...]:
        idx = self._rng.integers(0, len(self), size=size)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.done[idx])


def build_buffer(model: EncoderModel, trajs: list[Trajectory], seed: int = 0,
                 terminal_rewards: dict[int, float] | None = None) -> TransitionBuffer:
    """One transition per step: rewards are zero except at the terminal
    step, which pays the outcome and carries done=True."""
    if not trajs:
        raise ValueError("cannot build a buffer from an empty split")
    rewards_map = terminal_rewards or TERMINAL_REWARD
    states, actions, rewards, next_states, done = [], [], [], [], []
    for traj in trajs:
        lat = encode_trajectory(model, traj).latents
        t_len = lat.shape[0]
        for t in range(t_len):
            terminal = t == t_len - 1
            states.append(lat[t])
            actions.append(traj.actions[t])
            rewards.append(rewards_map[traj.outcome] if terminal else 0.0)
            next_states.append(np.zeros_like(lat[t]) if terminal else lat[t + 1])
            done.append(terminal)
    return TransitionBuffer(
        states=np.array(states),
        actions=np.array(actions, dtype=np.int64),
        rewards=np.array(rewards),
        next_states=np.array(next_states),
        done=np.array(done, dtype=bool),
        seed=seed,
    )


# -- network helpers -------------------------------------------------------------


def _mlp_params(rng: np.random.Generator, sizes: list[int], prefix: str,
                params: nn.Params) -> None:
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
        nn.linear_params(params, rng, f"{prefix}.l{i}", n_in, n_out)


def _mlp_forward(x: Tensor, params: nn.Params, prefix: str, n_layers: int) -> Tensor:
    out = x
    for i in range(1, n_layers + 1):
        out = nn.dense(out, params[f"{prefix}.l{i}.w"], params[f"{prefix}.l{i}.b"])
        if i < n_layers:
            out = ad.relu(out)
    return out


# -- behavior cloning -------------------------------------------------------------


@dataclass
class BCPolicy:
    """Two-layer action classifier over latent states."""

    params: nn.Params
    d_s: int
    hidden: int
    train_accuracy: float = float("nan")
    missing_actions: tuple[int, ...] = ()

    def logits(self, states: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            return _mlp_forward(Tensor(np.atleast_2d(states)), self.params,
                                "bc", 2).data

    def probs(self, states: np.ndarray) -> np.ndarray:
        logits = self.logits(states)
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)


@dataclass
class BCConfig:
    iterations: int = 4000
    lr: float = 1e-3
    batch_size: int = 256
    hidden: int = 64
    seed: int = 0


def behavior_clone(buffer: TransitionBuffer, config: BCConfig | None = None) -> BCPolicy:
    """Cross-entropy imitation of the logged actions."""
    config = config or BCConfig()
    rng = np.random.default_rng(config.seed)
    params = nn.Params()
    _mlp_params(rng, [buffer.d_s, config.hidden, N_ACTIONS], "bc", params)
    present = np.unique(buffer.actions)
    missing = tuple(sorted(set(range(N_ACTIONS)) - set(present.tolist())))
    policy = BCPolicy(params=params, d_s=buffer.d_s, hidden=config.hidden,
                      missing_actions=missing)

    state = adam_init(params, config.lr)
    for _ in range(config.iterations):
        s, a, _, _, _ = buffer.sample(config.batch_size)
        params.zero_grad()
        logits = _mlp_forward(Tensor(s), params, "bc", 2)
        loss = nn.softmax_cross_entropy(logits, a)
        if not np.isfinite(float(loss.data)):
            raise RuntimeError("behavior cloning diverged")
        loss.backward()
        adam_step(state, params, collect_grads(params))

    preds = policy.logits(buffer.states).argmax(axis=1)
    policy.train_accuracy = float((preds == buffer.actions).mean())
    return policy


# -- batch-constrained Q-learning ------------------------------------------------------


def bcq_filter(probs: np.ndarray, tau: float) -> np.ndarray:
    """Candidate actions: behavior probability within factor tau of the max.

    Never empty (the argmax always qualifies). Accepts a single simplex or
    a batch; returns a boolean mask of the same leading shape.
    """
    probs = np.atleast_2d(probs)
    ref = probs.max(axis=1, keepdims=True)
    mask = probs >= tau * ref
    return mask if mask.shape[0] > 1 else mask[0]


@dataclass
class BCQConfig:
    iterations: int = 20_000
    lr: float = 1e-3
    batch_size: int = 128
    hidden: int = 64           # 128 for latents from the decoupled dynamics model
    gamma: float = 0.99
    tau: float = 0.3
    target_period: int = 1_000
    eval_period: int = 500
    seed: int = 0


@dataclass
class QPolicy:
    """Q-network plus generative action filter and frozen target copy."""

    params: nn.Params
    target: dict[str, np.ndarray]
    d_s: int
    config: BCQConfig

    def q_values(self, states: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            return _mlp_forward(Tensor(np.atleast_2d(states)), self.params,
                                "q", 3).data

    def filter_probs(self, states: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            logits = _mlp_forward(Tensor(np.atleast_2d(states)), self.params,
                                  "f", 3).data
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def select_actions(self, states: np.ndarray) -> np.ndarray:
        """Greedy actions over the filtered candidate sets."""
        states = np.atleast_2d(states)
        q = self.q_values(states)
        mask = bcq_filter(self.filter_probs(states), self.config.tau)
        mask = np.atleast_2d(mask)
        masked_q = np.where(mask, q, -np.inf)
        return masked_q.argmax(axis=1)

    def eval_action_probs(self, states: np.ndarray) -> np.ndarray:
        """Epsilon-smoothed greedy distribution used for WIS."""
        states = np.atleast_2d(states)
        greedy = self.select_actions(states)
        probs = np.full((states.shape[0], N_ACTIONS), EVAL_EPSILON / N_ACTIONS)
        probs[np.arange(states.shape[0]), greedy] += 1.0 - EVAL_EPSILON
        return probs


@dataclass
class CurvePoint:
    iteration: int
    wis_return: float
    ess: float
    q_loss: float
    filter_loss: float


def _q_target_values(policy_params: nn.Params, target: dict[str, np.ndarray],
                     s2: np.ndarray, tau: float) -> np.ndarray:
    """Double-estimator target: candidate argmax by the online network,
    value by the frozen copy."""
    with ad.no_grad():
        q_online = _mlp_forward(Tensor(s2), policy_params, "q", 3).data
        f_logits = _mlp_forward(Tensor(s2), policy_params, "f", 3).data
        shifted = f_logits - f_logits.max(axis=1, keepdims=True)
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        mask = np.atleast_2d(bcq_filter(probs, tau))
        a_star = np.where(mask, q_online, -np.inf).argmax(axis=1)

        q_frozen = s2
        for i in (1, 2, 3):
            q_frozen = q_frozen @ target[f"q.l{i}.w"] + target[f"q.l{i}.b"]
            if i < 3:
                q_frozen = np.maximum(q_frozen, 0.0)
        return q_frozen[np.arange(s2.shape[0]), a_star]


def train_bcq(buffer: TransitionBuffer, config: BCQConfig | None = None,
              eval_ctx: "WisEvalSet | None" = None,
              behavior: BCPolicy | None = None) -> tuple[QPolicy, list[CurvePoint]]:
    """Batch-constrained Q-learning with periodic WIS evaluation.

    ``eval_ctx``/``behavior`` enable the learning curve; without them the
    curve rows carry NaN returns.
    """
    config = config or BCQConfig()
    if len(buffer) == 0:
        raise ValueError("empty transition buffer")
    rng = np.random.default_rng(config.seed)
    params = nn.Params()
    _mlp_params(rng, [buffer.d_s, config.hidden, config.hidden, N_ACTIONS], "q", params)
    _mlp_params(rng, [buffer.d_s, config.hidden, config.hidden, N_ACTIONS], "f", params)
    target = {k: t.data.copy() for k, t in params.items() if k.startswith("q.")}
    policy = QPolicy(params=params, target=target, d_s=buffer.d_s, config=config)

    state = adam_init(params, config.lr)
    curve: list[CurvePoint] = []
    for it in range(1, config.iterations + 1):
        s, a, r, s2, done = buffer.sample(config.batch_size)
        y = r + config.gamma * (1.0 - done.astype(float)) * _q_target_values(
            params, target, s2, config.tau
        )
        params.zero_grad()
        q_all = _mlp_forward(Tensor(s), params, "q", 3)
        q_sa = ad.take_columns(q_all, a)
        q_loss = nn.mse(q_sa, Tensor(y))
        f_logits = _mlp_forward(Tensor(s), params, "f", 3)
        f_loss = nn.softmax_cross_entropy(f_logits, a)
        loss = ad.add(q_loss, f_loss)
        if not np.isfinite(float(loss.data)):
            raise RuntimeError(f"BCQ diverged at iteration {it}")
        loss.backward()
        adam_step(state, params, collect_grads(params))

        if it % config.target_period == 0:
            for k in target:
                target[k] = params[k].data.copy()
        if it % config.eval_period == 0:
            if eval_ctx is not None and behavior is not None:
                wis, ess = wis_evaluate(policy, behavior, eval_ctx)
            else:
                wis, ess = float("nan"), float("nan")
            curve.append(CurvePoint(it, wis, ess,
                                    float(q_loss.data), float(f_loss.data)))
    return policy, curve


# -- weighted importance sampling ---------------------------------------------------------


@dataclass
class WisEvalSet:
    """Encoded held-out trajectories: latents, logged actions, outcomes."""

    latents: list[np.ndarray]   # per trajectory (T, d_s)
    actions: list[np.ndarray]   # per trajectory (T,)
    returns: np.ndarray         # (N,) observed outcome return per trajectory


def make_eval_set(model: EncoderModel, trajs: list[Trajectory],
                  terminal_rewards: dict[int, float] | None = None) -> WisEvalSet:
    rewards_map = terminal_rewards or TERMINAL_REWARD
    latents = [encode_trajectory(model, t).latents for t in trajs]
    actions = [t.actions.copy() for t in trajs]
    returns = np.array([rewards_map[t.outcome] for t in trajs])
    return WisEvalSet(latents, actions, returns)


def wis_from_weights(weights: np.ndarray, returns: np.ndarray) -> tuple[float, float]:
    """Self-normalized estimate plus effective sample size."""
    weights = np.asarray(weights, dtype=np.float64)
    returns = np.asarray(returns, dtype=np.float64)
    total = weights.sum()
    if total <= 0.0:
        raise ValueError("all importance weights are zero")
    wis = float((weights * returns).sum() / total)
    ess = float(total * total / (weights * weights).sum())
    return wis, ess


def trajectory_weights(policy: QPolicy, behavior: BCPolicy,
                       eval_set: WisEvalSet) -> np.ndarray:
    """Per-trajectory products of smoothed-greedy over behavior ratios."""
    weights = np.empty(len(eval_set.latents))
    for n, (lat, acts) in enumerate(zip(eval_set.latents, eval_set.actions)):
        pi_e = policy.eval_action_probs(lat)[np.arange(len(acts)), acts]
        pi_b = behavior.probs(lat)[np.arange(len(acts)), acts]
        ratios = pi_e / np.maximum(pi_b, PROB_FLOOR)
        weights[n] = float(np.clip(np.prod(ratios), *WEIGHT_CLIP))
    return weights


def wis_evaluate(policy: QPolicy, behavior: BCPolicy,
                 eval_set: WisEvalSet) -> tuple[float, float]:
    """Weighted importance sampling return and effective sample size."""
    weights = trajectory_weights(policy, behavior, eval_set)
    return wis_from_weights(weights, eval_set.returns)
