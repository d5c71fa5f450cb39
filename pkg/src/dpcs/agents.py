"""Actors, critics and their update rules.

Three agent layouts share the same building blocks:

* ``dpcs``  - one actor per household, one centralized critic per household
  held by the aggregator, fed every household's observation and action;
* ``cddpg`` - a single actor over the joint observation emitting all N
  actions, and a single joint critic scoring the summed reward;
* ``dddpg`` - one actor and one local critic per household.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation, NumericError
from .nn import AdamState, Gradients, Mlp, adam_step, load_networks, save_networks

HIDDEN = (64, 64)


class Algorithm(str, enum.Enum):
    DPCS = "dpcs"
    CDDPG = "cddpg"
    DDDPG = "dddpg"

    @classmethod
    def parse(cls, value) -> "Algorithm":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("-", ""))
        except ValueError:
            raise ConfigurationError(f"unknown algorithm {value!r}; expected dpcs, cddpg or dddpg") from None


@dataclass(frozen=True)
class NoiseSchedule:
    """Gaussian exploration noise; sigmas are fractions of each action ceiling.

    Decays linearly from ``sigma_start`` to ``sigma_end`` over
    ``decay_episodes`` episodes, then stays at ``sigma_end``.
    """

    sigma_start: float = 0.2
    sigma_end: float = 0.01
    decay_episodes: int = 500

    def __post_init__(self):
        if self.sigma_start < 0 or self.sigma_end < 0 or self.decay_episodes < 0:
            raise ConfigurationError("noise sigmas and decay length must be >= 0")

    def sigma(self, episode: int) -> float:
        if self.decay_episodes == 0 or episode >= self.decay_episodes:
            return self.sigma_end
        frac = episode / self.decay_episodes
        return self.sigma_start + (self.sigma_end - self.sigma_start) * frac


class Actor:
    """Deterministic policy: observation -> power request(s) in ``[0, p_max]``."""

    def __init__(self, obs_dim: int, p_max, rng: Optional[np.random.Generator] = None,
                 hidden: Sequence[int] = HIDDEN, layer_norm: bool = False, net: Optional[Mlp] = None):
        self.p_max = np.atleast_1d(np.asarray(p_max, dtype=np.float64))
        n_out = self.p_max.shape[0]
        self.net = net if net is not None else Mlp([obs_dim, *hidden, n_out], "nonnegative", layer_norm, rng)
        if self.net.output_dim != n_out:
            raise ConfigurationError("actor output width does not match p_max")

    @property
    def obs_dim(self) -> int:
        return self.net.input_dim

    @property
    def n_actions(self) -> int:
        return self.p_max.shape[0]

    def act(self, o) -> np.ndarray:
        o = np.asarray(o, dtype=np.float64)
        if o.shape[-1] != self.obs_dim:
            raise ContractViolation(f"observation width {o.shape[-1]} != {self.obs_dim}")
        return np.minimum(self.net.forward(o), self.p_max)

    def act_explore(self, o, sigma: float, rng: np.random.Generator) -> np.ndarray:
        """``act(o)`` plus N(0, (sigma * p_max)^2) noise, clamped to ``[0, p_max]``."""
        p = self.act(o)
        if sigma > 0:
            p = p + rng.standard_normal(p.shape) * (sigma * self.p_max)
        return np.clip(p, 0.0, self.p_max)

    def copy(self) -> "Actor":
        return Actor(self.obs_dim, self.p_max, net=self.net.copy())


class Critic:
    """Action-value network; ``scope`` is ``"local"``, ``"centralized"`` or ``"joint"``."""

    def __init__(self, input_dim: int, scope: str = "centralized", rng: Optional[np.random.Generator] = None,
                 hidden: Sequence[int] = HIDDEN, layer_norm: bool = False, net: Optional[Mlp] = None):
        self.scope = scope
        self.net = net if net is not None else Mlp([input_dim, *hidden, 1], "linear", layer_norm, rng)

    @property
    def input_dim(self) -> int:
        return self.net.input_dim

    def q(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        return self.net.forward_cached(X)[0][:, 0]

    def q_and_input_grad(self, X):
        """Q values and dQ/dX row-wise (each row's gradient of its own Q)."""
        X = np.atleast_2d(X)
        out, cache = self.net.forward_cached(X)
        g = self.net.backward(cache, np.ones_like(out))
        return out[:, 0], g.input

    def copy(self) -> "Critic":
        return Critic(self.input_dim, self.scope, net=self.net.copy())


# -- critic inputs ---------------------------------------------------------------
def critic_input(observations: Sequence, actions: Sequence, i: Optional[int] = None,
                 scope: str = "centralized") -> np.ndarray:
    """Input vector for a critic.

    Centralized/joint: ``[o_1, ..., o_N, P_1, ..., P_N]`` in household order.
    Local: ``[o_i, P_i]``.
    """
    if scope == "local":
        if i is None:
            raise ContractViolation("local critic input needs the household index")
        return np.concatenate([np.asarray(observations[i], dtype=np.float64).reshape(-1),
                               np.atleast_1d(np.asarray(actions[i], dtype=np.float64)).reshape(-1)])
    if len(observations) != len(actions) or len(observations) == 0:
        raise ContractViolation("need one observation and one action per household")
    if any(o is None for o in observations) or any(a is None for a in actions):
        raise ContractViolation("missing observation or action")
    obs = [np.asarray(o, dtype=np.float64).reshape(-1) for o in observations]
    acts = np.array([float(np.asarray(a).reshape(-1)[0]) for a in actions])
    return np.concatenate(obs + [acts])


def joint_inputs(obs_batches: Sequence[np.ndarray], action_matrix: np.ndarray) -> np.ndarray:
    """Row-wise centralized critic inputs for a batch: ``(m, sum|o_i| + N)``."""
    return np.concatenate(list(obs_batches) + [action_matrix], axis=1)


# -- update rules -------------------------------------------------------------------
def td_target(r, gamma: float, q_next, terminal) -> np.ndarray:
    """One-step bootstrapped target; no bootstrap on terminal transitions."""
    r = np.asarray(r, dtype=np.float64)
    q_next = np.asarray(q_next, dtype=np.float64)
    terminal = np.asarray(terminal, dtype=bool)
    return r + gamma * np.where(terminal, 0.0, q_next)


def critic_target(r, gamma: float, target_critic: Critic, target_actors: Sequence[Actor],
                  next_observations: Sequence[np.ndarray], terminal, scope: str = "centralized",
                  i: Optional[int] = None) -> np.ndarray:
    """Targets ``y`` for a batch; next actions come from the target actors.

    ``next_observations`` holds one ``(m, |o_j|)`` array per household (for
    ``scope="joint"`` a single joint-observation array and a single actor).
    """
    if scope == "local":
        p_next = target_actors[0].act(next_observations[0])
        X = np.concatenate([next_observations[0], p_next.reshape(len(p_next), -1)], axis=1)
    elif scope == "joint":
        p_next = target_actors[0].act(next_observations[0])
        X = np.concatenate([next_observations[0], p_next], axis=1)
    else:
        p_next = np.concatenate([a.act(o).reshape(o.shape[0], -1) for a, o in zip(target_actors, next_observations)],
                                axis=1)
        X = joint_inputs(next_observations, p_next)
    return td_target(r, gamma, target_critic.q(X), terminal)


def critic_update(critic: Critic, X: np.ndarray, y: np.ndarray, adam: AdamState) -> float:
    """One Adam step on the mean squared error; returns the pre-step loss."""
    out, cache = critic.net.forward_cached(np.atleast_2d(X))
    err = out[:, 0] - np.asarray(y, dtype=np.float64)
    loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise NumericError("critic loss is not finite")
    m = err.shape[0]
    grads = critic.net.backward(cache, (2.0 / m) * err[:, None], need_input_grad=False)
    adam_step(critic.net.parameters(), grads.params, adam)
    return loss


def actor_gradients(actor: Actor, critic, obs: np.ndarray, critic_X: np.ndarray,
                    action_cols: Sequence[int]) -> Gradients:
    """Gradient of the negated batch-mean critic value w.r.t. the actor parameters.

    Each row of ``critic_X`` is a stored critic input; the columns
    ``action_cols`` are replaced by the actor's current (clamped) actions
    before the critic's action-gradient is taken.  Where an action sits on a
    clamp bound and the critic pushes it further out, the gradient is zeroed.
    """
    obs = np.atleast_2d(obs)
    raw, cache = actor.net.forward_cached(obs, linear_output=True)
    p = np.clip(raw, 0.0, actor.p_max)
    X = np.array(critic_X, dtype=np.float64, copy=True)
    cols = list(action_cols)
    X[:, cols] = p
    _, dX = critic.q_and_input_grad(X)
    dq_dp = dX[:, cols]
    outward = ((raw <= 0.0) & (dq_dp < 0.0)) | ((raw >= actor.p_max) & (dq_dp > 0.0))
    dq_dp = np.where(outward, 0.0, dq_dp)
    m = obs.shape[0]
    grads = actor.net.backward(cache, -dq_dp / m, need_input_grad=False)
    for g in grads.params:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite actor gradient")
    return grads


def actor_update(actor: Actor, critic, obs: np.ndarray, critic_X: np.ndarray,
                 action_cols: Sequence[int], adam: AdamState) -> float:
    """Ascend the critic's value with one Adam step; returns the gradient norm."""
    grads = actor_gradients(actor, critic, obs, critic_X, action_cols)
    adam_step(actor.net.parameters(), grads.params, adam)
    return grads.global_norm()


def soft_update(main: Mlp, target: Mlp, tau: float) -> None:
    """``target <- tau * main + (1 - tau) * target`` in place; normalizer is copied."""
    if not 0.0 <= tau <= 1.0:
        raise ContractViolation("tau must lie in [0, 1]")
    mp, tp = main.parameters(), target.parameters()
    if len(mp) != len(tp) or any(a.shape != b.shape for a, b in zip(mp, tp)):
        raise ContractViolation("main and target networks differ in shape")
    for p, q in zip(mp, tp):
        q *= 1.0 - tau
        q += tau * p
    target.normalizer = main.normalizer.copy()


# -- agent sets --------------------------------------------------------------------------
class AgentSet:
    """All networks and optimizer states of one algorithm on one scenario layout."""

    def __init__(self, algorithm, obs_dims: Sequence[int], p_max: Sequence[float], seed: int = 0,
                 hidden: Sequence[int] = HIDDEN, layer_norm: bool = False, lr_actor: float = 1e-3,
                 lr_critic: float = 1e-3, adam_betas=(0.9, 0.999), adam_eps: float = 1e-8,
                 household_ids: Optional[Sequence[str]] = None):
        self.algorithm = Algorithm.parse(algorithm)
        self.obs_dims = [int(d) for d in obs_dims]
        self.p_max = np.asarray(p_max, dtype=np.float64)
        self.N = len(self.obs_dims)
        self.hidden = tuple(hidden)
        self.layer_norm = layer_norm
        self.household_ids = list(household_ids) if household_ids else [f"h{i}" for i in range(self.N)]
        rng = np.random.default_rng(seed)
        joint_obs = sum(self.obs_dims)
        kw = dict(hidden=self.hidden, layer_norm=layer_norm)
        if self.algorithm is Algorithm.CDDPG:
            self.actors = [Actor(joint_obs, self.p_max, rng, **kw)]
            self.critics = [Critic(joint_obs + self.N, "joint", rng, **kw)]
        elif self.algorithm is Algorithm.DPCS:
            self.actors = [Actor(d, pm, rng, **kw) for d, pm in zip(self.obs_dims, self.p_max)]
            self.critics = [Critic(joint_obs + self.N, "centralized", rng, **kw) for _ in range(self.N)]
        else:
            self.actors = [Actor(d, pm, rng, **kw) for d, pm in zip(self.obs_dims, self.p_max)]
            self.critics = [Critic(d + 1, "local", rng, **kw) for d in self.obs_dims]
        self.target_actors = [a.copy() for a in self.actors]
        self.target_critics = [c.copy() for c in self.critics]
        b1, b2 = adam_betas
        self.actor_opt = [AdamState.for_params(a.net.parameters(), lr=lr_actor, beta1=b1, beta2=b2, eps=adam_eps)
                          for a in self.actors]
        self.critic_opt = [AdamState.for_params(c.net.parameters(), lr=lr_critic, beta1=b1, beta2=b2, eps=adam_eps)
                           for c in self.critics]

    @property
    def centralized_action(self) -> bool:
        return self.algorithm is Algorithm.CDDPG

    def act(self, observations: Sequence[np.ndarray]) -> np.ndarray:
        if self.centralized_action:
            return self.actors[0].act(np.concatenate(observations))
        return np.array([float(a.act(o)[0]) for a, o in zip(self.actors, observations)])

    def act_explore(self, observations, sigma: float, rng: np.random.Generator) -> np.ndarray:
        if self.centralized_action:
            return self.actors[0].act_explore(np.concatenate(observations), sigma, rng)
        return np.array([float(a.act_explore(o, sigma, rng)[0]) for a, o in zip(self.actors, observations)])

    def check_compatible(self, obs_dims: Sequence[int], p_max=None) -> None:
        if list(obs_dims) != self.obs_dims:
            raise ConfigurationError(f"agents were built for observation widths {self.obs_dims}, "
                                     f"scenario has {list(obs_dims)}")

    def network_records(self) -> dict:
        """Networks keyed ``<owner>/<role>`` (role: actor, target-actor, critic, target-critic)."""
        owners = ["joint"] if self.centralized_action else self.household_ids
        recs = {}
        for owner, a, ta in zip(owners, self.actors, self.target_actors):
            recs[f"{owner}/actor"] = a.net
            recs[f"{owner}/target-actor"] = ta.net
        c_owners = ["joint"] if self.centralized_action else self.household_ids
        for owner, c, tc in zip(c_owners, self.critics, self.target_critics):
            recs[f"{owner}/critic"] = c.net
            recs[f"{owner}/target-critic"] = tc.net
        return recs

    def save(self, path, extra_meta: Optional[dict] = None) -> None:
        meta = {"algorithm": self.algorithm.value, "obs_dims": self.obs_dims, "p_max": self.p_max.tolist(),
                "household_ids": self.household_ids, "hidden": list(self.hidden), "layer_norm": self.layer_norm}
        meta.update(extra_meta or {})
        save_networks(path, self.network_records(), meta)

    @classmethod
    def load(cls, path) -> "AgentSet":
        nets, meta = load_networks(path)
        try:
            agents = cls(meta["algorithm"], meta["obs_dims"], meta["p_max"], hidden=meta["hidden"],
                         layer_norm=meta["layer_norm"], household_ids=meta["household_ids"])
        except KeyError as exc:
            raise ConfigurationError(f"checkpoint metadata lacks {exc.args[0]!r}") from None
        recs = agents.network_records()
        if set(recs) != set(nets):
            raise ConfigurationError("checkpoint networks do not match the declared algorithm layout")
        for name, net in recs.items():
            loaded = nets[name]
            if loaded.layer_dims != net.layer_dims:
                raise ConfigurationError(f"network {name} has dims {loaded.layer_dims}, expected {net.layer_dims}")
            net.load_parameters_from(loaded)
        return agents
