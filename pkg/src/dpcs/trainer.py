"""Offline training, noise-free evaluation and equilibrium diagnostics."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import simenv
from .agents import (AgentSet, Algorithm, NoiseSchedule, actor_update, critic_update, joint_inputs,
                     soft_update, td_target)
from .errors import ConfigurationError, NumericError
from .pricing import DEFAULT_PRICE, PriceParams
from .replay import DEFAULT_CAPACITY, ReplayBuffer, Transition
from .rewards import DEFAULT_REWARD, LoadStats, RewardParams, discounted_return, load_stats
from .simenv import Scenario


FULFILLED_TOL = 1e-9  # kWh


class TrainingDiverged(NumericError):
    def __init__(self, message: str, checkpoint: Optional[str] = None):
        self.checkpoint = checkpoint
        super().__init__(message if checkpoint is None else f"{message} (diagnostic checkpoint: {checkpoint})")


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 1000
    beta: int = 1440  # slots between update rounds
    batch_size: int = 500
    tau: float = 0.1
    gamma: float = 0.99
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    buffer_capacity: int = DEFAULT_CAPACITY
    noise: NoiseSchedule = field(default_factory=lambda: NoiseSchedule(0.2, 0.01, 500))
    seed: int = 0
    algorithm: Algorithm = Algorithm.DPCS
    hidden: tuple = (64, 64)
    layer_norm: bool = False
    gradient_steps: int = 1  # mini-batch steps per update round
    reward_scale: float = 1.0  # multiplies rewards inside critic targets only
    checkpoint_every: int = 0  # episodes; 0 disables periodic checkpoints

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm.parse(self.algorithm))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if isinstance(self.noise, dict):
            object.__setattr__(self, "noise", NoiseSchedule(**self.noise))
        if self.episodes < 1:
            raise ConfigurationError("episodes must be >= 1")
        if self.beta < 1:
            raise ConfigurationError("beta must be >= 1")
        if self.batch_size < 1 or self.gradient_steps < 1:
            raise ConfigurationError("batch_size and gradient_steps must be >= 1")
        if not 0 <= self.tau <= 1 or not 0 <= self.gamma <= 1:
            raise ConfigurationError("tau and gamma must lie in [0, 1]")
        if self.reward_scale <= 0:
            raise ConfigurationError("reward_scale must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["algorithm"] = self.algorithm.value
        d["hidden"] = list(self.hidden)
        return d


def desk_config(**overrides) -> TrainConfig:
    """Desk-scale preset: 4-household, 48-slot scenario trained for minutes."""
    base = dict(episodes=400, beta=480, batch_size=500, gradient_steps=200, reward_scale=0.01,
                lr_actor=1e-4, noise=NoiseSchedule(0.2, 0.01, 200))
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class TrainLog:
    n_households: int
    records: list = field(default_factory=list)
    wall_clock: list = field(default_factory=list)

    def columns(self) -> list:
        return (["episode", "sigma", "reward_mean"] + [f"reward_h{i}" for i in range(self.n_households)]
                + ["critic_loss", "actor_grad_norm", "update_rounds"])

    def rewards(self) -> np.ndarray:
        """Per-episode undiscounted returns, shape ``(episodes, N)``."""
        return np.array([[r[f"reward_h{i}"] for i in range(self.n_households)] for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = self.columns()
        w.writerow(cols)
        for rec in self.records:
            w.writerow([_fmt(rec[c]) for c in cols])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    def write_timing_csv(self, path) -> None:
        lines = ["episode,seconds"] + [f"{i + 1},{s:.6f}" for i, s in enumerate(self.wall_clock)]
        Path(path).write_text("\n".join(lines) + "\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if window <= 1 or v.size == 0:
        return v.copy()
    c = np.cumsum(np.insert(v, 0, 0.0))
    out = np.empty_like(v)
    for k in range(v.size):
        lo = max(0, k + 1 - window)
        out[k] = (c[k + 1] - c[lo]) / (k + 1 - lo)
    return out


# -- training --------------------------------------------------------------------
class _Learner:
    """Holds buffers and runs update rounds for one AgentSet."""

    def __init__(self, agents: AgentSet, cfg: TrainConfig, rng: np.random.Generator):
        self.agents = agents
        self.cfg = cfg
        self.rng = rng
        self.buffers = [ReplayBuffer(cfg.buffer_capacity) for _ in range(agents.N)]
        self.obs_offsets = np.cumsum([0] + agents.obs_dims)

    def push(self, obs, actions, rewards, obs_next, terminal) -> None:
        for i, buf in enumerate(self.buffers):
            buf.push(Transition(obs[i], actions[i], rewards[i], obs_next[i], terminal))

    def _recent(self, n: int) -> list:
        size = len(self.buffers[0])
        n = min(n, size)
        head = self.buffers[0]._head
        idx = (np.arange(head - n, head)) % self.buffers[0].capacity
        return [b.gather(idx) for b in self.buffers]

    def refresh_normalizers(self, n_recent: int) -> None:
        """Fold the most recent transitions into every main network's input statistics."""
        ag = self.agents
        batches = self._recent(n_recent)
        O = [b.o for b in batches]
        A = np.concatenate([b.p for b in batches], axis=1)
        if ag.algorithm is Algorithm.CDDPG:
            ag.actors[0].net.normalizer.update(np.concatenate(O, axis=1))
            ag.critics[0].net.normalizer.update(joint_inputs(O, A))
        elif ag.algorithm is Algorithm.DPCS:
            X = joint_inputs(O, A)
            for a, c, o in zip(ag.actors, ag.critics, O):
                a.net.normalizer.update(o)
                c.net.normalizer.update(X)
        else:
            for a, c, b in zip(ag.actors, ag.critics, batches):
                a.net.normalizer.update(b.o)
                c.net.normalizer.update(np.concatenate([b.o, b.p], axis=1))

    def update_round(self) -> tuple:
        losses, norms = [], []
        ag = self.agents
        # each inner step is a full sample / critic / actor / target-blend unit
        for _ in range(self.cfg.gradient_steps):
            l, g = self._gradient_step()
            losses.append(l)
            norms.append(g)
            for a, ta in zip(ag.actors, ag.target_actors):
                soft_update(a.net, ta.net, self.cfg.tau)
            for c, tc in zip(ag.critics, ag.target_critics):
                soft_update(c.net, tc.net, self.cfg.tau)
        return float(np.mean(losses)), float(np.mean(norms))

    def _gradient_step(self) -> tuple:
        cfg, ag = self.cfg, self.agents
        idx = self.buffers[0].sample_indices(cfg.batch_size, self.rng)
        batches = [b.gather(idx) for b in self.buffers]
        O = [b.o for b in batches]
        O2 = [b.o_next for b in batches]
        A = np.concatenate([b.p for b in batches], axis=1)
        term = batches[0].terminal
        R = [cfg.reward_scale * b.r for b in batches]
        losses, norms = [], []
        if ag.algorithm is Algorithm.CDDPG:
            Oj, O2j = np.concatenate(O, axis=1), np.concatenate(O2, axis=1)
            X = np.concatenate([Oj, A], axis=1)
            X2 = np.concatenate([O2j, ag.target_actors[0].act(O2j)], axis=1)
            y = td_target(np.sum(R, axis=0), cfg.gamma, ag.target_critics[0].q(X2), term)
            losses.append(critic_update(ag.critics[0], X, y, ag.critic_opt[0]))
            cols = list(range(Oj.shape[1], X.shape[1]))
            norms.append(actor_update(ag.actors[0], ag.critics[0], Oj, X, cols, ag.actor_opt[0]))
        elif ag.algorithm is Algorithm.DPCS:
            X = joint_inputs(O, A)
            P2 = np.stack([ta.act(o2)[:, 0] for ta, o2 in zip(ag.target_actors, O2)], axis=1)
            X2 = joint_inputs(O2, P2)
            # all targets come from the target networks as they stood before this step
            ys = [td_target(R[i], cfg.gamma, ag.target_critics[i].q(X2), term) for i in range(ag.N)]
            base = X.shape[1] - ag.N
            for i in range(ag.N):
                losses.append(critic_update(ag.critics[i], X, ys[i], ag.critic_opt[i]))
                norms.append(actor_update(ag.actors[i], ag.critics[i], O[i], X, [base + i], ag.actor_opt[i]))
        else:
            for i in range(ag.N):
                X = np.concatenate([O[i], batches[i].p], axis=1)
                X2 = np.concatenate([O2[i], ag.target_actors[i].act(O2[i])], axis=1)
                y = td_target(R[i], cfg.gamma, ag.target_critics[i].q(X2), term)
                losses.append(critic_update(ag.critics[i], X, y, ag.critic_opt[i]))
                norms.append(actor_update(ag.actors[i], ag.critics[i], O[i], X, [O[i].shape[1]], ag.actor_opt[i]))
        return float(np.mean(losses)), float(np.mean(norms))


def make_agents(cfg: TrainConfig, scenario: Scenario) -> AgentSet:
    return AgentSet(cfg.algorithm, scenario.obs_dims(), scenario.p_max(), seed=cfg.seed, hidden=cfg.hidden,
                    layer_norm=cfg.layer_norm, lr_actor=cfg.lr_actor, lr_critic=cfg.lr_critic,
                    adam_betas=(cfg.adam_beta1, cfg.adam_beta2), adam_eps=cfg.adam_eps,
                    household_ids=[h.id for h in scenario.households])


def train(cfg: TrainConfig, scenario: Scenario, price_params: PriceParams = DEFAULT_PRICE,
          reward_params: Optional[RewardParams] = None, checkpoint_dir=None,
          on_episode: Optional[Callable[[dict], None]] = None):
    """Run the offline training loop; returns ``(agents, log)``.

    The update counter accumulates across episode boundaries: every ``beta``
    environment slots one update round runs, provided each replay buffer
    already holds ``batch_size`` transitions.
    """
    if reward_params is None:
        reward_params = replace(DEFAULT_REWARD, gamma=cfg.gamma)
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    noise_rng = np.random.default_rng(seeds[0])
    sample_rng = np.random.default_rng(seeds[1])
    agents = make_agents(cfg, scenario)
    learner = _Learner(agents, cfg, sample_rng)
    tlog = TrainLog(scenario.N)
    l_counter = 0
    rounds = 0
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None

    for episode in range(cfg.episodes):
        t0 = time.perf_counter()
        sigma = cfg.noise.sigma(episode)
        state = simenv.reset(scenario, price_params, reward_params)
        obs = simenv.observe_all(state)
        ep_reward = np.zeros(scenario.N)
        ep_losses, ep_norms = [], []
        for _ in range(scenario.T):
            actions = agents.act_explore(obs, sigma, noise_rng)
            res = simenv.step(state, actions)
            obs_next = simenv.observe_all(res.state)
            learner.push(obs, actions, res.rewards, obs_next, res.terminal)
            ep_reward += res.rewards
            state, obs = res.state, obs_next
            l_counter += 1
            if l_counter == cfg.beta:
                l_counter = 0
                learner.refresh_normalizers(cfg.beta)
                if len(learner.buffers[0]) >= cfg.batch_size:
                    try:
                        loss, norm = learner.update_round()
                    except NumericError as exc:
                        path = None
                        if ckpt_dir is not None:
                            ckpt_dir.mkdir(parents=True, exist_ok=True)
                            path = str(ckpt_dir / f"diverged_ep{episode + 1}.npz")
                            agents.save(path, {"episode": episode + 1, "diverged": True})
                        raise TrainingDiverged(f"training diverged in episode {episode + 1}: {exc}", path) from exc
                    rounds += 1
                    ep_losses.append(loss)
                    ep_norms.append(norm)
        rec = {"episode": episode + 1, "sigma": float(sigma), "reward_mean": float(ep_reward.mean())}
        for i, r in enumerate(ep_reward):
            rec[f"reward_h{i}"] = float(r)
        rec["critic_loss"] = float(np.mean(ep_losses)) if ep_losses else None
        rec["actor_grad_norm"] = float(np.mean(ep_norms)) if ep_norms else None
        rec["update_rounds"] = rounds
        tlog.records.append(rec)
        tlog.wall_clock.append(time.perf_counter() - t0)
        if on_episode is not None:
            on_episode(rec)
        if ckpt_dir is not None and cfg.checkpoint_every and (episode + 1) % cfg.checkpoint_every == 0:
            ckpt_dir.mkdir(parents=True, exist_ok=True)
            agents.save(ckpt_dir / f"agents_ep{episode + 1}.npz", {"episode": episode + 1})
    return agents, tlog


# -- evaluation --------------------------------------------------------------------
@dataclass
class Rollout:
    loads: np.ndarray  # (T,)
    prices: np.ndarray  # (T,)
    shiftable_kw: np.ndarray  # (T, N) realized shiftable draw
    nonshiftable_kw: np.ndarray  # (T, N)
    requested_kw: np.ndarray  # (T, N) actions as emitted
    rewards: np.ndarray  # (T, N)
    unfulfilled_kwh: np.ndarray  # (N,) at the horizon

    @property
    def household_kw(self) -> np.ndarray:
        return self.shiftable_kw + self.nonshiftable_kw

    def returns(self, gamma: float) -> np.ndarray:
        return np.array([discounted_return(self.rewards[:, i], gamma) for i in range(self.rewards.shape[1])])

    def stats(self) -> LoadStats:
        return load_stats(self.loads, self.prices, self.household_kw)


def rollout(scenario: Scenario, policy: Callable, price_params: PriceParams = DEFAULT_PRICE,
            reward_params: RewardParams = DEFAULT_REWARD) -> Rollout:
    """Run one episode with ``policy(observations) -> actions``."""
    state = simenv.reset(scenario, price_params, reward_params)
    obs = simenv.observe_all(state)
    T, N = scenario.T, scenario.N
    out = {k: np.zeros((T, N)) for k in ("shift", "ns", "req", "rew")}
    loads, prices = np.zeros(T), np.zeros(T)
    for t in range(T):
        actions = np.asarray(policy(obs), dtype=np.float64)
        res = simenv.step(state, actions)
        loads[t], prices[t] = res.load, res.price
        out["shift"][t], out["ns"][t], out["req"][t], out["rew"][t] = (res.shiftable_kw, res.nonshiftable_kw,
                                                                       actions, res.rewards)
        state = res.state
        obs = simenv.observe_all(state)
    unfulfilled = np.array([state.unfulfilled_kwh(i) for i in range(N)])
    return Rollout(loads, prices, out["shift"], out["ns"], out["req"], out["rew"], unfulfilled)


@dataclass
class Evaluation:
    original: LoadStats
    scheduled: LoadStats
    original_rollout: Rollout
    scheduled_rollout: Rollout
    # (rollouts, N) terminal unfulfilled kWh; row 0 is the noise-free rollout
    rollout_unfulfilled: Optional[np.ndarray] = None

    @property
    def schedules(self) -> np.ndarray:
        return self.scheduled_rollout.shiftable_kw

    @property
    def prices(self) -> np.ndarray:
        return self.scheduled_rollout.prices

    def fulfilled(self) -> bool:
        return bool(np.all(self.scheduled_rollout.unfulfilled_kwh <= FULFILLED_TOL))

    def fulfilled_fraction(self) -> float:
        """Share of evaluation rollouts that end with every household's demand met."""
        u = self.rollout_unfulfilled
        if u is None:
            return float(self.fulfilled())
        return float(np.mean(np.all(u <= FULFILLED_TOL, axis=1)))

    def comparison_rows(self) -> list:
        rows = []
        for col in LoadStats.COLUMNS:
            rows.append({"metric": col, "original": self.original.as_row()[col],
                         "scheduled": self.scheduled.as_row()[col]})
        return rows


def evaluate(agents: AgentSet, scenario: Scenario, price_params: PriceParams = DEFAULT_PRICE,
             reward_params: RewardParams = DEFAULT_REWARD, rollouts: int = 1, noise: float = 0.0,
             seed: int = 0) -> Evaluation:
    """Noise-free rollout of the trained policy next to immediate (unscheduled) service.

    Statistics come from the noise-free rollout.  With ``rollouts > 1`` the
    extra episodes add Gaussian execution noise of ``noise * p_max`` to the
    policy output and only their terminal unfulfilled demand is kept.
    """
    agents.check_compatible(scenario.obs_dims())
    greedy = simenv.greedy_actions(scenario)
    orig = rollout(scenario, lambda obs: greedy, price_params, reward_params)
    sched = rollout(scenario, agents.act, price_params, reward_params)
    unfulfilled = [sched.unfulfilled_kwh]
    rng = np.random.default_rng(seed)
    for _ in range(rollouts - 1):
        noisy = rollout(scenario, lambda obs: agents.act_explore(obs, noise, rng), price_params, reward_params)
        unfulfilled.append(noisy.unfulfilled_kwh)
    return Evaluation(orig.stats(), sched.stats(), orig, sched, np.array(unfulfilled))


# -- equilibrium diagnostics -----------------------------------------------------------
@dataclass
class BestResponseResult:
    household: int
    baseline: float  # J_i of the current profile
    best: float
    gain: float  # max(0, best - baseline)
    best_deviation: str


def best_response_check(agents: AgentSet, scenario: Scenario, i: int, perturbations: int = 20,
                        magnitude: float = 0.1, seed: int = 0, price_params: PriceParams = DEFAULT_PRICE,
                        reward_params: RewardParams = DEFAULT_REWARD) -> BestResponseResult:
    """Largest return improvement household ``i`` finds by deviating alone.

    Deviations: ``perturbations`` random relative perturbations of its actor
    parameters (each tensor gets Gaussian noise scaled by ``magnitude`` times
    its RMS), plus scaling its actions by ``1 +/- magnitude * {0.5, 1, 2}``.
    Other households keep their policies.  Returns are discounted rollout
    returns.
    """
    gamma = reward_params.gamma
    base_policy = agents.act

    def J(policy) -> float:
        return float(rollout(scenario, policy, price_params, reward_params).returns(gamma)[i])

    baseline = J(base_policy)
    best, best_dev = baseline, "none"
    rng = np.random.default_rng(seed)

    def with_action(fn):
        def policy(obs):
            p = base_policy(obs).copy()
            p[i] = fn(obs, p[i])
            return p
        return policy

    pmax = float(scenario.p_max()[i])
    for c in (1 - 2 * magnitude, 1 - magnitude, 1 - magnitude / 2, 1 + magnitude / 2, 1 + magnitude,
              1 + 2 * magnitude):
        c = max(c, 0.0)
        val = J(with_action(lambda obs, p, c=c: float(np.clip(c * p, 0.0, pmax))))
        if val > best:
            best, best_dev = val, f"scale {c:g}"

    if not agents.centralized_action:
        actor = agents.actors[i]
        for k in range(perturbations):
            dev = actor.copy()
            for p in dev.net.parameters():
                rms = float(np.sqrt(np.mean(p * p)))
                p += magnitude * rms * rng.standard_normal(p.shape)
            val = J(with_action(lambda obs, p, dev=dev: float(dev.act(obs[i])[0])))
            if val > best:
                best, best_dev = val, f"perturbation {k}"
    return BestResponseResult(i, baseline, best, max(0.0, best - baseline), best_dev)


# -- inference scaling -------------------------------------------------------------------
def _time_call(fn, repeats: int, inner: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        best = min(best, (time.perf_counter() - t0) / inner)
    return best


def inference_benchmark(N_values: Sequence[int], seed: int = 0, T: int = 48, repeats: int = 5,
                        inner: int = 200, scenario_factory=None) -> list:
    """Single-slot decision latency of one DPCS household versus the centralized actor.

    For each N a synthetic scenario is generated; latencies are the best of
    ``repeats`` means over ``inner`` calls.
    """
    if scenario_factory is None:
        from .data import synth_scenario
        scenario_factory = lambda n: synth_scenario(seed=seed, N=n, T=T)
    rows = []
    for n in N_values:
        sc = scenario_factory(n)
        state = simenv.reset(sc)
        obs = simenv.observe_all(state)
        dpcs = AgentSet("dpcs", sc.obs_dims(), sc.p_max(), seed=seed)
        cddpg = AgentSet("cddpg", sc.obs_dims(), sc.p_max(), seed=seed)
        o0 = obs[0]
        joint = np.concatenate(obs)
        a0 = dpcs.actors[0]
        ac = cddpg.actors[0]
        rows.append({
            "N": n,
            "dpcs_input_width": a0.obs_dim,
            "cddpg_input_width": ac.obs_dim,
            "dpcs_household_latency_s": _time_call(lambda: a0.act(o0), repeats, inner),
            "cddpg_latency_s": _time_call(lambda: ac.act(joint), repeats, inner),
            "dpcs_actor_macs": _macs(a0.net.layer_dims),
            "cddpg_actor_macs": _macs(ac.net.layer_dims),
        })
    return rows


def _macs(dims) -> int:
    return int(sum(a * b for a, b in zip(dims[:-1], dims[1:])))


def decision_latency(agents: AgentSet, scenario: Scenario, repeats: int = 5, inner: int = 200) -> float:
    """Seconds for one household's real-time decision at the first slot.

    Distributed algorithms evaluate household 0's own actor; the centralized
    baseline must run its joint actor.
    """
    obs = simenv.observe_all(simenv.reset(scenario))
    if agents.centralized_action:
        joint = np.concatenate(obs)
        return _time_call(lambda: agents.actors[0].act(joint), repeats, inner)
    a0, o0 = agents.actors[0], obs[0]
    return _time_call(lambda: a0.act(o0), repeats, inner)
