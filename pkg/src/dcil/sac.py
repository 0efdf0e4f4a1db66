"""Goal-conditioned soft actor-critic on top of :mod:`dcil.neural`.

Networks see the state as ``(x, y, cos theta, sin theta)`` and the goal as
``(gx, gy)`` plus the offset ``(gx - x, gy - y)``; positions are rescaled to
roughly [-1, 1] with the arena bounds.  The action is one scalar in [-1, 1].
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from dcil.neural import AdamState, Mlp, adam_step, polyak_update

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
OBS_DIM = 8
ACT_DIM = 1
LOG_2PI = math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)
# tanh rounds to +-1 in float64 for |u| > ~19; keep actions strictly inside
ACTION_LIMIT = 1.0 - 1e-12


class SacDivergence(FloatingPointError):
    """Raised when a loss or critic estimate stops being finite."""

    def __init__(self, message: str, dump: dict | None = None):
        super().__init__(message)
        self.dump = dump or {}


@dataclass(frozen=True)
class SacConfig:
    hidden: tuple[int, ...] = (64, 64)
    gamma: float = 0.98
    lr: float = 3e-4
    tau: float = 0.005
    batch_size: int = 128
    alpha: float = 0.1              # initial (or fixed) entropy temperature
    adaptive_alpha: bool = True
    target_entropy: float = -1.0
    divergence_threshold: float = 1e6

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.lr <= 0 or self.batch_size < 1 or self.alpha < 0:
            raise ValueError("lr, batch_size must be positive and alpha non-negative")
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("hidden layer sizes must be positive")


@dataclass
class Batch:
    s: np.ndarray          # (B, 3)
    a: np.ndarray          # (B,)
    s_next: np.ndarray     # (B, 3)
    r: np.ndarray          # (B,)
    g: np.ndarray          # (B, 2)
    done: np.ndarray       # (B,) bool, bootstrap mask source
    her: np.ndarray = field(default=None)     # (B,) provenance: relabelled
    bonus: np.ndarray = field(default=None)   # (B,) provenance: chaining bonus added

    def __len__(self) -> int:
        return self.r.shape[0]


@dataclass
class LossReport:
    critic_loss: float
    actor_loss: float
    alpha: float
    q_mean: float
    entropy: float


class SacAgent:
    def __init__(self, cfg: SacConfig, bounds, rng: np.random.Generator | None = None,
                 zero_init: bool = False):
        self.cfg = cfg
        xmin, ymin, xmax, ymax = (float(v) for v in bounds)
        self.bounds = (xmin, ymin, xmax, ymax)
        self.center = np.array([(xmin + xmax) / 2, (ymin + ymax) / 2])
        self.scale = np.array([(xmax - xmin) / 2, (ymax - ymin) / 2])
        init_rng = None if zero_init else (rng or np.random.default_rng(0))
        self.actor = Mlp((OBS_DIM, *cfg.hidden, 2), rng=init_rng, out_scale=0.1)
        self.critic1 = Mlp((OBS_DIM + ACT_DIM, *cfg.hidden, 1), rng=init_rng)
        self.critic2 = Mlp((OBS_DIM + ACT_DIM, *cfg.hidden, 1), rng=init_rng)
        self.target1 = self.critic1.clone()
        self.target2 = self.critic2.clone()
        self.log_alpha = math.log(cfg.alpha) if cfg.alpha > 0 else -math.inf
        self.actor_opt = AdamState.for_params(self.actor.n_params, cfg.lr)
        self.critic1_opt = AdamState.for_params(self.critic1.n_params, cfg.lr)
        self.critic2_opt = AdamState.for_params(self.critic2.n_params, cfg.lr)
        self.alpha_opt = AdamState.for_params(1, cfg.lr)
        self.n_updates = 0
        self._g_actor = np.zeros(self.actor.n_params)
        self._g_c1 = np.zeros(self.critic1.n_params)
        self._g_c2 = np.zeros(self.critic2.n_params)

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    # ------------------------------------------------------------------ features

    def features(self, s: np.ndarray, g: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64).reshape(-1, 3)
        g = np.asarray(g, dtype=np.float64).reshape(-1, 2)
        out = np.empty((s.shape[0], OBS_DIM))
        out[:, 0:2] = (s[:, 0:2] - self.center) / self.scale
        out[:, 2] = np.cos(s[:, 2])
        out[:, 3] = np.sin(s[:, 2])
        out[:, 4:6] = (g - self.center) / self.scale
        out[:, 6:8] = (g - s[:, 0:2]) / self.scale
        return out

    # ------------------------------------------------------------------ policy

    def _dist(self, obs: np.ndarray):
        out = self.actor.forward(obs)
        mu = out[:, 0]
        log_std = np.clip(out[:, 1], LOG_STD_MIN, LOG_STD_MAX)
        return mu, log_std

    def act_batch(self, obs: np.ndarray, rng: np.random.Generator | None,
                  deterministic: bool = False):
        """Actions and log-probabilities for a batch of featurised observations."""
        mu, log_std = self._dist(obs)
        if deterministic:
            u = mu
            xi = np.zeros_like(mu)
        else:
            xi = rng.standard_normal(mu.shape[0])
            u = mu + np.exp(log_std) * xi
        a = np.clip(np.tanh(u), -ACTION_LIMIT, ACTION_LIMIT)
        logp = squashed_log_prob(u, xi, log_std)
        return a, logp

    def sample_action(self, s, g, rng: np.random.Generator | None = None,
                      deterministic: bool = False) -> tuple[float, float]:
        a, logp = self.act_batch(self.features(s, g), rng, deterministic)
        return float(a[0]), float(logp[0])

    # ------------------------------------------------------------------ critics

    def q_values(self, obs: np.ndarray, a: np.ndarray, target: bool = False):
        x = np.concatenate([obs, np.asarray(a, dtype=np.float64).reshape(-1, 1)], axis=1)
        c1, c2 = (self.target1, self.target2) if target else (self.critic1, self.critic2)
        return c1.forward(x)[:, 0], c2.forward(x)[:, 0]

    def target_value(self, s_next: np.ndarray, g: np.ndarray) -> np.ndarray:
        """``min(Qbar1, Qbar2)(s', pi_det(s', g), g)``, the chaining-bonus query."""
        obs = self.features(s_next, g)
        a, _ = self.act_batch(obs, None, deterministic=True)
        q1, q2 = self.q_values(obs, a, target=True)
        return np.minimum(q1, q2)

    # ------------------------------------------------------------------ update

    def update(self, batch: Batch, rng: np.random.Generator, n_gradient_steps: int = 1) -> LossReport:
        if len(batch) == 0:
            raise ValueError("empty batch")
        report = None
        for _ in range(n_gradient_steps):
            report = self._gradient_step(batch, rng)
        return report

    def critic_target(self, batch: Batch, rng: np.random.Generator) -> np.ndarray:
        """Soft Bellman targets; ``done`` transitions do not bootstrap."""
        obs_next = self.features(batch.s_next, batch.g)
        a_next, logp_next = self.act_batch(obs_next, rng)
        qt1, qt2 = self.q_values(obs_next, a_next, target=True)
        not_done = 1.0 - batch.done.astype(np.float64)
        return batch.r + self.cfg.gamma * not_done * (np.minimum(qt1, qt2)
                                                      - self.alpha * logp_next)

    def actor_objective(self, obs: np.ndarray, xi: np.ndarray,
                        grad_out: np.ndarray | None = None) -> tuple[float, np.ndarray]:
        """Mean of ``alpha * log pi(a|s,g) - min(Q1, Q2)(s, a, g)`` for ``a`` reparameterised by ``xi``.

        Returns the loss and the per-sample log-probabilities; the gradient
        with respect to the actor parameters is written to ``grad_out``.
        """
        n = obs.shape[0]
        alpha = self.alpha
        out, acache = self.actor.forward_cache(obs)
        mu = out[:, 0]
        raw_log_std = out[:, 1]
        log_std = np.clip(raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
        std = np.exp(log_std)
        u = mu + std * xi
        a = np.clip(np.tanh(u), -ACTION_LIMIT, ACTION_LIMIT)
        logp = squashed_log_prob(u, xi, log_std)
        xa = np.concatenate([obs, a[:, None]], axis=1)
        q1, c1 = self.critic1.forward_cache(xa)
        q2, c2 = self.critic2.forward_cache(xa)
        use1 = q1[:, 0] <= q2[:, 0]
        qmin = np.where(use1, q1[:, 0], q2[:, 0])
        loss = float(np.mean(alpha * logp - qmin))
        if grad_out is None:
            return loss, logp
        ones = np.ones((n, 1))
        _, dx1 = self.critic1.backward_cache(c1, ones, need_params=False)
        _, dx2 = self.critic2.backward_cache(c2, ones, need_params=False)
        dq_da = np.where(use1, dx1[:, -1], dx2[:, -1])
        # d log pi / du = 2 tanh(u) through the squashing correction
        dtanh = 1.0 - a * a
        d_mu = alpha * 2.0 * a - dq_da * dtanh
        d_log_std = alpha * (-1.0 + 2.0 * a * std * xi) - dq_da * dtanh * std * xi
        d_log_std *= (raw_log_std > LOG_STD_MIN) & (raw_log_std < LOG_STD_MAX)
        dout = np.stack([d_mu, d_log_std], axis=1) / n
        grad_out[:] = 0.0
        self.actor.backward_cache(acache, dout, grad_out=grad_out)
        return loss, logp

    def _gradient_step(self, batch: Batch, rng: np.random.Generator) -> LossReport:
        cfg = self.cfg
        n = len(batch)
        alpha = self.alpha
        obs = self.features(batch.s, batch.g)
        y = self.critic_target(batch, rng)

        x = np.concatenate([obs, batch.a.reshape(-1, 1)], axis=1)
        critic_loss = 0.0
        q_mean = 0.0
        for net, opt, grad in ((self.critic1, self.critic1_opt, self._g_c1),
                               (self.critic2, self.critic2_opt, self._g_c2)):
            q, cache = net.forward_cache(x)
            err = q[:, 0] - y
            critic_loss += float(err @ err) / n
            q_mean += float(q.mean()) / 2
            grad[:] = 0.0
            net.backward_cache(cache, (2.0 / n) * err[:, None], grad_out=grad)
            adam_step(opt, net.params, grad)

        xi = rng.standard_normal(n)
        actor_loss, logp = self.actor_objective(obs, xi, self._g_actor)
        adam_step(self.actor_opt, self.actor.params, self._g_actor)

        # temperature: descend alpha * (-log pi - target_entropy) in log-alpha
        if cfg.adaptive_alpha and cfg.alpha > 0:
            g_log_alpha = alpha * float(np.mean(-logp - cfg.target_entropy))
            la = np.array([self.log_alpha])
            adam_step(self.alpha_opt, la, np.array([g_log_alpha]))
            self.log_alpha = float(la[0])

        polyak_update(self.target1, self.critic1, cfg.tau)
        polyak_update(self.target2, self.critic2, cfg.tau)
        self.n_updates += 1

        report = LossReport(critic_loss, actor_loss, alpha, q_mean, float(-logp.mean()))
        if not (math.isfinite(critic_loss) and math.isfinite(actor_loss)
                and abs(q_mean) < cfg.divergence_threshold):
            raise SacDivergence(
                f"SAC diverged at update {self.n_updates}: critic_loss={critic_loss!r} "
                f"actor_loss={actor_loss!r} q_mean={q_mean!r}",
                dump={"update": self.n_updates, **asdict(report),
                      "reward_range": [float(batch.r.min()), float(batch.r.max())]})
        return report

    # ------------------------------------------------------------------ snapshots

    def snapshot(self) -> SacAgent:
        """Independent copy for evaluation."""
        other = SacAgent.__new__(SacAgent)
        other.__dict__.update(self.__dict__)
        for name in ("actor", "critic1", "critic2", "target1", "target2"):
            setattr(other, name, getattr(self, name).clone())
        for name in ("actor_opt", "critic1_opt", "critic2_opt", "alpha_opt"):
            setattr(other, name, getattr(self, name).copy())
        for name in ("_g_actor", "_g_c1", "_g_c2"):
            setattr(other, name, getattr(self, name).copy())
        return other

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        manifest = {"format": "dcil-sac", "version": 1, "sac": _cfg_dict(self.cfg),
                    "bounds": list(self.bounds), "log_alpha": self.log_alpha,
                    "n_updates": self.n_updates, **(extra or {})}
        arrays = {name: getattr(self, name).params
                  for name in ("actor", "critic1", "critic2", "target1", "target2")}
        for name in ("actor_opt", "critic1_opt", "critic2_opt", "alpha_opt"):
            opt = getattr(self, name)
            arrays[f"{name}_m"] = opt.m
            arrays[f"{name}_v"] = opt.v
            manifest[f"{name}_t"] = opt.t
        with open(path, "wb") as fh:
            np.savez(fh, manifest=np.array(json.dumps(manifest, sort_keys=True)), **arrays)

    @classmethod
    def load(cls, path: str | Path) -> tuple[SacAgent, dict]:
        try:
            with np.load(path, allow_pickle=False) as data:
                manifest = json.loads(str(data["manifest"]))
                arrays = {k: data[k] for k in data.files if k != "manifest"}
        except (OSError, ValueError, KeyError) as exc:
            raise ValueError(f"{path}: unreadable agent checkpoint ({exc})") from None
        if manifest.get("format") != "dcil-sac":
            raise ValueError(f"{path}: not an agent checkpoint")
        sac = dict(manifest["sac"])
        sac["hidden"] = tuple(sac["hidden"])
        agent = cls(SacConfig(**sac), manifest["bounds"], zero_init=True)
        for name in ("actor", "critic1", "critic2", "target1", "target2"):
            params = arrays[name]
            net = getattr(agent, name)
            if params.shape != net.params.shape or not np.all(np.isfinite(params)):
                raise ValueError(f"{path}: corrupt parameters for {name}")
            net.load_params(params)
        for name in ("actor_opt", "critic1_opt", "critic2_opt", "alpha_opt"):
            opt = getattr(agent, name)
            opt.m[:] = arrays[f"{name}_m"]
            opt.v[:] = arrays[f"{name}_v"]
            opt.t = int(manifest[f"{name}_t"])
        agent.log_alpha = float(manifest["log_alpha"])
        agent.n_updates = int(manifest["n_updates"])
        return agent, manifest


def squashed_log_prob(u: np.ndarray, xi: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """log density of ``a = tanh(u)`` for ``u = mu + std * xi``."""
    gauss = -0.5 * xi * xi - log_std - 0.5 * LOG_2PI
    # log(1 - tanh(u)^2) computed without cancellation
    log_det = 2.0 * (LOG_2 - u - np.logaddexp(0.0, -2.0 * u))
    return gauss - log_det


def _cfg_dict(cfg: SacConfig) -> dict:
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    return d
