"""Soft actor-critic trainer with dropout + layer-norm critics, automatic
entropy temperature, per-episode domain randomization and periodic
deterministic evaluation.

Published-default hyperparameters sit in TrainerConfig(); desk_config()
shrinks the update-to-data ratio, batch and buffer so the smoke runs fit a
laptop-class CPU budget. Training is single-threaded and fully seeded, so
identical configs reproduce identical checkpoints.
"""

from __future__ import annotations

import copy
import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .. import metrics
from ..domain_rand import DRConfig, DRSampler
from ..errors import ConfigError, TrainingDiverged
from .checkpoint import Checkpoint, save_checkpoint
from .nets import (ActorNet, Adam, CriticNet, actor_loss_and_grads,
                   critic_loss_and_grads)


class ReplayBuffer:
    """Uniform-sampling ring buffer of transitions."""

    def __init__(self, capacity, obs_dim, act_dim, dtype=np.float32):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim), dtype=dtype)
        self.action = np.zeros((capacity, act_dim), dtype=dtype)
        self.reward = np.zeros(capacity, dtype=dtype)
        self.next_obs = np.zeros((capacity, obs_dim), dtype=dtype)
        self.done = np.zeros(capacity, dtype=dtype)
        self.size = 0
        self.pos = 0

    def __len__(self):
        return self.size

    def store(self, obs, action, reward, next_obs, done):
        i = self.pos
        self.obs[i] = obs
        self.action[i] = action
        self.reward[i] = reward
        self.next_obs[i] = next_obs
        self.done[i] = 1.0 if done else 0.0
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch, rng):
        idx = rng.integers(0, self.size, size=batch)
        return {
            "obs": self.obs[idx],
            "action": self.action[idx],
            "reward": self.reward[idx],
            "next_obs": self.next_obs[idx],
            "done": self.done[idx],
            "idx": idx,
        }


@dataclass(frozen=True)
class TrainerConfig:
    total_steps: int = 1_000_000
    budget_unit: str = "steps"          # "steps" or "episodes"
    warmup_steps: int = 1000
    batch_size: int = 256
    utd: int = 20                       # critic updates per environment step
    gamma: float = 0.99
    polyak_tau: float = 0.005
    lr: float = 3e-4
    dropout: float = 0.01
    target_entropy: float = -13.0
    hidden: tuple = (256, 256, 256)
    buffer_capacity: int = 1_000_000
    eval_interval: int = 5000
    eval_episodes: int = 1
    seed: int = 0
    early_stop_f1: float = None
    averaging: str = metrics.MICRO

    def validate(self):
        if self.budget_unit not in ("steps", "episodes"):
            raise ConfigError(f"budget_unit must be steps|episodes, "
                              f"got {self.budget_unit!r}")
        if self.budget_unit == "steps" and self.total_steps < self.warmup_steps:
            raise ConfigError(
                f"budget {self.total_steps} is below warmup {self.warmup_steps}")
        if self.utd < 1 or self.batch_size < 1:
            raise ConfigError("utd and batch_size must be >= 1")


def desk_config(**overrides) -> TrainerConfig:
    """Laptop-scale defaults for the smoke runs and experiments."""
    base = dict(total_steps=60_000, warmup_steps=600, batch_size=128,
                utd=2, buffer_capacity=120_000, eval_interval=2000,
                eval_episodes=1)
    base.update(overrides)
    return TrainerConfig(**base)


def rollout_deterministic(env, actor, params):
    """One deterministic-policy episode; returns (Scores-ready counts list,
    total reward)."""
    obs = env.reset(params=params)
    per_step = []
    total_reward = 0.0
    while True:
        action = actor.act(obs.vector(), deterministic=True)
        res = env.step(action)
        per_step.append(res.info["counts"])
        total_reward += res.reward.total
        obs = res.observation
        if res.done:
            break
    return per_step, total_reward


class SACTrainer:
    def __init__(self, env, dr_config: DRConfig, config: TrainerConfig,
                 eval_env=None, log_dir=None):
        config.validate()
        dr_config.validate()
        self.env = env
        if eval_env is None:
            # a separate instance so mid-episode evaluation cannot disturb
            # the training episode
            from ..env import PianoEnv
            eval_env = PianoEnv(env.timeline, env.params,
                                reward_config=env.reward_config)
        self.eval_env = eval_env
        self.dr = DRSampler(dr_config)
        self.config = config
        self.log_dir = log_dir
        obs_dim, act_dim = 356, 13
        seeds = np.random.SeedSequence(config.seed).spawn(6)
        net_seeds = [int(s.generate_state(1)[0]) for s in seeds[:2]]
        self.actor = ActorNet(obs_dim, act_dim, config.hidden,
                              seed=net_seeds[0])
        self.critics = [CriticNet(obs_dim, act_dim, config.hidden,
                                  dropout=config.dropout,
                                  seed=net_seeds[1] + i)
                        for i in range(2)]
        self.targets = [copy.deepcopy(c) for c in self.critics]
        self.log_alpha = np.zeros(1, dtype=np.float32)
        self.opt_actor = Adam(self.actor.params, lr=config.lr)
        self.opt_critics = [Adam(c.params, lr=config.lr) for c in self.critics]
        self.opt_alpha = Adam([self.log_alpha], lr=config.lr)
        self.act_rng = np.random.default_rng(seeds[2])
        self.batch_rng = np.random.default_rng(seeds[3])
        self.eps_rng = np.random.default_rng(seeds[4])
        self.mask_rng = np.random.default_rng(seeds[5])
        self.buffer = ReplayBuffer(config.buffer_capacity, obs_dim, act_dim)
        self.step_count = 0
        self.episode_count = 0
        self.curve = []          # learning-curve rows
        self.best_eval_f1 = -1.0
        self.best_arrays = None
        self.last_actor_loss = float("nan")
        self.last_critic_loss = float("nan")

    # -- checkpoint plumbing --------------------------------------------

    def _snapshot_arrays(self):
        arrays = {}
        for i, p in enumerate(self.actor.params):
            arrays[f"actor.{i}"] = p.copy()
        for c_i, c in enumerate(self.critics):
            for i, p in enumerate(c.params):
                arrays[f"critic{c_i}.{i}"] = p.copy()
        for c_i, c in enumerate(self.targets):
            for i, p in enumerate(c.params):
                arrays[f"target{c_i}.{i}"] = p.copy()
        arrays["log_alpha"] = self.log_alpha.copy()
        return arrays

    def make_checkpoint(self, arrays=None, config_hash="") -> Checkpoint:
        meta = {"hidden": list(self.config.hidden), "obs_dim": 356,
                "act_dim": 13, "dropout": self.config.dropout}
        return Checkpoint(arrays=arrays or self._snapshot_arrays(),
                          train_step=self.step_count,
                          config_hash=config_hash, meta=meta)

    # -- updates ----------------------------------------------------------

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    def _update_critics(self):
        cfg = self.config
        losses = []
        for _ in range(cfg.utd):
            batch = self.buffer.sample(cfg.batch_size, self.batch_rng)
            eps = self.eps_rng.standard_normal(
                (cfg.batch_size, 13)).astype(np.float32)
            next_a, next_logp, _ = self.actor.sample(batch["next_obs"], eps)
            qts = [t.forward(batch["next_obs"], next_a, masks=None)[0]
                   for t in self.targets]
            qt = np.minimum(qts[0], qts[1]) - self.alpha * next_logp
            y = batch["reward"] + cfg.gamma * (1.0 - batch["done"]) * qt
            for c, opt, tgt in zip(self.critics, self.opt_critics, self.targets):
                masks = c.make_masks(cfg.batch_size, self.mask_rng)
                loss, grads = critic_loss_and_grads(
                    c, batch["obs"], batch["action"], y, masks)
                if not math.isfinite(loss):
                    raise TrainingDiverged(
                        f"critic loss {loss} at step {self.step_count}")
                opt.step(grads)
                for pt, p in zip(tgt.params, c.params):
                    pt *= 1.0 - cfg.polyak_tau
                    pt += cfg.polyak_tau * p
                losses.append(loss)
        self.last_critic_loss = float(np.mean(losses))

    def _update_actor(self):
        cfg = self.config
        batch = self.buffer.sample(cfg.batch_size, self.batch_rng)
        eps = self.eps_rng.standard_normal(
            (cfg.batch_size, 13)).astype(np.float32)
        loss, grads, logp = actor_loss_and_grads(
            self.actor, self.critics, batch["obs"], eps, self.alpha)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"actor loss {loss} at step {self.step_count}")
        self.opt_actor.step(grads)
        self.last_actor_loss = loss
        # temperature: minimize -alpha * (logp + target_entropy)
        g_alpha = -self.alpha * float(np.mean(logp) + cfg.target_entropy)
        self.opt_alpha.step([np.array([g_alpha], dtype=np.float32)])

    # -- evaluation -------------------------------------------------------

    def evaluate(self) -> metrics.Scores:
        cfg = self.config
        nominal = self.dr.config.nominal
        merged = []
        for _ in range(cfg.eval_episodes):
            per_step, _ = rollout_deterministic(self.eval_env, self.actor,
                                                nominal)
            merged.extend(per_step)
        return metrics.score_episode(merged, cfg.averaging)

    def _record_eval(self):
        scores = self.evaluate()
        self.curve.append({
            "step": self.step_count,
            "eval_precision": scores.precision,
            "eval_recall": scores.recall,
            "eval_f1": scores.f1,
            "actor_loss": self.last_actor_loss,
            "critic_loss": self.last_critic_loss,
            "temperature": self.alpha,
        })
        if scores.f1 > self.best_eval_f1:
            self.best_eval_f1 = scores.f1
            self.best_arrays = self._snapshot_arrays()
        return scores

    def write_curve(self, path):
        cols = ["step", "eval_precision", "eval_recall", "eval_f1",
                "actor_loss", "critic_loss", "temperature"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for row in self.curve:
                w.writerow(row)

    # -- main loop ---------------------------------------------------------

    def _budget_done(self) -> bool:
        if self.config.budget_unit == "steps":
            return self.step_count >= self.config.total_steps
        return self.episode_count >= self.config.total_steps

    def _step_budget_done(self) -> bool:
        # an episode budget always finishes the episode it started
        return (self.config.budget_unit == "steps"
                and self.step_count >= self.config.total_steps)

    def train(self, config_hash="") -> Checkpoint:
        """Run to budget (or early stop); returns the best-eval checkpoint.

        On divergence the best checkpoint so far is saved before the
        exception propagates.
        """
        cfg = self.config
        try:
            while not self._budget_done():
                params = self.dr.sample(self.episode_count)
                obs = self.env.reset(params=params)
                self.episode_count += 1
                done = False
                while not done and not self._step_budget_done():
                    if self.step_count < cfg.warmup_steps:
                        action = self.act_rng.uniform(-1.0, 1.0, 13)
                    else:
                        action = self.actor.act(obs.vector(),
                                                deterministic=False,
                                                rng=self.act_rng)
                    res = self.env.step(action)
                    self.buffer.store(obs.vector(), action, res.reward.total,
                                      res.observation.vector(), res.done)
                    obs = res.observation
                    done = res.done
                    self.step_count += 1
                    if self.step_count >= cfg.warmup_steps:
                        self._update_critics()
                        self._update_actor()
                    if self.step_count % cfg.eval_interval == 0:
                        scores = self._record_eval()
                        if (cfg.early_stop_f1 is not None
                                and scores.f1 >= cfg.early_stop_f1):
                            return self._finish(config_hash)
            return self._finish(config_hash)
        except TrainingDiverged:
            self._finish(config_hash)
            raise

    def _finish(self, config_hash) -> Checkpoint:
        if self.best_arrays is None:
            self._record_eval()
        ckpt = self.make_checkpoint(arrays=self.best_arrays,
                                    config_hash=config_hash)
        if self.log_dir:
            os.makedirs(self.log_dir, exist_ok=True)
            save_checkpoint(ckpt, os.path.join(self.log_dir, "best.ckpt"))
            final = self.make_checkpoint(config_hash=config_hash)
            save_checkpoint(final, os.path.join(self.log_dir, "final.ckpt"))
            self.write_curve(os.path.join(self.log_dir, "learning_curve.csv"))
        return ckpt


def actor_from_checkpoint(ckpt: Checkpoint) -> ActorNet:
    """Rebuild just the policy network from a checkpoint."""
    hidden = tuple(ckpt.meta.get("hidden", (256, 256, 256)))
    actor = ActorNet(ckpt.meta.get("obs_dim", 356),
                     ckpt.meta.get("act_dim", 13), hidden)
    n = len(actor.params)
    for i in range(n):
        src = ckpt.arrays[f"actor.{i}"]
        if actor.params[i].shape != src.shape:
            raise ConfigError(
                f"checkpoint actor shape {src.shape} does not match "
                f"{actor.params[i].shape} at index {i}")
        actor.params[i] = src.astype(actor.dtype).copy()
    return actor
