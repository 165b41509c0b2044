"""Cross-entropy-method baseline: fits a piecewise-constant open-loop action
sequence to one song. It knows nothing about observations, so when it can
press a key and the learner cannot, the fault is in the learner, and when
neither can the fault is in the environment."""

from __future__ import annotations

import numpy as np

from .. import metrics


def _episode_score(env, params, plan, averaging=metrics.MICRO):
    env.reset(params=params)
    per_step = []
    total_reward = 0.0
    t = 0
    n = len(env.timeline)
    seg_len = max(1, int(np.ceil(n / len(plan))))
    done = False
    while not done:
        action = plan[min(t // seg_len, len(plan) - 1)]
        res = env.step(action)
        per_step.append(res.info["counts"])
        total_reward += res.reward.total
        done = res.done
        t += 1
    scores = metrics.score_episode(per_step, averaging)
    return scores.f1, total_reward


def cem_optimize(env, params, n_segments=1, population=64, elites=8,
                 iterations=15, init_std=0.5, min_std=0.05, seed=0):
    """Returns (best_plan, best_f1, best_reward).

    best_plan has shape (n_segments, 13); each row is a normalized action
    held for an equal share of the song.
    """
    rng = np.random.default_rng(seed)
    mean = np.zeros((n_segments, 13))
    std = np.full((n_segments, 13), init_std)
    best = (None, -1.0, -np.inf)
    for _ in range(iterations):
        pop = rng.normal(mean, std, size=(population, n_segments, 13))
        pop = np.clip(pop, -1.0, 1.0)
        ranked = []
        for cand in pop:
            f1, reward = _episode_score(env, params, cand)
            ranked.append((f1, reward, cand))
            if (f1, reward) > (best[1], best[2]):
                best = (cand.copy(), f1, reward)
        ranked.sort(key=lambda r: (r[0], r[1]), reverse=True)
        elite = np.stack([r[2] for r in ranked[:elites]])
        mean = elite.mean(axis=0)
        std = np.maximum(elite.std(axis=0), min_std)
    return best
