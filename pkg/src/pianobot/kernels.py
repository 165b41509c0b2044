"""Inner integration loop of the plant, jitted with numba when available.

The same Python function body serves both paths: by default it is compiled
with ``numba.njit``; setting the environment variable ``PIANOBOT_NUMBA=0``
(or numba failing to import) selects the uncompiled function object, which
runs the identical arithmetic in the interpreter. ``pianobot.bench`` compares
the two paths.
"""

import math
import os

import numpy as np


def _plant_kernel(q, qdot, mu, mu_dot, tau_out,
                  target, stiffness, damping, inv_inertia, lo, hi,
                  key_top, key_halfwidth,
                  n_sub, dt, key_pitch, abd_reach, link1, link2,
                  rest_clearance, key_travel, piano_dz,
                  contact_stiffness, press_ratio, contact_decay, free_decay,
                  fric_dv_slider, fric_dv_side, max_drive):
    """Advance the plant by ``n_sub`` semi-implicit Euler substeps, in place.

    Friction uses the contact normal forces of the previous substep (one
    substep of lag keeps the update explicit). Key depression follows a
    piecewise-exact exponential: ``press_ratio``, ``contact_decay`` and
    ``free_decay`` are precomputed from the spring constants so the loop
    stays free of transcendentals. Returns 0, or 1 if the state went
    non-finite.
    """
    n_keys = mu.shape[0]
    drive = np.zeros(n_keys)
    fn = np.zeros(4)
    for _ in range(n_sub):
        # servo torques and velocity update
        for j in range(13):
            t_j = stiffness[j] * (target[j] - q[j]) - damping[j] * qdot[j]
            tau_out[j] = t_j
            qdot[j] += dt * t_j * inv_inertia[j]
        # stick/slip friction on the lateral DOFs, impulse-limited
        fn_total = fn[0] + fn[1] + fn[2] + fn[3]
        if fn_total > 0.0:
            cap = fric_dv_slider * fn_total
            v = qdot[12]
            if v > cap:
                qdot[12] = v - cap
            elif v < -cap:
                qdot[12] = v + cap
            else:
                qdot[12] = 0.0
            for f in range(4):
                if fn[f] > 0.0:
                    cap = fric_dv_side * fn[f]
                    w = qdot[3 * f]
                    if w > cap:
                        qdot[3 * f] = w - cap
                    elif w < -cap:
                        qdot[3 * f] = w + cap
                    else:
                        qdot[3 * f] = 0.0
        # integrate positions, clamp to joint limits
        for j in range(13):
            nq = q[j] + dt * qdot[j]
            if nq < lo[j]:
                nq = lo[j]
                if qdot[j] < 0.0:
                    qdot[j] = 0.0
            elif nq > hi[j]:
                nq = hi[j]
                if qdot[j] > 0.0:
                    qdot[j] = 0.0
            q[j] = nq
        # fingertip contact at the new pose
        for k in range(n_keys):
            drive[k] = 0.0
        for f in range(4):
            x = key_pitch * f + q[12] + abd_reach * math.sin(q[3 * f])
            prox = q[3 * f + 1]
            z = (rest_clearance - link1 * math.sin(prox)
                 - link2 * math.sin(prox + q[3 * f + 2]))
            fn[f] = 0.0
            k = int(math.floor(x / key_pitch + 0.5))
            if 0 <= k < n_keys and abs(x - key_pitch * k) <= key_halfwidth[k]:
                depth = (piano_dz + key_top[k] - z) / key_travel
                if depth > 0.0:
                    if depth > max_drive:
                        depth = max_drive
                    if depth > drive[k]:
                        drive[k] = depth
                    overlap = depth - mu[k]
                    if overlap > 0.0:
                        fn[f] = contact_stiffness * overlap
        # key depression update
        for k in range(n_keys):
            m = mu[k]
            d = drive[k]
            if d > m:
                m_ss = d * press_ratio
                nm = m_ss + (m - m_ss) * contact_decay
            else:
                nm = m * free_decay
                if nm < 1e-15:
                    nm = 0.0
            if nm > 1.0:
                nm = 1.0
            mu_dot[k] = (nm - m) / dt
            mu[k] = nm
    fault = 0
    for j in range(13):
        if not (math.isfinite(q[j]) and math.isfinite(qdot[j])):
            fault = 1
    for k in range(n_keys):
        if not math.isfinite(mu[k]):
            fault = 1
    return fault


def _env_wants_numba() -> bool:
    flag = os.environ.get("PIANOBOT_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "off", "no")


_jitted = None


def get_kernel(use_numba: bool):
    """Return the jitted kernel or the pure-Python one."""
    global _jitted
    if not use_numba:
        return _plant_kernel
    if _jitted is None:
        try:
            import numba
        except ImportError:
            return _plant_kernel
        _jitted = numba.njit(cache=True)(_plant_kernel)
    return _jitted


NUMBA_DEFAULT = _env_wants_numba()


def default_kernel():
    return get_kernel(NUMBA_DEFAULT)
