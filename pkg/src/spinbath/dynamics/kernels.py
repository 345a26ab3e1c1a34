"""Inner loops: telegraph-phase Monte Carlo and Dormand-Prince stepping.

Both kernels are plain numba-compatible functions; see ``spinbath._accel``
for how the compiled or fallback path is chosen.
"""
from __future__ import annotations

import numpy as np

from .._accel import jitable, kernel

# status codes returned by the integrator kernel
OK = 0
STEP_UNDERFLOW = 1
MAX_STEPS = 2


# -- random-telegraph phase sampling ----------------------------------------


def _telegraph_numpy(times, weights, rates, p_up, init_up, w0, n_traj, seed):
    """Vectorized-per-trajectory fallback with the same draw order as the kernel."""
    n_t = times.shape[0]
    t_end = times[-1]
    sum_c = np.zeros(n_t)
    sum_s = np.zeros(n_t)
    sq_c = np.zeros(n_t)
    sq_s = np.zeros(n_t)
    base = w0 * times
    for i in range(n_traj):
        rs = np.random.RandomState((seed ^ i) & 0xFFFFFFFF)
        phase = base.copy()
        for k in range(weights.shape[0]):
            z = 1.0 if rs.random_sample() < init_up[k] else -1.0
            knots = [0.0]
            cum = [0.0]
            if rates[k] > 0.0:
                scale = 1.0 / rates[k]
                t_next = rs.exponential(scale)
                while t_next <= t_end:
                    cum.append(cum[-1] + z * (t_next - knots[-1]))
                    knots.append(t_next)
                    z = 1.0 if rs.random_sample() < p_up else -1.0
                    t_next += rs.exponential(scale)
            if t_end > knots[-1]:
                cum.append(cum[-1] + z * (t_end - knots[-1]))
                knots.append(t_end)
            if len(knots) == 1:
                continue
            phase += weights[k] * np.interp(times, knots, cum)
        c = np.cos(phase)
        s = np.sin(phase)
        sum_c += c
        sum_s += s
        sq_c += c * c
        sq_s += s * s
    return sum_c, sum_s, sq_c, sq_s


@kernel(fallback=_telegraph_numpy)
def telegraph_phase_sums(times, weights, rates, p_up, init_up, w0, n_traj, seed):
    """Accumulate ``cos`` and ``sin`` of the random phase over trajectories.

    The phase of trajectory ``i`` at time ``t`` is
    ``w0 t + sum_k weights[k] * int_0^t z_k(t') dt'`` where each ``z_k`` is a
    +/-1 process reset at Poisson times of rate ``rates[k]`` to +1 with
    probability ``p_up``; ``init_up[k]`` is the probability that ``z_k``
    starts at +1. Trajectory ``i`` draws from a Mersenne Twister
    seeded with ``seed ^ i``, so results do not depend on evaluation order.
    Returns sums of cos, sin and their squares per time point.
    """
    n_t = times.shape[0]
    n_a = weights.shape[0]
    sum_c = np.zeros(n_t)
    sum_s = np.zeros(n_t)
    sq_c = np.zeros(n_t)
    sq_s = np.zeros(n_t)
    phase = np.empty(n_t)
    for i in range(n_traj):
        np.random.seed((seed ^ i) & 0xFFFFFFFF)
        for g in range(n_t):
            phase[g] = w0 * times[g]
        for k in range(n_a):
            z = 1.0 if np.random.random() < init_up[k] else -1.0
            cur = 0.0
            cum = 0.0
            rate = rates[k]
            if rate > 0.0:
                scale = 1.0 / rate
                t_next = np.random.exponential(scale)
            else:
                scale = 0.0
                t_next = np.inf
            w = weights[k]
            for g in range(n_t):
                tg = times[g]
                while t_next <= tg:
                    cum += z * (t_next - cur)
                    cur = t_next
                    z = 1.0 if np.random.random() < p_up else -1.0
                    t_next += np.random.exponential(scale)
                phase[g] += w * (cum + z * (tg - cur))
        for g in range(n_t):
            c = np.cos(phase[g])
            s = np.sin(phase[g])
            sum_c[g] += c
            sum_s[g] += s
            sq_c[g] += c * c
            sq_s[g] += s * s
    return sum_c, sum_s, sq_c, sq_s


# -- Dormand-Prince 5(4) for constant-rate Lindblad generators ---------------

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = np.array(
    [
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [1 / 5, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3 / 40, 9 / 40, 0.0, 0.0, 0.0, 0.0],
        [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0, 0.0],
        [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0, 0.0],
        [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0.0],
        [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
    ]
)
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
DP_A = _A
DP_B5 = _B5
DP_E = _B5 - _B4


@jitable
def lindblad_rhs(heff, heff_dag, jumps, jumps_dag, gammas, rho):
    """``-i(Heff rho - rho Heff^dag) + sum_k g_k A_k rho A_k^dag``."""
    out = -1j * (heff @ rho - rho @ heff_dag)
    for k in range(jumps.shape[0]):
        out += gammas[k] * (jumps[k] @ rho @ jumps_dag[k])
    return out


@kernel
def dp45_constant(heff, heff_dag, jumps, jumps_dag, gammas, rho0, times, atol, rtol, h0, max_steps, trace_tol):
    """Integrate a constant Lindblad generator, stopping exactly on ``times``.

    The error test is per unit step: a step of length ``h`` may contribute
    ``h / span`` of the tolerance, so the accumulated error over the whole
    run stays at the tolerance level. Accepted steps are symmetrized; a step
    whose trace drifts by more than ``trace_tol`` is rejected and retried
    with half the step. Returns ``(states, n_steps, status)``.
    """
    d = rho0.shape[0]
    n_t = times.shape[0]
    out = np.zeros((n_t, d, d), dtype=np.complex128)
    rho = rho0.copy()
    t = times[0]
    out[0] = rho
    h = h0
    steps = 0
    k = np.zeros((7, d, d), dtype=np.complex128)
    span = max(abs(times[-1] - times[0]), 1e-300)
    h_min = 1e-14 * span
    for g in range(1, n_t):
        target = times[g]
        while t < target:
            if steps >= max_steps:
                return out, steps, MAX_STEPS
            last = False
            if t + h >= target:
                h_try = target - t
                last = True
            else:
                h_try = h
            if h_try < h_min and not last:
                return out, steps, STEP_UNDERFLOW
            k[0] = lindblad_rhs(heff, heff_dag, jumps, jumps_dag, gammas, rho)
            for s in range(1, 7):
                acc = rho.copy()
                for j in range(s):
                    if DP_A[s, j] != 0.0:
                        acc += h_try * DP_A[s, j] * k[j]
                k[s] = lindblad_rhs(heff, heff_dag, jumps, jumps_dag, gammas, acc)
            new = rho.copy()
            err = np.zeros((d, d), dtype=np.complex128)
            for s in range(7):
                if DP_B5[s] != 0.0:
                    new += h_try * DP_B5[s] * k[s]
                err += h_try * DP_E[s] * k[s]
            scale = atol + rtol * np.maximum(np.abs(rho), np.abs(new))
            e = np.max(np.abs(err) / scale) * (span / h_try)
            steps += 1
            drift = abs(np.trace(new) - np.trace(rho))
            if e <= 1.0 and drift <= trace_tol:
                rho = 0.5 * (new + new.conj().T)
                t = target if last else t + h_try
                fac = 5.0 if e == 0.0 else min(5.0, max(0.2, 0.9 * e ** -0.25))
                if not last:
                    h = h_try * fac
                else:
                    h = max(h, h_try * fac)
            else:
                if drift > trace_tol and e <= 1.0:
                    h = 0.5 * h_try
                else:
                    h = h_try * max(0.2, 0.9 * e ** -0.25)
                if h < h_min:
                    return out, steps, STEP_UNDERFLOW
        out[g] = rho
    return out, steps, OK
