"""Monte-Carlo wavefunction engine over the full 2^N emitter state space.

Basis states are bitmasks (bit i set = emitter i excited). The effective
Hamiltonian conserves the excitation number, so every quantity is stored per
excitation sector and a jump always moves a trajectory one sector down.

Jump operators come from the eigen-decomposition of the decay matrix,
``L_k = sqrt(lambda_k) sum_i v_ik sigma_i^-``. Without coherent coupling the
no-jump evolution is ``exp(-M t / 2)`` with ``M = sum_ij Gamma_ij s+_i s-_j``
and waiting times are drawn exactly from its eigen-decomposition. With
coupling the no-jump propagator is applied on a fixed time grid.
"""
from __future__ import annotations

import math
from itertools import combinations

import numpy as np
from scipy.linalg import expm

from ..emitters import DecayMatrix
from ..errors import CapacityError
from .config import PulseTrainConfig, block_ranges, block_rng
from .events import EmissionEvents

MAX_EMITTERS = 12
TRAJECTORY_STREAM = 2
# cap on floats held in the per-chunk jump-amplitude tensor
_CHUNK_FLOATS = 4_000_000


class _Sector:
    """Basis and operators restricted to one excitation number."""

    def __init__(self, states):
        self.states = np.asarray(states, dtype=np.int64)
        self.index = {int(s): i for i, s in enumerate(self.states)}
        self.dim = len(self.states)


class CollectiveOperators:
    """Sector-resolved no-jump generators and lowering maps for a decay matrix."""

    def __init__(self, matrix: DecayMatrix):
        n = matrix.n
        self.n = n
        gamma = matrix.gamma
        lam, vec = matrix.eigen()
        keep = lam > 1e-12 * matrix.gamma0 * n
        self.jump_rates = lam[keep]
        # rows: jump operator k, columns: emitter i
        self.jump_coef = (np.sqrt(lam[keep])[:, None] * vec[:, keep].T)
        self.jump_ids = np.flatnonzero(keep)
        self.coupling = matrix.coupling
        self.max_rate = float(lam.max())

        self.sectors = []
        for k in range(n + 1):
            states = sorted(sum(1 << i for i in c) for c in combinations(range(n), k))
            self.sectors.append(_Sector(states))

        # lowering maps: sigma_i^- takes sector k (src rows) to sector k-1 (dst rows)
        self.lower = [None]
        for k in range(1, n + 1):
            hi, lo = self.sectors[k], self.sectors[k - 1]
            maps = []
            for i in range(n):
                bit = 1 << i
                src = np.flatnonzero(hi.states & bit)
                dst = np.array([lo.index[int(s) ^ bit] for s in hi.states[src]], dtype=np.int64)
                maps.append((src, dst))
            self.lower.append(maps)

        self.decay_gen = [self._sector_operator(k, gamma) for k in range(n + 1)]
        self.decay_eig = [np.linalg.eigh(m) for m in self.decay_gen]
        self.hamiltonian = None
        if self.coupling is not None and np.any(self.coupling):
            self.hamiltonian = [self._sector_operator(k, self.coupling) for k in range(n + 1)]

    def _sector_operator(self, k, mat):
        """Matrix of sum_ij mat_ij s+_i s-_j in sector k."""
        sec = self.sectors[k]
        out = np.zeros((sec.dim, sec.dim))
        for col, s in enumerate(sec.states.tolist()):
            for j in range(self.n):
                if not s >> j & 1:
                    continue
                lowered = s ^ (1 << j)
                for i in range(self.n):
                    if lowered >> i & 1:
                        continue
                    out[sec.index[lowered | (1 << i)], col] += mat[i, j]
        return out

    def jump_amplitudes(self, k, psi):
        """L_m psi for every jump operator m; psi has shape (batch, dim_k)."""
        lo_dim = self.sectors[k - 1].dim
        out = np.zeros((psi.shape[0], len(self.jump_rates), lo_dim), dtype=psi.dtype)
        for i, (src, dst) in enumerate(self.lower[k]):
            lowered = np.zeros((psi.shape[0], lo_dim), dtype=psi.dtype)
            lowered[:, dst] = psi[:, src]
            out += self.jump_coef[:, i][None, :, None] * lowered[:, None, :]
        return out


def _solve_waiting_times(weights, mu, u):
    """Solve sum_n w_n exp(-mu_n t) = u for t, row-wise, by Newton on the log.

    The log of the survival function is convex and decreasing, so Newton from
    t = 0 approaches the root monotonically from below.
    """
    t = np.zeros(len(u))
    log_u = np.log(u)
    active = np.ones(len(u), dtype=bool)
    for _ in range(200):
        if not active.any():
            break
        w = weights[active]
        e = w * np.exp(-mu[None, :] * t[active, None])
        s = e.sum(axis=1)
        f = np.log(s) - log_u[active]
        fp = -(e * mu[None, :]).sum(axis=1) / s
        step = f / fp
        t[active] -= step
        done = np.abs(step) <= 1e-12 * np.maximum(1.0, t[active])
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return t


def _choose(probs, u):
    """Row-wise categorical draw from unnormalized ``probs`` using uniforms ``u``."""
    cdf = np.cumsum(probs, axis=1)
    cdf /= cdf[:, -1:]
    return np.minimum((cdf < u[:, None]).sum(axis=1), probs.shape[1] - 1)


def simulate_trajectories(
    matrix: DecayMatrix,
    pulses: PulseTrainConfig,
    seed: int,
    pulse_slice=None,
    operators: CollectiveOperators | None = None,
) -> EmissionEvents:
    """Quantum-jump record for every pulse, starting from the excited product state.

    With ``excitation_probability < 1`` each emitter is independently excited
    at the pulse. Trajectories trapped in a dark state emit fewer than N
    photons; with a full-rank decay matrix every excited emitter radiates.
    """
    n = matrix.n
    if n > MAX_EMITTERS:
        raise CapacityError(
            f"trajectory engine supports at most {MAX_EMITTERS} emitters (state dimension "
            f"{2**MAX_EMITTERS}), got {n}"
        )
    matrix.check_psd()
    ops = operators or CollectiveOperators(matrix)
    period_ns = pulses.period_ps / 1000.0

    chunks = []
    for block, lo, hi in block_ranges(pulses.n_pulses, pulse_slice):
        rng = block_rng(seed, block, TRAJECTORY_STREAM)
        chunks.append(_run_block(ops, rng, lo, hi, pulses.excitation_probability, period_ns))

    diag = np.diag(matrix.gamma)
    warnings = pulses.check_lifetime(1.0 / float(diag.min()))
    return EmissionEvents.collect(chunks, pulses.period_ps, pulses.n_pulses, warnings)


def _run_block(ops, rng, lo, hi, p_exc, period_ns):
    n = ops.n
    count = hi - lo
    full = (1 << n) - 1
    if p_exc < 1.0:
        bits = rng.random((count, n)) < p_exc
        masks = (bits * (1 << np.arange(n))).sum(axis=1)
    else:
        masks = np.full(count, full, dtype=np.int64)
    pulse_of = np.arange(lo, hi)
    popcount = np.array([bin(int(m)).count("1") for m in masks]) if p_exc < 1.0 else np.full(count, n)

    dtype = complex if ops.hamiltonian is not None else float
    out_pulse, out_time, out_branch = [], [], []

    # live trajectories per sector: (pulse ids, elapsed ns, state rows)
    pending = {k: None for k in range(n + 1)}
    for k in range(1, n + 1):
        sel = np.flatnonzero(popcount == k)
        if sel.size:
            sec = ops.sectors[k]
            psi = np.zeros((sel.size, sec.dim), dtype=dtype)
            psi[np.arange(sel.size), [sec.index[int(m)] for m in masks[sel]]] = 1.0
            pending[k] = (pulse_of[sel], np.zeros(sel.size), psi)

    for k in range(n, 0, -1):
        group = pending[k]
        if group is None:
            continue
        pulse, elapsed, psi = group
        u_wait = rng.random(len(pulse))
        u_jump = rng.random(len(pulse))
        if ops.hamiltonian is None:
            jumped, dt, psi = _no_jump_exact(ops, k, psi, u_wait)
        else:
            jumped, dt, psi = _no_jump_stepped(ops, k, psi, u_wait, period_ns - elapsed)
        pulse, elapsed, psi, u_jump = pulse[jumped], elapsed[jumped] + dt[jumped], psi[jumped], u_jump[jumped]
        if not len(pulse):
            continue

        new_psi = np.empty((len(pulse), ops.sectors[k - 1].dim), dtype=dtype)
        branch = np.empty(len(pulse), dtype=np.int64)
        per = max(1, _CHUNK_FLOATS // (len(ops.jump_rates) * ops.sectors[k - 1].dim))
        for a in range(0, len(pulse), per):
            amps = ops.jump_amplitudes(k, psi[a : a + per])
            probs = (np.abs(amps) ** 2).sum(axis=2)
            pick = _choose(probs, u_jump[a : a + per])
            chosen = amps[np.arange(len(pick)), pick]
            new_psi[a : a + per] = chosen / np.linalg.norm(chosen, axis=1, keepdims=True)
            branch[a : a + per] = pick
        out_pulse.append(pulse)
        out_time.append(elapsed.copy())
        out_branch.append(ops.jump_ids[branch])

        if pending[k - 1] is None:
            pending[k - 1] = (pulse, elapsed, new_psi)
        else:
            p0, e0, s0 = pending[k - 1]
            pending[k - 1] = (
                np.concatenate([p0, pulse]),
                np.concatenate([e0, elapsed]),
                np.concatenate([s0, new_psi]),
            )

    if not out_pulse:
        return np.empty(0, np.int64), np.empty(0), np.empty(0, np.int64)
    return np.concatenate(out_pulse), np.concatenate(out_time), np.concatenate(out_branch)


def _no_jump_exact(ops, k, psi, u):
    """Exact jump times for Gamma-only dynamics; returns (jumped, dt, psi(dt) normalized)."""
    mu, vec = ops.decay_eig[k]
    mu = np.clip(mu, 0.0, None)
    coef = psi @ vec
    weights = np.abs(coef) ** 2
    weights /= weights.sum(axis=1, keepdims=True)
    dark = mu <= 1e-12 * max(ops.max_rate, 1e-300) * ops.n
    trapped = weights[:, dark].sum(axis=1)
    jumped = u > trapped * (1 + 1e-12)
    dt = np.zeros(len(u))
    if jumped.any():
        dt[jumped] = _solve_waiting_times(weights[jumped], mu, u[jumped])
    evolved = (coef * np.exp(-0.5 * mu[None, :] * dt[:, None])) @ vec.T
    norms = np.linalg.norm(evolved, axis=1, keepdims=True)
    evolved = np.where(norms > 0, evolved / np.where(norms > 0, norms, 1.0), evolved)
    return jumped, dt, evolved


def _no_jump_stepped(ops, k, psi, u, horizon_ns):
    """Fixed-step no-jump evolution under H - iM/2 until the norm drops below ``u``."""
    dt_step = 0.01 / max(ops.max_rate, 1e-300)
    heff = ops.hamiltonian[k] - 0.5j * ops.decay_gen[k]
    prop = expm(-1j * heff * dt_step).T
    psi = psi.astype(complex, copy=True)
    dt = np.zeros(len(u))
    jumped = np.zeros(len(u), dtype=bool)
    live = np.flatnonzero(horizon_ns > 0)
    max_steps = int(math.ceil(float(np.max(horizon_ns, initial=0.0)) / dt_step))
    for step in range(1, max_steps + 1):
        if not live.size:
            break
        psi[live] = psi[live] @ prop
        norm2 = (np.abs(psi[live]) ** 2).sum(axis=1)
        hit = norm2 <= u[live]
        if hit.any():
            idx = live[hit]
            jumped[idx] = True
            dt[idx] = step * dt_step
        expired = step * dt_step >= horizon_ns[live]
        live = live[~hit & ~expired]
    norms = np.linalg.norm(psi, axis=1, keepdims=True)
    psi = psi / np.where(norms > 0, norms, 1.0)
    return jumped, dt, psi
