"""Exact-diagonalization and exact-evolution references."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit
from scipy.sparse.linalg import LinearOperator, eigsh

from .circuits import TrotterEvolver, phi2_expectations
from .fitting import fit_exponential
from .lattice import (ModelParams, WavepacketSpec, build_hamiltonian, field_flip, lattice_momenta,
                      momentum_envelope, single_particle_state, translate, wavepacket_amplitudes)


@dataclass
class SpectralSummary:
    energies: np.ndarray
    states: np.ndarray  # columns
    residuals: np.ndarray

    @property
    def E0(self):
        return float(self.energies[0])

    @property
    def gap(self):
        return float(self.energies[1] - self.energies[0])

    @property
    def ground(self):
        return self.states[:, 0]


def lowest_states(params: ModelParams, k=2, tol=1e-12, maxiter=5000) -> SpectralSummary:
    """Lowest ``k`` eigenpairs of the full Hamiltonian (dense below 2^12, Lanczos above)."""
    ham = build_hamiltonian(params)
    if params.dim <= 2 ** 12:
        h = ham.to_sparse().toarray()
        w, v = np.linalg.eigh(h)
        w, v = w[:k], v[:, :k]
    else:
        op = ham.linear_operator(dtype=float)
        # random start: a symmetric vector would never reach the odd-parity sector
        v0 = np.random.default_rng(0).normal(size=params.dim)
        w, v = eigsh(op, k=k, which="SA", tol=tol, maxiter=maxiter, v0=v0, ncv=max(2 * k + 1, 20))
        order = np.argsort(w)
        w, v = w[order], v[:, order]
    res = np.array([np.linalg.norm(ham.matvec(v[:, i]) - w[i] * v[:, i]) for i in range(v.shape[1])])
    return SpectralSummary(np.asarray(w), v, res)


def ground_state(params: ModelParams) -> SpectralSummary:
    return lowest_states(params, k=2)


@dataclass
class CorrelationLengthResult:
    L_values: list
    gaps: list
    xi_L: list
    xi_inf: float
    fit: object


def correlation_length(m, lam, n_q, phi_max, L_values=(2, 3, 4, 5, 6, 7, 8, 9, 10)):
    """1/gap for each L, extrapolated with xi(L) = xi_inf + a r^L."""
    L_values = [int(L) for L in L_values]
    if len(L_values) < 3:
        raise ValueError("need at least three system sizes")
    gaps = []
    for L in L_values:
        s = lowest_states(ModelParams(L, n_q, m, lam, phi_max), k=2)
        gaps.append(s.gap)
    xi = [1.0 / g for g in gaps]
    fit = fit_exponential(L_values, xi)
    return CorrelationLengthResult(L_values, gaps, xi, fit.y_inf, fit)


# ----------------------------------------------------------------------------
# momentum sectors
# ----------------------------------------------------------------------------

def _sector_projector(params: ModelParams, k, parity):
    L, N = params.L, params.n_levels

    def proj(v):
        out = np.zeros_like(v, dtype=complex)
        cur = v.astype(complex)
        for r in range(L):
            out += np.exp(1j * k * r) * cur
            cur = translate(cur, L, N, 1)
        out /= L
        if parity is not None:
            out = 0.5 * (out + parity * field_flip(out, L, N))
        return out

    return proj


def sector_states(params: ModelParams, k, n_states=3, parity=-1, tol=1e-11):
    """Lowest eigenpairs of H restricted to translation eigenvalue e^{-ik} (and field parity)."""
    ham = build_hamiltonian(params)
    proj = _sector_projector(params, k, parity)
    shift = float(ham.field_diagonal().max() + params.L * np.abs(np.linalg.eigvalsh(ham.pi2_site)).max() + 1.0)

    def mv(v):
        p = proj(v)
        return proj(ham.matvec(p) - shift * p)

    d = params.dim
    op = LinearOperator((d, d), matvec=mv, rmatvec=mv, dtype=complex)
    rng = np.random.default_rng(0)
    v0 = proj(rng.normal(size=d) + 1j * rng.normal(size=d))
    w, v = eigsh(op, k=n_states, which="SA", tol=tol, v0=v0, ncv=max(4 * n_states, 24), maxiter=10000)
    order = np.argsort(w)
    return w[order] + shift, v[:, order]


@dataclass
class MomentumTable:
    k: np.ndarray
    energies: np.ndarray  # single-particle energies above the vacuum
    velocities: np.ndarray
    vacuum_energy: float


def single_particle_ed_state(params: ModelParams, k, n_candidates=3):
    """Single-particle eigenstate at momentum k, phase-aligned with the free analytic state."""
    w, v = sector_states(params, k, n_states=n_candidates, parity=-1)
    ref = single_particle_state(params.with_(lam=0.0), k)
    ov = ref.conj() @ v
    i = int(np.argmax(np.abs(ov)))
    state = v[:, i] * np.exp(-1j * np.angle(ov[i]))
    return float(w[i]), state


def momentum_analysis(params: ModelParams) -> MomentumTable:
    vac = lowest_states(params, k=1).E0
    ks = lattice_momenta(params.L)
    es = np.array([single_particle_ed_state(params, k)[0] - vac for k in ks])
    dk = 2 * np.pi / params.L
    L = params.L
    # central difference on the periodic momentum grid
    vel = np.array([(es[(i + 1) % L] - es[(i - 1) % L]) / (2 * dk) for i in range(L)])
    return MomentumTable(ks, es, vel, vac)


def ed_wavepacket(params: ModelParams, spec: WavepacketSpec = WavepacketSpec(), states=None):
    """Gaussian packet of ED single-particle states, centred at ``spec.center``.

    The packet sum_k g(k) e^{-ik c}|k> is rewritten in the site basis
    |j> = L^-1/2 sum_k e^{-ikj}|k>; site amplitudes outside the truncation
    window are dropped before renormalizing.
    """
    L = params.L
    if spec.width_sites is not None and spec.width_sites > L:
        raise ValueError("wavepacket window wider than the lattice")
    ks = lattice_momenta(L)
    j = np.arange(L)
    g = momentum_envelope(ks, spec.p, spec.sigma)
    d = (g[:, None] * np.exp(1j * np.outer(ks, j - spec.center))).sum(axis=0) / np.sqrt(L)
    if spec.width_sites is not None:
        half = spec.width_sites // 2
        dist = np.abs(((j - spec.center + L // 2) % L) - L // 2)
        d = np.where(dist <= half, d, 0.0)
    coeff = np.exp(-1j * np.outer(ks, j)) @ d / np.sqrt(L)
    out = np.zeros(params.dim, dtype=complex)
    for i, k in enumerate(ks):
        s = states[i] if states is not None else single_particle_ed_state(params, k)[1]
        out += coeff[i] * s
    return out / np.linalg.norm(out)


# ----------------------------------------------------------------------------
# adiabatic preparation
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class AdiabaticSchedule:
    t_ad: float = 100.0  # forward (and backward) duration of one round
    n_steps: int = 10
    substeps: int = 1000  # forward product-formula steps per round (same number backward)
    hold: int = 10  # forward substeps between coupling increments


def adiabatic_wavepacket(params: ModelParams, spec: WavepacketSpec = WavepacketSpec(),
                         schedule: AdiabaticSchedule = AdiabaticSchedule(), psi0=None):
    """Turn on the quartic coupling from the free wavepacket with forward/backward legs.

    Round n evolves forward for t_ad/2 while s climbs a staircase from n/N to
    (2n+1)/2N, backward for t_ad at the midpoint coupling (undoing the free
    propagation), then forward for t_ad/2 up to (n+1)/N.
    """
    if schedule.substeps % 2 or (schedule.substeps // 2) % schedule.hold:
        raise ValueError("half the substeps must be a multiple of hold")
    if psi0 is None:
        psi = wavepacket_amplitudes(params.with_(lam=0.0), spec)
    else:
        psi = np.array(psi0, dtype=complex)
    ev = TrotterEvolver(build_hamiltonian(params))
    N = schedule.n_steps
    dt = schedule.t_ad / schedule.substeps
    n_stairs = schedule.substeps // schedule.hold
    per_leg = n_stairs // 2
    for n in range(N):
        s_mid = (2 * n + 1) / (2 * N)
        for leg in (0, 1):
            for block in range(per_leg):
                b = leg * per_leg + block
                s = (n + (b + 0.5) / n_stairs) / N
                psi = ev.evolve(psi, dt * schedule.hold, schedule.hold, lam_scale=s)
            if leg == 0:
                psi = ev.evolve(psi, -dt * schedule.substeps, schedule.substeps, lam_scale=s_mid)
    return psi / np.linalg.norm(psi)


# ----------------------------------------------------------------------------
# packet tracking
# ----------------------------------------------------------------------------

def _gauss(x, amp, mu, sig, off):
    return amp * np.exp(-0.5 * ((x - mu) / sig) ** 2) + off


def track_center(profile, window=None, overlapping=None):
    """Packet centre from a site profile: Gaussian fit near the maximum, argmax when packets overlap."""
    prof = np.asarray(profile, dtype=float)
    sites = np.arange(len(prof)) if window is None else np.asarray(list(window))
    vals = prof[sites]
    i = int(np.argmax(vals))
    if overlapping is None:
        # two separated local maxima of comparable height mean the packets overlap
        peaks = [j for j in range(len(vals)) if (j == 0 or vals[j] > vals[j - 1])
                 and (j == len(vals) - 1 or vals[j] >= vals[j + 1]) and vals[j] > 0.5 * vals[i]]
        overlapping = len(peaks) > 1
    if overlapping:
        return float(sites[i])
    lo, hi = max(i - 2, 0), min(i + 3, len(vals))
    x = sites[lo:hi].astype(float)
    y = vals[lo:hi]
    if len(x) < 4:
        return float(sites[i])
    try:
        popt, _ = curve_fit(_gauss, x, y, p0=[y.max() - y.min(), x[np.argmax(y)], 1.0, y.min()], maxfev=5000)
    except RuntimeError:
        return float(sites[i])
    mu = popt[1]
    if not (x[0] - 0.5 <= mu <= x[-1] + 0.5):
        return float(sites[i])
    return float(mu)


def phi2_profile(psi, params: ModelParams, vacuum=None):
    prof = phi2_expectations(psi, params)
    if vacuum is not None:
        prof = prof - phi2_expectations(vacuum, params)
    return prof
