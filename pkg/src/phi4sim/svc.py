"""Scalable variational circuits: infidelity minimization, greedy pool growth, layer growth, L-extrapolation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

from . import ansatz as az
from .circuits import (Circuit, adjoint_gradient, apply_circuit, site_matrix, state_infidelity,
                       state_infidelity_grad, unsite_matrix, zero_state)
from .exact import AdiabaticSchedule, adiabatic_wavepacket, ground_state
from .fitting import fit_exponential
from .lattice import ModelParams, WavepacketSpec, build_hamiltonian, wavepacket_amplitudes

# warm-start map for evolution training: t -> t used as initial guess
WARM_START = {1: None, 2: 1, 3: 2, 4: 2, 5: 4, 6: 5, 7: 5, 8: 7, 9: 8}


@dataclass
class OptProblem:
    circuit: Circuit
    psi0: np.ndarray
    target: np.ndarray
    window: tuple  # sites entering the local infidelity
    L: int
    n_levels: int = 4
    theta0: np.ndarray | None = None
    fd_step: float = 1e-6
    gtol: float = 1e-5
    maxiter: int = 2000
    gradient: str = "fd"  # 'fd' (central differences) or 'adjoint'
    restarts: int = 3
    restart_threshold: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if len(self.window) > self.L:
            raise ValueError("infidelity window larger than the lattice")
        if self.theta0 is None:
            self.theta0 = np.zeros(self.circuit.n_params)
        self.theta0 = np.asarray(self.theta0, dtype=float)
        if len(self.theta0) != self.circuit.n_params:
            raise ValueError("initial guess does not match the parameter slots")
        nt = np.linalg.norm(self.target)
        if abs(nt - 1.0) > 1e-8:
            raise ValueError("target state is not normalized")

    def state(self, theta):
        return apply_circuit(self.psi0, self.circuit, theta)

    def value(self, theta):
        v = state_infidelity(self.target, self.state(theta), self.window, self.L, self.n_levels)
        if not np.isfinite(v):
            raise FloatingPointError(f"non-finite infidelity at theta={theta}")
        return min(max(v, 0.0), 1.0)

    def value_and_grad(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.gradient == "adjoint":
            psi = self.state(theta)
            v, g = state_infidelity_grad(self.target, psi, self.window, self.L, self.n_levels)
            return v, adjoint_gradient(self.circuit, theta, self.psi0, g)
        v = self.value(theta)
        return v, fd_gradient(self.value, theta, self.fd_step)


def fd_gradient(f, theta, h=1e-6):
    g = np.zeros(len(theta))
    for i in range(len(theta)):
        e = np.zeros(len(theta))
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


@dataclass
class OptResult:
    theta: np.ndarray
    value: float
    n_iter: int
    converged: bool
    n_evals: int
    initial_value: float
    history: list = field(default_factory=list)  # (iteration, value, gradient norm)


def minimize(problem: OptProblem) -> OptResult:
    """BFGS on the local infidelity, returning the best point seen.

    Restarts from jittered copies of the best point when the result is still
    above ``restart_threshold``.
    """
    rng = np.random.default_rng(problem.seed)
    best = {"x": problem.theta0.copy(), "f": problem.value(problem.theta0)}
    f0 = best["f"]
    counter = {"evals": 1, "iter": 0}
    history = []

    def fun(x):
        v, g = problem.value_and_grad(x)
        counter["evals"] += 1
        if v < best["f"]:
            best["f"], best["x"] = v, np.array(x)
        return v, g

    def callback(xk, *args):
        counter["iter"] += 1
        history.append((counter["iter"], best["f"]))

    converged = False
    starts = [problem.theta0]
    attempt = 0
    while starts:
        x0 = starts.pop(0)
        res = _scipy_minimize(fun, x0, jac=True, method="BFGS", callback=callback,
                              options={"gtol": problem.gtol, "maxiter": problem.maxiter})
        converged = converged or bool(res.success)
        attempt += 1
        if best["f"] > problem.restart_threshold and attempt <= problem.restarts:
            starts.append(best["x"] + rng.normal(scale=0.5, size=len(best["x"])))
    _, g = problem.value_and_grad(best["x"])
    history = [(i, v) for i, v in history]
    out = OptResult(best["x"], float(best["f"]), counter["iter"], converged, counter["evals"], float(f0), history)
    out.grad_norm = float(np.linalg.norm(g))
    return out


# ----------------------------------------------------------------------------
# window-local problems
# ----------------------------------------------------------------------------

def circuit_sites(circuit: Circuit, n_q=2):
    return sorted({q // n_q for g in circuit.gates for q in g.qubits})


def localize(circuit: Circuit, psi0, target, window, L, n_levels=4):
    """Shrink a problem whose circuit acts only inside ``window`` to window + purifying environment.

    The reduced states on the window are unchanged, so local infidelities on the
    window agree with the full problem. Returns (circuit, psi0, target, window,
    L) for the small register.
    """
    window = list(window)
    n_q = int(round(math.log2(n_levels)))
    outside = [s for s in circuit_sites(circuit, n_q) if s not in window]
    if outside:
        raise ValueError(f"circuit touches sites {outside} outside the window")
    w = len(window)

    def purify(psi):
        a = site_matrix(psi, window, L, n_levels)
        if a.shape[1] > a.shape[0]:
            a = np.linalg.qr(a.conj().T, mode="r").conj().T
        pad = np.zeros((a.shape[0], n_levels ** w), dtype=complex)
        pad[:, : a.shape[1]] = a
        return unsite_matrix(pad, list(range(w)), 2 * w, n_levels)

    qmap = {}
    for i, s in enumerate(window):
        for b in range(n_q):
            qmap[s * n_q + b] = i * n_q + b
    small = Circuit(2 * w * n_q, [], list(circuit.slot_names), circuit.global_phase)
    for g in circuit.gates:
        small.append(g.remap(qmap))
    # the two purifications carry independent environments, so only the window matters
    return small, purify(psi0), purify(target), tuple(range(w)), 2 * w


# ----------------------------------------------------------------------------
# greedy pool growth
# ----------------------------------------------------------------------------

@dataclass
class AdaptResult:
    pool_sequence: list
    trail: list  # OptResult per accepted round (round 0 = input layer only)
    circuit: Circuit
    stopped: str


def adapt_vqe(params: ModelParams, target, pool=(1, 2, 3), max_layers=3, window=None, tol=1e-10,
              min_infidelity=0.0, gradient="fd", symmetric=True, theta_input=None) -> AdaptResult:
    """Greedy growth of the vacuum circuit from an operator pool of O_d layers."""
    if not pool:
        raise ValueError("empty operator pool")
    window = tuple(window) if window is not None else tuple(range(min(4, params.L)))
    psi0 = zero_state(params.n_qubits)
    seq: list = []
    circ = az.vacuum_circuit(params, seq, symmetric)
    guess = np.array([2.6 if theta_input is None else theta_input])
    res = minimize(OptProblem(circ, psi0, target, window, params.L, params.n_levels, guess, gradient=gradient))
    trail = [res]
    stopped = "max_layers"
    for _ in range(max_layers):
        best = None
        for d in pool:
            if d >= params.L:
                continue
            c = az.vacuum_circuit(params, seq + [d], symmetric)
            x0 = np.concatenate([trail[-1].theta, np.zeros(2)])
            r = minimize(OptProblem(c, psi0, target, window, params.L, params.n_levels, x0, gradient=gradient))
            if best is None or r.value < best[1].value:
                best = (d, r, c)
        if best is None or best[1].value > trail[-1].value - tol:
            stopped = "no_improvement"
            break
        seq.append(best[0])
        trail.append(best[1])
        circ = best[2]
        if best[1].value <= min_infidelity:
            stopped = "converged"
            break
    return AdaptResult(seq, trail, circ, stopped)


# ----------------------------------------------------------------------------
# layer-wise growth
# ----------------------------------------------------------------------------

def layerwise_grow(build, psi0, target, window, L, max_layers, per_layer, n_levels=4, jitters=2, seed=0,
                   gradient="adjoint", gtol=1e-5, maxiter=2000, local=False, start_layers=1, theta_start=None):
    """Grow ``build(n_layers)`` one layer at a time, new slots starting at zero.

    When a zero layer is not the identity (wavepacket brickwall), a few jittered
    starts are tried as well and the best result is kept. Returns the list of
    OptResult, one per layer count.
    """
    rng = np.random.default_rng(seed)
    trail = []
    theta = np.zeros(0) if theta_start is None else np.asarray(theta_start, dtype=float)
    for n in range(start_layers, max_layers + 1):
        circ = build(n)
        c, p0, tg, win, LL = (localize(circ, psi0, target, window, L, n_levels) if local
                              else (circ, psi0, target, tuple(window), L))
        need = circ.n_params - len(theta)
        if need < 0:
            raise ValueError("starting parameters longer than the circuit")
        starts = [np.concatenate([theta, np.zeros(need)])]
        for _ in range(jitters):
            starts.append(np.concatenate([theta, rng.normal(scale=0.3, size=need)]))
        best = None
        for x0 in starts:
            r = minimize(OptProblem(c, p0, tg, win, LL, n_levels, x0, gradient=gradient, gtol=gtol,
                                    maxiter=maxiter, restarts=0))
            if best is None or r.value < best.value:
                best = r
        trail.append(best)
        theta = best.theta
    return trail


# ----------------------------------------------------------------------------
# extrapolation in L
# ----------------------------------------------------------------------------

@dataclass
class ExtrapolationFit:
    L_values: list
    samples: np.ndarray  # (n_L, n_angles)
    fits: list

    @property
    def theta_inf(self):
        return np.array([f.y_inf for f in self.fits])

    @property
    def residual_rms(self):
        out = []
        for i, f in enumerate(self.fits):
            r = f(np.array(self.L_values)) - self.samples[:, i]
            out.append(float(np.sqrt(np.mean(r ** 2))))
        return np.array(out)


def extrapolate(L_values, samples) -> ExtrapolationFit:
    """Fit theta(L) = theta_inf + a r^L for every angle column."""
    s = np.asarray(samples, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    if s.shape[0] != len(L_values):
        raise ValueError("one sample row per system size")
    fits = [fit_exponential(L_values, s[:, i]) for i in range(s.shape[1])]
    return ExtrapolationFit(list(L_values), s, fits)


# ----------------------------------------------------------------------------
# training drivers
# ----------------------------------------------------------------------------

@dataclass
class VacuumTraining:
    per_L: dict  # L -> OptResult
    fit: ExtrapolationFit | None
    theta_inf: np.ndarray


def vacuum_window(L, d=4):
    return tuple(range(min(d, L)))


def train_vacuum(params: ModelParams, pool=(1,), window_d=4, theta0=None, gradient="fd", symmetric=True):
    """Input layer + fixed O_d layers trained against the exact ground state at ``params.L``."""
    target = ground_state(params).ground.astype(complex)
    circ = az.vacuum_circuit(params, pool, symmetric)
    x0 = np.array([2.6] + [0.1] * (circ.n_params - 1)) if theta0 is None else np.asarray(theta0, dtype=float)
    prob = OptProblem(circ, zero_state(params.n_qubits), target, vacuum_window(params.L, window_d), params.L,
                      params.n_levels, x0, gradient=gradient)
    return minimize(prob)


def train_vacuum_ladder(base: ModelParams, L_values=(4, 6, 8, 10), pool=(1,), window_d=4, extrapolate_from=3):
    """Train the vacuum circuit at each L and extrapolate the angles in L."""
    per_L = {}
    guess = None
    for L in L_values:
        r = train_vacuum(base.with_(L=L), pool, window_d, guess)
        per_L[L] = r
        guess = r.theta
    Ls = [L for L in L_values if L >= 4] if len([L for L in L_values if L >= 4]) >= extrapolate_from else list(L_values)
    fit = None
    if len(Ls) >= 3:
        fit = extrapolate(Ls, np.array([per_L[L].theta for L in Ls]))
        theta_inf = fit.theta_inf
    else:
        theta_inf = per_L[L_values[-1]].theta
    return VacuumTraining(per_L, fit, theta_inf)


def vacuum_state(params: ModelParams, theta, pool=(1,), symmetric=True):
    return apply_circuit(zero_state(params.n_qubits), az.vacuum_circuit(params, pool, symmetric), theta)


def wavepacket_target(params: ModelParams, spec: WavepacketSpec, schedule: AdiabaticSchedule | None = None):
    """Free analytic packet, or the adiabatically dressed packet for lam > 0."""
    if params.lam == 0.0:
        return wavepacket_amplitudes(params, spec)
    return adiabatic_wavepacket(params, spec, schedule or AdiabaticSchedule())


@dataclass
class WavepacketTraining:
    trail: list
    theta: np.ndarray
    window: tuple
    value: float


def train_wavepacket(params: ModelParams, vacuum_theta, layers=4, spec: WavepacketSpec | None = None,
                     target=None, pool=(1,), jitters=2, seed=0, maxiter=2000):
    """Brickwall packet circuit on top of the variational vacuum, grown layer by layer.

    The packet is centred at L//2 and the objective is the infidelity on its
    3-site window; the problem is solved on the window's purification.
    """
    c = params.L // 2
    spec = spec or WavepacketSpec(center=c)
    if spec.center != c:
        spec = WavepacketSpec(spec.p, spec.sigma, c, spec.width_sites)
    window = az.packet_window(c, params.L)
    if target is None:
        target = wavepacket_target(params, spec)
    vac = vacuum_state(params, vacuum_theta, pool)

    def build(n):
        return az.wavepacket_circuit(params, window, n)

    trail = layerwise_grow(build, vac, target, window, params.L, layers, 20, params.n_levels, jitters, seed,
                           local=True, maxiter=maxiter)
    return WavepacketTraining(trail, trail[-1].theta, window, trail[-1].value)


def evolution_window(L, d=10):
    d = min(d, L)
    lo = (L - d) // 2
    return tuple(range(lo, lo + d))


@dataclass
class EvolutionTraining:
    t: float
    trail: list
    theta: np.ndarray
    value: float
    window: tuple


def train_time_evolution(params: ModelParams, t, psi0, theta0=None, window_d=10, target=None, grow=True,
                         n_layers=az.EVO_LAYERS, jitters=0, seed=0, maxiter=2000, gtol=1e-5):
    """Fit ceil(t/3) shared evolution steps to exp(-iHt)|psi0> on a centred window.

    With ``grow`` the layers per step are added one at a time from zero (each
    new layer starts as the identity); otherwise all layers are trained at once
    from ``theta0``.
    """
    if t <= 0:
        raise ValueError("evolution time must be positive")
    psi0 = np.asarray(psi0, dtype=complex)
    if target is None:
        from .circuits import exact_evolve
        target = exact_evolve(build_hamiltonian(params), psi0, t)
    window = evolution_window(params.L, window_d)

    def build(n):
        return az.time_evolution_circuit(params, t, n_layers=n)

    if theta0 is not None and not grow:
        circ = build(n_layers)
        r = minimize(OptProblem(circ, psi0, target, window, params.L, params.n_levels, theta0, gradient="adjoint",
                                gtol=gtol, maxiter=maxiter, restarts=0))
        return EvolutionTraining(t, [r], r.theta, r.value, window)
    if theta0 is not None:
        th = np.asarray(theta0, dtype=float)
        start = max(1, len(th) // 12)
        trail = layerwise_grow(build, psi0, target, window, params.L, n_layers, 12, params.n_levels, jitters, seed,
                               gtol=gtol, maxiter=maxiter, start_layers=start, theta_start=th[:12 * start])
    else:
        trail = layerwise_grow(build, psi0, target, window, params.L, n_layers, 12, params.n_levels, jitters, seed,
                               gtol=gtol, maxiter=maxiter)
    return EvolutionTraining(t, trail, trail[-1].theta, trail[-1].value, window)


def train_time_evolution_series(params: ModelParams, times, psi0, **kw):
    """Train every t in ``times`` using the warm-start map (falls back to the nearest earlier t)."""
    out = {}
    for t in sorted(times):
        src = WARM_START.get(int(t))
        guess = out[src].theta if src in out else None
        if guess is None and out:
            guess = out[max(out)].theta
        out[t] = train_time_evolution(params, t, psi0, theta0=guess, **kw)
    return out
