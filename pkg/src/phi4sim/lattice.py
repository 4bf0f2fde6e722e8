"""Digitized lattice scalar field: grids, qubit encodings, Hamiltonian, analytic states.

Conventions
-----------
Each site holds ``n_q`` qubits; site ``j`` owns qubits ``n_q*j .. n_q*j+n_q-1``
and the site value ``l`` is stored little-endian (qubit ``n_q*j + b`` is bit
``b`` of ``l``). A full state is a flat vector of length ``N**L`` with
``N = 2**n_q``; its C-order tensor view has shape ``(N,)*L`` where tensor axis
``a`` is site ``L-1-a``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from .pauli import PauliSum


@dataclass(frozen=True)
class ModelParams:
    L: int
    n_q: int
    m: float
    lam: float
    phi_max: float

    def __post_init__(self):
        if self.L < 2:
            raise ValueError("need at least two sites")
        if self.n_q < 1:
            raise ValueError("n_q must be >= 1")
        if self.m <= 0:
            raise ValueError("mass must be positive")
        if self.lam < 0:
            raise ValueError("coupling must be non-negative")
        if self.phi_max <= 0:
            raise ValueError("phi_max must be positive")

    @property
    def n_levels(self):
        return 2 ** self.n_q

    @property
    def n_qubits(self):
        return self.L * self.n_q

    @property
    def dim(self):
        return self.n_levels ** self.L

    @property
    def delta_phi(self):
        return 2.0 * self.phi_max / (self.n_levels - 1)

    def with_(self, **kw):
        return replace(self, **kw)

    def to_dict(self):
        return {"L": self.L, "n_q": self.n_q, "m": self.m, "lambda": self.lam, "phi_max": self.phi_max}

    @classmethod
    def from_dict(cls, d):
        lam = d["lambda"] if "lambda" in d else d["lam"]
        return cls(int(d["L"]), int(d["n_q"]), float(d["m"]), float(lam), float(d["phi_max"]))


# ----------------------------------------------------------------------------
# single-site grids and operators
# ----------------------------------------------------------------------------

def phi_grid(n_q, phi_max):
    n = 2 ** n_q
    return -phi_max + np.arange(n) * (2.0 * phi_max / (n - 1))


def kphi_grid(n_q, phi_max):
    n = 2 ** n_q
    d = 2.0 * phi_max / (n - 1)
    return -np.pi / d + (np.arange(n) + 0.5) * 2.0 * np.pi / (n * d)


@dataclass(frozen=True)
class DigitizedGrids:
    phi: np.ndarray
    kphi: np.ndarray
    delta_phi: float


def grids(params: ModelParams) -> DigitizedGrids:
    return DigitizedGrids(phi_grid(params.n_q, params.phi_max), kphi_grid(params.n_q, params.phi_max),
                          params.delta_phi)


def sqft_matrix(n_q, phi_max):
    """Site-local transform from the field basis to the conjugate-momentum basis.

    ``W[l', l] = N**-1/2 exp(-i k[l'] phi[l])`` times a global phase making
    ``W[0, 0]`` real and positive.
    """
    phi = phi_grid(n_q, phi_max)
    k = kphi_grid(n_q, phi_max)
    w = np.exp(-1j * np.outer(k, phi)) / np.sqrt(len(phi))
    return w * np.exp(-1j * np.angle(w[0, 0]))


def site_pi_matrix(n_q, phi_max):
    """Conjugate momentum of one site written in the field basis (purely imaginary)."""
    w = sqft_matrix(n_q, phi_max)
    return w.conj().T @ np.diag(kphi_grid(n_q, phi_max)) @ w


def site_pi2_matrix(n_q, phi_max):
    w = sqft_matrix(n_q, phi_max)
    p2 = w.conj().T @ np.diag(kphi_grid(n_q, phi_max) ** 2) @ w
    return p2.real


def phi_pauli(n_q, phi_max, n_qubits=None, offset=0):
    """Field operator of one site: -phi_max/(2^n_q - 1) * sum_l 2^l Z_l."""
    n_qubits = n_q if n_qubits is None else n_qubits
    c = -phi_max / (2 ** n_q - 1)
    out = PauliSum(n_qubits, {})
    for b in range(n_q):
        out = out + PauliSum.single(n_qubits, {offset + b: "Z"}, c * 2 ** b)
    return out


def pi_pauli(n_q, phi_max, n_qubits=None, offset=0):
    """Conjugate momentum of one site in its own eigenbasis: -pi/(2^n_q dphi) * sum_l 2^l Z_l."""
    n_qubits = n_q if n_qubits is None else n_qubits
    d = 2.0 * phi_max / (2 ** n_q - 1)
    c = -np.pi / (2 ** n_q * d)
    out = PauliSum(n_qubits, {}, basis="pi")
    for b in range(n_q):
        out = out + PauliSum.single(n_qubits, {offset + b: "Z"}, c * 2 ** b, basis="pi")
    return out


def phi2_phi4_pauli(n_q, phi_max):
    """Pauli forms of phi^2 and phi^4 on one site (Z strings only)."""
    f = phi_pauli(n_q, phi_max)
    f2 = f * f
    return f2, f2 * f2


# ----------------------------------------------------------------------------
# tensor helpers
# ----------------------------------------------------------------------------

def site_axis(j, L):
    return L - 1 - j


def site_broadcast(values, j, L):
    """Reshape a per-site vector so it broadcasts along the axis of site ``j``."""
    shape = [1] * L
    shape[site_axis(j, L)] = len(values)
    return np.asarray(values).reshape(shape)


def site_values(params: ModelParams, j, values=None):
    """Value of a single-site diagonal function at site ``j`` for every basis state (flat)."""
    values = phi_grid(params.n_q, params.phi_max) if values is None else values
    t = np.broadcast_to(site_broadcast(values, j, params.L), (params.n_levels,) * params.L)
    return t.reshape(-1)


def apply_site_op(psi, op, j, L, n_levels):
    """Apply an ``n_levels x n_levels`` matrix to site ``j`` of a flat state."""
    a = n_levels ** (L - 1 - j)
    b = n_levels ** j
    t = psi.reshape(a, n_levels, b)
    if b == 1:
        out = t.reshape(a, n_levels) @ op.T
    elif b <= 4:
        # a single small GEMM beats a batched product when the inner stride is short
        out = t.reshape(a, n_levels * b) @ np.kron(op, np.eye(b)).T
    else:
        out = np.matmul(op, t)
    return out.reshape(-1)


def apply_all_sites(psi, op, L, n_levels):
    """Apply the same site matrix on every site (tensor product, not a sum)."""
    for j in range(L):
        psi = apply_site_op(psi, op, j, L, n_levels)
    return psi


def translate(psi, L, n_levels, shift=1):
    """Lattice translation moving the content of site j to site j+shift."""
    t = psi.reshape((n_levels,) * L)
    # site j sits on axis L-1-j, so moving content up one site moves it down one axis
    dest = [(a - shift) % L for a in range(L)]
    return np.ascontiguousarray(np.moveaxis(t, list(range(L)), dest)).reshape(-1)


def field_flip(psi, L, n_levels):
    """phi -> -phi on every site (l -> N-1-l)."""
    t = psi.reshape((n_levels,) * L)
    return np.ascontiguousarray(t[(slice(None, None, -1),) * L]).reshape(-1)


# ----------------------------------------------------------------------------
# Hamiltonian
# ----------------------------------------------------------------------------

class HamiltonianTerms:
    """H = H_pi + H_phi + H_kin + H_int for a periodic chain.

    The three field terms are diagonal in the field basis and stored as real
    vectors; the momentum term is a sum of identical site-local matrices.
    Pauli forms of every term are available on request.
    """

    def __init__(self, params: ModelParams):
        self.params = params
        self.n_levels = params.n_levels
        self.pi2_site = 0.5 * site_pi2_matrix(params.n_q, params.phi_max)
        self._diag = {}

    # diagonal pieces, built lazily
    def diagonal(self, which):
        if which not in self._diag:
            self._diag[which] = self._build_diag(which)
        return self._diag[which]

    def _build_diag(self, which):
        p = self.params
        L, N = p.L, p.n_levels
        phi = phi_grid(p.n_q, p.phi_max)
        out = np.zeros((N,) * L)
        if which == "phi":
            for j in range(L):
                out += site_broadcast(0.5 * p.m ** 2 * phi ** 2, j, L)
        elif which == "int":
            for j in range(L):
                out += site_broadcast(p.lam / 24.0 * phi ** 4, j, L)
        elif which == "kin":
            for j in range(L):
                a = site_broadcast(phi, j, L)
                b = site_broadcast(phi, (j + 1) % L, L)
                out += 0.5 * (b - a) ** 2
        else:
            raise KeyError(which)
        return out.reshape(-1)

    def field_diagonal(self, lam_scale=1.0):
        """Sum of the field-basis diagonal terms, with the quartic term scaled."""
        d = self.diagonal("phi") + self.diagonal("kin")
        if self.params.lam != 0.0:
            d = d + lam_scale * self.diagonal("int")
        return d

    def apply_pi(self, psi):
        out = np.zeros_like(psi)
        for j in range(self.params.L):
            out += apply_site_op(psi, self.pi2_site, j, self.params.L, self.n_levels)
        return out

    def matvec(self, psi):
        psi = np.asarray(psi).reshape(-1)
        return self.field_diagonal() * psi + self.apply_pi(psi)

    def linear_operator(self, dtype=float):
        d = self.params.dim
        return LinearOperator((d, d), matvec=self.matvec, rmatvec=self.matvec, dtype=dtype)

    def to_sparse(self):
        p = self.params
        if p.dim > 2 ** 18:
            raise ValueError("dimension too large for an explicit sparse matrix; use linear_operator()")
        N, L = p.n_levels, p.L
        mat = sp.diags(self.field_diagonal()).tocsr()
        site = sp.csr_matrix(self.pi2_site)
        for j in range(L):
            left = sp.identity(N ** (L - 1 - j), format="csr")
            right = sp.identity(N ** j, format="csr")
            mat = mat + sp.kron(sp.kron(left, site), right, format="csr")
        return mat.tocsr()

    def expectation(self, psi):
        psi = np.asarray(psi).reshape(-1)
        return float(np.vdot(psi, self.matvec(psi)).real)

    # Pauli forms --------------------------------------------------------
    def pauli_terms(self):
        p = self.params
        n = p.n_qubits
        q = p.n_q
        f2, f4 = phi2_phi4_pauli(q, p.phi_max)
        pi = pi_pauli(q, p.phi_max)
        h_pi = PauliSum(n, {}, basis="pi")
        h_phi = PauliSum(n, {})
        h_int = PauliSum(n, {})
        h_kin = PauliSum(n, {})
        for j in range(p.L):
            h_pi = h_pi + (pi * pi).embed(n, q * j) * 0.5
            h_phi = h_phi + f2.embed(n, q * j) * (0.5 * p.m ** 2)
            if p.lam:
                h_int = h_int + f4.embed(n, q * j) * (p.lam / 24.0)
        for j in range(p.L):
            a = phi_pauli(q, p.phi_max, n, q * j)
            b = phi_pauli(q, p.phi_max, n, q * ((j + 1) % p.L))
            diff = b - a
            h_kin = h_kin + diff * diff * 0.5
        return {"pi": h_pi, "phi": h_phi, "kin": h_kin, "int": h_int}


def build_hamiltonian(params: ModelParams) -> HamiltonianTerms:
    return HamiltonianTerms(params)


# ----------------------------------------------------------------------------
# free-theory quantities
# ----------------------------------------------------------------------------

def lattice_momenta(L):
    """k = 2 pi n / L folded into (-pi, pi]."""
    n = np.arange(L)
    k = 2 * np.pi * n / L
    k = np.where(k > np.pi + 1e-12, k - 2 * np.pi, k)
    return np.sort(k)


def dispersion(k, m, continuum=False):
    k = np.asarray(k, dtype=float)
    if continuum:
        return np.sqrt(m ** 2 + k ** 2)
    return np.sqrt(m ** 2 + 4 * np.sin(k / 2) ** 2)


def group_velocity(k, m, continuum=False):
    k = np.asarray(k, dtype=float)
    if continuum:
        return k / np.sqrt(m ** 2 + k ** 2)
    return np.sin(k) / dispersion(k, m)


@dataclass(frozen=True)
class CorrelationMatrix:
    k: np.ndarray
    V: np.ndarray
    E: np.ndarray
    K: np.ndarray


def correlation_matrix(L, m) -> CorrelationMatrix:
    k = lattice_momenta(L)
    j = np.arange(L)
    V = np.exp(1j * np.outer(k, j)) / np.sqrt(L)
    E = dispersion(k, m)
    K = (V.conj().T @ np.diag(E) @ V).real
    return CorrelationMatrix(k, V, E, K)


def _gaussian_log_amplitude(params: ModelParams, K):
    L, N = params.L, params.n_levels
    phi = phi_grid(params.n_q, params.phi_max)
    q = np.zeros((N,) * L)
    for i in range(L):
        fi = site_broadcast(phi, i, L)
        q += K[i, i] * fi * fi
        for j in range(i + 1, L):
            q += 2 * K[i, j] * fi * site_broadcast(phi, j, L)
    return -0.5 * q.reshape(-1)


def vacuum_amplitudes(params: ModelParams):
    """Free-theory Gaussian vacuum sampled on the digitized grid (normalized)."""
    if params.lam != 0.0:
        raise ValueError("the Gaussian vacuum is only defined for the free theory")
    cm = correlation_matrix(params.L, params.m)
    logamp = _gaussian_log_amplitude(params, cm.K)
    psi = np.exp(logamp - logamp.max())
    return psi / np.linalg.norm(psi)


@dataclass(frozen=True)
class WavepacketSpec:
    p: float = -np.pi / 3
    sigma: float = np.pi / 3
    center: int = 0
    width_sites: int | None = 3


def momentum_envelope(k, p, sigma):
    return np.exp(-((k - p) ** 2) / (2 * sigma ** 2)) / (np.sqrt(2 * np.pi) * sigma)


def single_particle_profile(L, m, p, sigma, center=0, width_sites=None):
    """Site coefficients c_j of the linear excitation sum_j c_j phi_j acting on the vacuum.

    ``c_j = sum_k g(k) sqrt(E_k) exp(i k (j - center))``; sites farther than
    ``width_sites//2`` from the center are zeroed when a width is given.
    """
    k = lattice_momenta(L)
    g = momentum_envelope(k, p, sigma)
    E = dispersion(k, m)
    j = np.arange(L)
    c = (g * np.sqrt(E)) @ np.exp(1j * np.outer(k, j - center))
    if width_sites is not None:
        if width_sites > L:
            raise ValueError("wavepacket window wider than the lattice")
        half = width_sites // 2
        dist = np.abs(((j - center + L // 2) % L) - L // 2)
        c = np.where(dist <= half, c, 0.0)
    return c


def wavepacket_amplitudes(params: ModelParams, spec: WavepacketSpec = WavepacketSpec()):
    """Single-particle wavepacket on the Gaussian vacuum, sampled on the grid."""
    if params.lam != 0.0:
        raise ValueError("analytic wavepackets are only defined for the free theory")
    if spec.width_sites is not None and spec.width_sites > params.L:
        raise ValueError("wavepacket window wider than the lattice")
    c = single_particle_profile(params.L, params.m, spec.p, spec.sigma, spec.center, spec.width_sites)
    vac = vacuum_amplitudes(params)
    lin = np.zeros(params.dim, dtype=complex)
    phi = phi_grid(params.n_q, params.phi_max)
    for j in range(params.L):
        if c[j] != 0:
            lin += c[j] * site_values(params, j, phi)
    psi = lin * vac
    return psi / np.linalg.norm(psi)


def single_particle_state(params: ModelParams, k):
    """Analytic free single-particle momentum eigenstate on the grid (normalized)."""
    j = np.arange(params.L)
    c = np.exp(1j * k * j)
    vac = vacuum_amplitudes(params)
    lin = np.zeros(params.dim, dtype=complex)
    phi = phi_grid(params.n_q, params.phi_max)
    for s in range(params.L):
        lin += c[s] * site_values(params, s, phi)
    psi = lin * vac
    return psi / np.linalg.norm(psi)


# ----------------------------------------------------------------------------
# digitization diagnostics
# ----------------------------------------------------------------------------

def effective_mass(params: ModelParams):
    """Mass of the free theory equivalent to the two-qubit digitized interacting theory."""
    if params.n_q != 2:
        raise ValueError("the quartic-to-quadratic identity holds for n_q = 2 only")
    return math.sqrt(params.m ** 2 + params.lam / 24.0 * (20.0 / 9.0) * params.phi_max ** 2)


def effective_mass_shift(params: ModelParams):
    """Constant c with H(m, lam) = H(m', 0) + c for n_q = 2."""
    if params.n_q != 2:
        raise ValueError("the quartic-to-quadratic identity holds for n_q = 2 only")
    return -params.L * params.lam / 24.0 * params.phi_max ** 4 / 9.0


def shannon_interpolate(samples, phi_max, x):
    """Band-limited reconstruction from values on the symmetric digitized grid."""
    samples = np.asarray(samples)
    n = len(samples)
    d = 2.0 * phi_max / (n - 1)
    grid = -phi_max + np.arange(n) * d
    x = np.asarray(x, dtype=float)
    return np.sinc((x[..., None] - grid) / d) @ samples


def _sinc_dvr_kinetic(n, dx):
    i = np.arange(n)
    diff = i[:, None] - i[None, :]
    with np.errstate(divide="ignore"):
        t = 2.0 * (-1.0) ** diff / np.where(diff == 0, 1, diff) ** 2
    t[diff == 0] = np.pi ** 2 / 3.0
    return t / (2.0 * dx ** 2)


def continuum_site_states(m, lam, n_states, x_max=10.0, n_points=801):
    """Low eigenstates of one site with potential (m^2+2)/2 phi^2 + lam/24 phi^4.

    The on-site half of the gradient term is kept; only the inter-site coupling
    is dropped. Returns (x, dx, energies, states) with states normalized on x.
    """
    x = np.linspace(-x_max, x_max, n_points)
    dx = x[1] - x[0]
    v = 0.5 * (m ** 2 + 2.0) * x ** 2 + lam / 24.0 * x ** 4
    h = _sinc_dvr_kinetic(n_points, dx) + np.diag(v)
    e, u = np.linalg.eigh(h)
    return x, dx, e[:n_states], u[:, :n_states] / np.sqrt(dx)


def digitized_site_states(n_q, phi_max, m, lam):
    phi = phi_grid(n_q, phi_max)
    h = 0.5 * site_pi2_matrix(n_q, phi_max) + np.diag(0.5 * (m ** 2 + 2.0) * phi ** 2 + lam / 24.0 * phi ** 4)
    e, u = np.linalg.eigh(h)
    return e, u


def phi_max_overlap(n_q, m, lam, phi_max, n_states=4, continuum=None):
    """Summed squared overlaps of the interpolated digitized and continuum low states."""
    x, dx, _, cont = continuum if continuum is not None else continuum_site_states(m, lam, n_states)
    _, u = digitized_site_states(n_q, phi_max, m, lam)
    k = min(n_states, u.shape[1], cont.shape[1])
    total = 0.0
    for s in range(k):
        f = shannon_interpolate(u[:, s], phi_max, x)
        f = f / np.sqrt(np.sum(np.abs(f) ** 2) * dx)
        total += abs(np.sum(f.conj() * cont[:, s]) * dx) ** 2
    return total


def optimal_phi_max(n_q, m, lam, n_states=4, search_range=(0.5, 5.0), step=0.01):
    """Field cutoff maximizing ``phi_max_overlap`` (grid scan then bounded refinement)."""
    from scipy.optimize import minimize_scalar

    cont = continuum_site_states(m, lam, n_states)
    grid = np.arange(search_range[0], search_range[1] + step / 2, step)
    vals = np.array([phi_max_overlap(n_q, m, lam, g, n_states, cont) for g in grid])
    i = int(np.argmax(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    if hi <= lo:
        return float(grid[i])
    res = minimize_scalar(lambda g: -phi_max_overlap(n_q, m, lam, g, n_states, cont),
                          bounds=(lo, hi), method="bounded", options={"xatol": 1e-5})
    return float(res.x) if -res.fun >= vals[i] else float(grid[i])
