from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phi4sim.lattice import (ModelParams, WavepacketSpec, build_hamiltonian, dispersion, effective_mass,
                             effective_mass_shift, field_flip, grids, group_velocity, kphi_grid, lattice_momenta,
                             phi2_phi4_pauli, phi_grid, phi_pauli, pi_pauli, shannon_interpolate, site_pi_matrix,
                             sqft_matrix, translate, vacuum_amplitudes, wavepacket_amplitudes)


def P(L=4, n_q=2, m=0.5, lam=0.0, phi_max=1.5):
    return ModelParams(L, n_q, m, lam, phi_max)


def test_grids_two_qubits():
    g = grids(P())
    assert np.allclose(g.phi, [-1.5, -0.5, 0.5, 1.5], atol=1e-15)
    assert g.delta_phi == 1.0
    assert np.allclose(g.kphi, np.array([-3, -1, 1, 3]) * np.pi / 4, atol=1e-15)
    assert np.allclose(phi_grid(1, 1.0), [-1, 1])


@given(st.integers(1, 4), st.floats(0.3, 5.0))
def test_grid_symmetry_and_spacing(n_q, phi_max):
    phi = phi_grid(n_q, phi_max)
    k = kphi_grid(n_q, phi_max)
    d = 2 * phi_max / (2 ** n_q - 1)
    assert np.allclose(phi, -phi[::-1], atol=1e-12)
    assert np.allclose(k, -k[::-1], atol=1e-12)
    assert np.allclose(np.diff(k), 2 * np.pi / (2 ** n_q * d))
    assert abs(d * (2 ** n_q - 1) - 2 * phi_max) < 1e-12


def test_invalid_params():
    with pytest.raises(ValueError):
        P(L=1)
    with pytest.raises(ValueError):
        P(m=0.0)
    with pytest.raises(ValueError):
        P(lam=-1.0)
    with pytest.raises(ValueError):
        P(phi_max=0.0)


def test_phi_and_pi_pauli_coefficients():
    f = phi_pauli(2, 1.5)
    assert f.terms == pytest.approx({"ZI": -0.5, "IZ": -1.0})
    assert np.allclose(sorted(np.linalg.eigvalsh(f.to_dense())), [-1.5, -0.5, 0.5, 1.5])
    p = pi_pauli(2, 1.5)
    assert p.terms == pytest.approx({"ZI": -np.pi / 4, "IZ": -np.pi / 2})
    assert np.allclose(sorted(np.linalg.eigvalsh(p.to_dense())), kphi_grid(2, 1.5))
    assert pi_pauli(1, 1.0).terms == pytest.approx({"Z": -np.pi / 4})


def test_phi2_phi4_forms():
    f2, f4 = phi2_phi4_pauli(2, 1.5)
    assert f2.constant() == pytest.approx(1.25)
    assert f2.terms["ZZ"] == pytest.approx(1.0)
    assert sorted(set(np.round(np.linalg.eigvalsh(f4.to_dense()), 12))) == [0.0625, 5.0625]
    assert np.allclose(f4.to_dense(), f2.to_dense() @ f2.to_dense(), atol=1e-12)


def test_sqft_diagonalizes_pi():
    w = sqft_matrix(2, 1.5)
    assert np.allclose(w.conj().T @ w, np.eye(4), atol=1e-12)
    assert np.allclose(np.linalg.eigvalsh(site_pi_matrix(2, 1.5)), kphi_grid(2, 1.5), atol=1e-12)


def test_hamiltonian_small_and_hermitian():
    h = build_hamiltonian(P(L=2, n_q=1, phi_max=1.0)).to_sparse().toarray()
    assert h.shape == (4, 4)
    assert np.allclose(h, h.conj().T, atol=1e-12)


def test_hamiltonian_groups_sum_and_pauli_form():
    params = P(L=3, lam=2.0)
    ham = build_hamiltonian(params)
    terms = ham.pauli_terms()
    # the Pi term is given in its own eigenbasis; rotate site by site
    w = sqft_matrix(2, 1.5)
    pi_site = w.conj().T @ (0.5 * pi_pauli(2, 1.5) * pi_pauli(2, 1.5)).to_dense() @ w
    dense_pi = sum(np.kron(np.kron(np.eye(4 ** (2 - j)), pi_site), np.eye(4 ** j)) for j in range(3))
    # PauliSum dense forms put qubit 0 on the lowest bit, same as the state ordering
    field = (terms["phi"] + terms["kin"] + terms["int"]).to_dense()
    assert np.allclose(np.diag(field).real, ham.field_diagonal(), atol=1e-12)
    assert np.allclose(dense_pi + field, ham.to_sparse().toarray(), atol=1e-12)
    hphi, hint = terms["phi"].to_dense(), terms["int"].to_dense()
    assert np.allclose(hphi @ hint, hint @ hphi)


def test_matvec_matches_sparse_matrix():
    params = P(lam=2.0)
    ham = build_hamiltonian(params)
    v = np.random.default_rng(0).normal(size=params.dim)
    assert np.allclose(ham.matvec(v), ham.to_sparse() @ v, atol=1e-12)
    assert ham.expectation(v / np.linalg.norm(v)) == pytest.approx(v @ (ham.to_sparse() @ v) / (v @ v))


def test_effective_mass_identity_l2():
    a = build_hamiltonian(P(L=2, lam=2.0)).to_sparse().toarray()
    b = build_hamiltonian(P(L=2, m=math.sqrt(2 / 3))).to_sparse().toarray()
    diff = a - b
    assert np.allclose(diff, diff[0, 0] * np.eye(len(diff)), atol=1e-10)
    assert diff[0, 0] == pytest.approx(effective_mass_shift(P(L=2, lam=2.0)))
    assert effective_mass(P(lam=2.0)) == pytest.approx(0.8164965809, abs=1e-9)
    assert effective_mass(P()) == 0.5


def test_dispersion_values():
    assert dispersion(0.0, 0.5) == pytest.approx(0.5)
    assert group_velocity(0.0, 0.5) == 0.0
    assert dispersion(np.pi / 3, 0.5) == pytest.approx(math.sqrt(1.25))
    assert group_velocity(np.pi / 3, 0.5) == pytest.approx(0.774597, abs=1e-6)
    assert abs(group_velocity(np.pi, 0.5)) < 1e-15


@given(st.integers(2, 12))
def test_lattice_momenta_range(L):
    k = lattice_momenta(L)
    assert len(k) == L
    assert np.all(k > -np.pi) and np.all(k <= np.pi + 1e-12)


def test_vacuum_amplitudes():
    params = P()
    psi = vacuum_amplitudes(params)
    assert np.linalg.norm(psi) == pytest.approx(1.0, abs=1e-12)
    assert np.all(psi > 0)
    assert np.allclose(psi, field_flip(psi, 4, 4))
    h = build_hamiltonian(params).to_sparse().toarray()
    g = np.linalg.eigh(h)[1][:, 0]
    assert abs(g @ psi) > 0.95


def test_wavepacket_norm_and_zero_momentum_symmetry():
    params = P(L=6)
    psi = wavepacket_amplitudes(params, WavepacketSpec(p=0.0, center=3))
    assert np.linalg.norm(psi) == pytest.approx(1.0)
    # reflection j -> 6 - j about site 3: reverse the site axes, then translate
    t = psi.reshape((4,) * 6)
    refl = np.ascontiguousarray(np.transpose(t, list(range(5, -1, -1)))).reshape(-1)
    refl = translate(refl, 6, 4, 1)
    assert np.allclose(refl, psi, atol=1e-10)


@settings(max_examples=20)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_shannon_interpolation_hits_samples(samples):
    grid = phi_grid(2, 1.5)
    assert np.allclose(shannon_interpolate(np.array(samples), 1.5, grid), samples, atol=1e-12)


def test_shannon_reconstruction_improves_with_qubits():
    def err(n_q, phi_max):
        grid = phi_grid(n_q, phi_max)
        x = np.linspace(-phi_max, phi_max, 201)
        return np.max(np.abs(shannon_interpolate(np.exp(-grid ** 2), phi_max, x) - np.exp(-x ** 2)))
    assert err(3, 3.1) < err(2, 1.5)
