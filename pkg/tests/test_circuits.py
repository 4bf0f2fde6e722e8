from __future__ import annotations

from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phi4sim.circuits import (Circuit, Gate, adjoint_gradient, apply_circuit, bind, circuit_unitary, compile_native,
                              dense, exact_evolve, expectation, gate_matrix, local_infidelity, phi2_expectations,
                              reduce, rot, sample, sqft_gate, sqft_native, state_infidelity, state_infidelity_grad,
                              trotter2_circuit, zero_state, TrotterEvolver)
from phi4sim.exact import lowest_states
from phi4sim.lattice import ModelParams, build_hamiltonian, kphi_grid, phi2_phi4_pauli, phi_grid, sqft_matrix
from phi4sim.pauli import PauliSum


def embed_oracle(U, qubits, n):
    """Full 2^n matrix of a gate by explicit index bookkeeping (qubit q = bit q)."""
    dim = 2 ** n
    k = len(qubits)
    M = np.zeros((dim, dim), dtype=complex)
    for col in range(dim):
        local = sum(((col >> q) & 1) << i for i, q in enumerate(qubits))
        base = col
        for q in qubits:
            base &= ~(1 << q)
        for out in range(2 ** k):
            row = base
            for i, q in enumerate(qubits):
                row |= ((out >> i) & 1) << q
            M[row, col] += U[out, local]
    return M


def random_circuit(n, n_gates, rng):
    c = Circuit(n)
    for _ in range(n_gates):
        kind = rng.choice(["rx", "ry", "rz", "cz", "cx", "swap", "rzs", "u1", "u2"])
        if kind in ("rx", "ry", "rz"):
            c.append(rot(kind, int(rng.integers(n)), c.add_slot("a"), scale=float(rng.normal())))
        elif kind in ("cz", "cx", "swap"):
            a, b = rng.choice(n, 2, replace=False)
            c.append(Gate(kind, (int(a), int(b))))
        elif kind == "rzs":
            qs = tuple(int(q) for q in rng.choice(n, int(rng.integers(1, 4)), replace=False))
            c.append(Gate("rzs", qs, c.add_slot("b"), float(rng.normal()), float(rng.normal())))
        else:
            k = 1 if kind == "u1" else 2
            qs = tuple(int(q) for q in rng.choice(n, k, replace=False))
            z = rng.normal(size=(2 ** k, 2 ** k)) + 1j * rng.normal(size=(2 ** k, 2 ** k))
            c.append(dense(np.linalg.qr(z)[0], qs))
    return c


def test_empty_and_x():
    psi = zero_state(3)
    assert np.allclose(apply_circuit(psi, Circuit(3)), psi)
    c = Circuit(1, [Gate("u", (0,), matrix=np.array([[0, 1], [1, 0]], dtype=complex))])
    assert np.allclose(apply_circuit(zero_state(1), c), [0, 1])


def test_gate_validation():
    with pytest.raises(ValueError):
        Gate("cz", (0, 0))
    with pytest.raises(ValueError):
        Gate("bogus", (0,))
    with pytest.raises(ValueError):
        Circuit(2).append(Gate("cz", (0, 2)))
    with pytest.raises(ValueError):
        Circuit(2).append(rot("rx", 0, slot=0))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_random_circuit_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    n = 6
    c = random_circuit(n, 25, rng)
    theta = rng.normal(size=c.n_params)
    U = np.eye(2 ** n, dtype=complex)
    for g in c.gates:
        U = embed_oracle(gate_matrix(g, theta), g.qubits, n) @ U
    psi0 = rng.normal(size=2 ** n) + 1j * rng.normal(size=2 ** n)
    psi0 /= np.linalg.norm(psi0)
    assert np.allclose(apply_circuit(psi0, c, theta), U @ psi0, atol=1e-10)
    assert np.allclose(apply_circuit(psi0, c, theta, fuse=True), U @ psi0, atol=1e-10)
    assert np.allclose(circuit_unitary(c, theta), U, atol=1e-10)


def test_bound_circuit_unitary():
    rng = np.random.default_rng(1)
    c = random_circuit(4, 20, rng)
    theta = rng.normal(size=c.n_params)
    bound = Circuit(4, [dense(m, qs) for m, qs in bind(c, theta)])
    U = circuit_unitary(bound)
    assert np.allclose(U.conj().T @ U, np.eye(16), atol=1e-12)
    assert np.allclose(U, circuit_unitary(c, theta), atol=1e-12)


def test_compile_native_preserves_unitary():
    rng = np.random.default_rng(2)
    c = Circuit(4)
    c.append(sqft_gate(0, 2, 1.5))
    c.append(Gate("rzs", (0, 1, 3), c.add_slot("a"), 0.7))
    c.append(Gate("swap", (1, 2)))
    c.append(sqft_gate(1, 2, 1.5, inverse=True))
    theta = rng.normal(size=1)
    nat = compile_native(c)
    assert all(g.kind in ("rx", "ry", "rz", "cz", "cx", "u") and len(g.qubits) <= 2 for g in nat.gates)
    assert all(len(g.qubits) == 1 for g in nat.gates if g.kind == "u")
    U, V = circuit_unitary(c, theta), circuit_unitary(nat, theta)
    assert np.allclose(U, V, atol=1e-12)


def test_sqft_native_and_spectrum():
    w = sqft_matrix(2, 1.5)
    assert np.allclose(w @ w.conj().T, np.eye(4), atol=1e-12)
    assert w[0, 0].real > 0 and abs(w[0, 0].imag) < 1e-15
    c = Circuit(2)
    for g in sqft_native(0, 1):
        c.append(g)
    U, V = circuit_unitary(c), circuit_unitary(Circuit(2, [sqft_gate(0, 2, 1.5)]))
    # exact up to a global phase
    ph = np.vdot(U.reshape(-1), V.reshape(-1))
    assert np.allclose(U * ph / abs(ph), V, atol=1e-12)
    assert sum(g.kind in ("cz", "cx") for g in compile_native(c).gates) == 5
    pi_diag = w.conj().T @ np.diag(kphi_grid(2, 1.5)) @ w
    assert np.allclose(np.linalg.eigvalsh(pi_diag), kphi_grid(2, 1.5), atol=1e-12)


def test_commutator_error_decreases_with_qubits():
    def err(n_q, phi_max):
        phi = np.diag(phi_grid(n_q, phi_max))
        w = sqft_matrix(n_q, phi_max)
        pi = w.conj().T @ np.diag(kphi_grid(n_q, phi_max)) @ w
        c = phi @ pi - pi @ phi
        # compare on the two lowest oscillator states, where the continuum relation should hold
        _, v = np.linalg.eigh(0.5 * pi @ pi + 0.125 * phi @ phi)
        p = v[:, :2]
        return np.linalg.norm(p.conj().T @ (c - 1j * np.eye(len(c))) @ p, 2)
    assert err(3, 3.1) < err(2, 1.5)


def test_expectations():
    f2, _ = phi2_phi4_pauli(2, 1.5)
    assert expectation(zero_state(2), f2) == pytest.approx(2.25)
    plus = np.array([1, 1], dtype=complex) / np.sqrt(2)
    assert expectation(plus, PauliSum.single(1, {0: "Z"})) == pytest.approx(0.0)
    params = ModelParams(3, 2, 0.5, 0.0, 1.5)
    s = lowest_states(params, k=1)
    ham = build_hamiltonian(params)
    total = sum(ham.pauli_terms()[k] for k in ("phi", "kin", "int"))
    # field-basis part via Pauli expectation, momentum part through the sparse matrix
    field = expectation(s.ground.astype(complex), total)
    pi_part = s.ground @ (ham.to_sparse() @ s.ground) - s.ground @ (ham.field_diagonal() * s.ground)
    assert field + pi_part == pytest.approx(s.E0, abs=1e-10)


def test_reduce_and_infidelity():
    prod = np.kron([0.6, 0.8], [1, 0]).astype(complex)
    rho = reduce(prod, [0], 2, 2)
    assert np.trace(rho @ rho).real == pytest.approx(1.0, abs=1e-10)
    bell = np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2)
    assert np.allclose(reduce(bell, [1], 2, 2), np.eye(2) / 2)
    a, b = np.array([1, 0], dtype=complex), np.array([0, 1], dtype=complex)
    assert local_infidelity(np.outer(a, a), np.outer(a, a)) == pytest.approx(0.0, abs=1e-12)
    assert local_infidelity(np.outer(a, a), np.outer(b, b)) == pytest.approx(1.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_mixed_state_infidelity_vs_eigen_oracle(seed):
    rng = np.random.default_rng(seed)

    def rand_rho(rank):
        x = rng.normal(size=(4, rank)) + 1j * rng.normal(size=(4, rank))
        r = x @ x.conj().T
        return r / np.trace(r)

    r1, r2 = rand_rho(4), rand_rho(4)
    w, v = np.linalg.eigh(r1)
    s1 = v @ np.diag(np.sqrt(np.clip(w, 0, None))) @ v.conj().T
    m = s1 @ r2 @ s1
    f = np.sqrt(np.clip(np.linalg.eigvalsh(m), 0, None)).sum() ** 2
    assert local_infidelity(r1, r2) == pytest.approx(1 - f, abs=1e-9)
    assert 0.0 <= local_infidelity(r1, r2) <= 1.0


def test_state_infidelity_matches_density_route():
    rng = np.random.default_rng(3)
    L, N = 4, 4
    a = rng.normal(size=N ** L) + 1j * rng.normal(size=N ** L)
    b = rng.normal(size=N ** L) + 1j * rng.normal(size=N ** L)
    a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
    win = [1, 2]
    direct = local_infidelity(reduce(a, win, L, N), reduce(b, win, L, N))
    assert state_infidelity(a, b, win, L, N) == pytest.approx(direct, abs=1e-10)


def test_adjoint_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    L, N = 3, 4
    c = random_circuit(6, 30, rng)
    theta = rng.normal(size=c.n_params)
    psi0 = zero_state(6)
    target = rng.normal(size=64) + 1j * rng.normal(size=64)
    target /= np.linalg.norm(target)
    win = [0, 1]

    def f(th):
        return state_infidelity(target, apply_circuit(psi0, c, th), win, L, N)

    v, g = state_infidelity_grad(target, apply_circuit(psi0, c, theta), win, L, N)
    assert v == pytest.approx(f(theta), abs=1e-12)
    grad = adjoint_gradient(c, theta, psi0, g)
    h = 1e-6
    fd = np.array([(f(theta + h * e) - f(theta - h * e)) / (2 * h) for e in np.eye(len(theta))])
    assert np.allclose(grad, fd, atol=1e-7)


def test_sampling():
    rng = np.random.default_rng(5)
    basis = zero_state(3)
    assert sample(basis, 100, rng) == Counter({"000": 100})
    plus = np.array([1, 1], dtype=complex) / np.sqrt(2)
    c = sample(plus, 8000, rng)
    assert abs(c["0"] - 4000) < 5 * np.sqrt(8000 * 0.25)
    psi = rng.normal(size=4) + 1j * rng.normal(size=4)
    psi /= np.linalg.norm(psi)
    shots = 10 ** 6
    counts = sample(psi, shots, rng)
    zz_emp = sum(c * (1 if k[0] == k[1] else -1) for k, c in counts.items()) / shots
    zz = expectation(psi, PauliSum.single(2, {0: "Z", 1: "Z"}))
    assert abs(zz_emp - zz) < 3 * np.sqrt((1 - zz ** 2) / shots) + 1e-12


def test_trotter_identity_and_accuracy():
    params = ModelParams(6, 2, 0.5, 2.0, 1.5)
    c0 = trotter2_circuit(params, 0.0, 3)
    psi = np.random.default_rng(6).normal(size=params.dim).astype(complex)
    psi /= np.linalg.norm(psi)
    assert np.allclose(apply_circuit(psi, c0), psi, atol=1e-12)
    ham = build_hamiltonian(params)
    g = lowest_states(params, k=1).ground.astype(complex)
    ex = exact_evolve(ham, g, 3.0)
    tr = apply_circuit(g, trotter2_circuit(params, 3.0, 100))
    assert 1 - abs(np.vdot(ex, tr)) ** 2 < 1e-3


def test_trotter_circuit_matches_evolver():
    params = ModelParams(3, 2, 0.5, 2.0, 1.5)
    psi = np.random.default_rng(7).normal(size=params.dim).astype(complex)
    psi /= np.linalg.norm(psi)
    a = apply_circuit(psi, trotter2_circuit(params, 0.7, 4))
    b = TrotterEvolver(build_hamiltonian(params)).evolve(psi, 0.7, 4)
    assert np.allclose(a, b, atol=1e-10)


def test_exact_evolve_checks():
    params = ModelParams(4, 2, 0.5, 0.0, 1.5)
    ham = build_hamiltonian(params)
    rng = np.random.default_rng(8)
    psi = rng.normal(size=params.dim) + 1j * rng.normal(size=params.dim)
    psi /= np.linalg.norm(psi)
    assert np.allclose(exact_evolve(ham, psi, 0.0), psi)
    g = lowest_states(params, k=1).ground.astype(complex)
    gt = exact_evolve(ham, g, 2.0)
    assert np.allclose(phi2_expectations(gt, params), phi2_expectations(g, params), atol=1e-10)
    a = exact_evolve(ham, psi, 1.0, method="dense")
    b = exact_evolve(ham, psi, 1.0, method="krylov")
    c = TrotterEvolver(ham).evolve(psi, 1.0, 10 ** 4)
    assert 1 - abs(np.vdot(a, b)) ** 2 < 1e-10
    assert 1 - abs(np.vdot(a, c)) ** 2 < 1e-6
