"""Gate-level circuits, a statevector simulator, and state-level diagnostics.

Qubit ``q`` is bit ``q`` of the flat basis index. Rotation gates use the
convention ``R_P(a) = exp(-i a/2 P)``; a parameterized gate's angle is
``scale * theta[slot] + angle``. Dense gate matrices are written in the
little-endian basis of their own qubit list (first listed qubit = lowest bit).
Bitstrings print qubit 0 first.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .lattice import ModelParams, HamiltonianTerms, apply_site_op, phi_grid, phi2_phi4_pauli, pi_pauli, sqft_matrix
from .pauli import PauliSum, PAULI_MATS

ROTATIONS = {"rx", "ry", "rz", "rzs"}
FIXED = {"cz", "cx", "swap", "u"}
H_GATE = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)


@dataclass(frozen=True)
class Gate:
    kind: str
    qubits: tuple
    slot: int | None = None
    scale: float = 1.0
    angle: float = 0.0
    matrix: np.ndarray | None = field(default=None, compare=False, repr=False)
    name: str = ""

    def __post_init__(self):
        if self.kind not in ROTATIONS | FIXED:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        if len(set(self.qubits)) != len(self.qubits):
            raise ValueError("repeated qubit in gate")
        if self.kind in ("rx", "ry", "rz") and len(self.qubits) != 1:
            raise ValueError("single-qubit rotation on several qubits")
        if self.kind in ("cz", "cx", "swap") and len(self.qubits) != 2:
            raise ValueError("two-qubit gate needs two qubits")
        if self.kind == "u":
            if self.matrix is None or self.matrix.shape != (2 ** len(self.qubits),) * 2:
                raise ValueError("dense gate matrix has the wrong shape")

    @property
    def parametric(self):
        return self.slot is not None

    def bound_angle(self, theta):
        if self.slot is None:
            return self.angle
        return self.scale * theta[self.slot] + self.angle

    def remap(self, mapping):
        return Gate(self.kind, tuple(mapping[q] for q in self.qubits), self.slot, self.scale, self.angle,
                    self.matrix, self.name)

    def shift_slot(self, offset):
        if self.slot is None:
            return self
        return Gate(self.kind, self.qubits, self.slot + offset, self.scale, self.angle, self.matrix, self.name)

    def two_qubit_cost(self):
        """Number of native entangling layers this gate occupies."""
        k = len(self.qubits)
        if self.kind in ("cz", "cx"):
            return 1
        if self.kind == "swap":
            return 3
        if self.kind == "rzs":
            return 2 * (k - 1)
        if self.kind == "u":
            if k == 1:
                return 0
            if self.name in ("sqft", "isqft") and k == 2:
                return 5
            return 3 if k == 2 else 20
        return 0


def rot(kind, q, slot=None, scale=1.0, angle=0.0):
    qs = tuple(q) if isinstance(q, (tuple, list)) else (q,)
    return Gate(kind, qs, slot, scale, angle)


def dense(matrix, qubits, name=""):
    return Gate("u", tuple(qubits), matrix=np.asarray(matrix, dtype=complex), name=name)


@dataclass
class Circuit:
    n_qubits: int
    gates: list = field(default_factory=list)
    slot_names: list = field(default_factory=list)
    global_phase: float = 0.0

    @property
    def n_params(self):
        return len(self.slot_names)

    def add_slot(self, name):
        self.slot_names.append(name)
        return len(self.slot_names) - 1

    def append(self, gate: Gate):
        if max(gate.qubits) >= self.n_qubits or min(gate.qubits) < 0:
            raise ValueError("gate acts outside the register")
        if gate.slot is not None and gate.slot >= self.n_params:
            raise ValueError("gate refers to an unknown parameter slot")
        self.gates.append(gate)
        return self

    def extend(self, other: "Circuit", qubit_map=None, share_slots=False):
        """Append another circuit; its slots are appended unless ``share_slots``."""
        offset = 0 if share_slots else self.n_params
        if not share_slots:
            self.slot_names.extend(other.slot_names)
        for g in other.gates:
            g = g.shift_slot(offset)
            if qubit_map is not None:
                g = g.remap(qubit_map)
            self.append(g)
        self.global_phase += other.global_phase
        return self

    def copy(self):
        return Circuit(self.n_qubits, list(self.gates), list(self.slot_names), self.global_phase)

    # --- resource accounting -------------------------------------------------
    def two_qubit_count(self):
        return sum(g.two_qubit_cost() for g in self.gates)

    def two_qubit_depth(self):
        level = [0] * self.n_qubits
        for g in self.gates:
            c = g.two_qubit_cost()
            if c == 0:
                continue
            start = max(level[q] for q in g.qubits)
            for q in g.qubits:
                level[q] = start + c
        return max(level) if level else 0

    # --- text form ------------------------------------------------------------
    def to_text(self):
        out = [f"# n_qubits={self.n_qubits} n_params={self.n_params} global_phase={self.global_phase!r}"]
        for i, s in enumerate(self.slot_names):
            out.append(f"slot {i} {s}")
        for g in self.gates:
            parts = [g.kind, ",".join(map(str, g.qubits))]
            if g.slot is not None:
                parts.append(f"slot={g.slot}")
                parts.append(f"scale={g.scale!r}")
            if g.angle:
                parts.append(f"angle={g.angle!r}")
            if g.name:
                parts.append(f"name={g.name}")
            if g.matrix is not None:
                flat = g.matrix.reshape(-1)
                parts.append("m=" + ";".join(f"{z.real!r},{z.imag!r}" for z in flat))
            out.append(" ".join(parts))
        return "\n".join(out) + "\n"

    @classmethod
    def from_text(cls, text):
        circ = None
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                kv = dict(tok.split("=") for tok in line[1:].split())
                circ = cls(int(kv["n_qubits"]), global_phase=float(kv.get("global_phase", 0.0)))
                continue
            if line.startswith("slot "):
                _, _, name = line.split(maxsplit=2)
                circ.add_slot(name)
                continue
            toks = line.split()
            kind, qubits = toks[0], tuple(int(q) for q in toks[1].split(","))
            kw = dict(t.split("=", 1) for t in toks[2:])
            matrix = None
            if "m" in kw:
                vals = [complex(float(a), float(b)) for a, b in (p.split(",") for p in kw["m"].split(";"))]
                n = int(round(np.sqrt(len(vals))))
                matrix = np.array(vals).reshape(n, n)
            slot = int(kw["slot"]) if "slot" in kw else None
            circ.append(Gate(kind, qubits, slot, float(kw.get("scale", 1.0)), float(kw.get("angle", 0.0)),
                             matrix, kw.get("name", "")))
        return circ


# ----------------------------------------------------------------------------
# gate matrices
# ----------------------------------------------------------------------------

def rotation_matrix(kind, a, n=1):
    c, s = np.cos(a / 2), np.sin(a / 2)
    if kind == "rx":
        return np.array([[c, -1j * s], [-1j * s, c]])
    if kind == "ry":
        return np.array([[c, -s], [s, c]], dtype=complex)
    if kind == "rz":
        return np.diag([np.exp(-0.5j * a), np.exp(0.5j * a)])
    if kind == "rzs":
        idx = np.arange(2 ** n)
        par = np.zeros(2 ** n, dtype=int)
        for q in range(n):
            par ^= (idx >> q) & 1
        return np.diag(np.exp(-0.5j * a * (1 - 2 * par)))
    raise KeyError(kind)


def gate_matrix(g: Gate, theta=None):
    k = len(g.qubits)
    if g.kind in ROTATIONS:
        return rotation_matrix(g.kind, g.bound_angle(theta), k)
    if g.kind == "cz":
        return np.diag([1, 1, 1, -1]).astype(complex)
    if g.kind == "cx":
        # control = first listed qubit (bit 0), target = second (bit 1)
        return np.array([[1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0], [0, 1, 0, 0]], dtype=complex)
    if g.kind == "swap":
        return np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)
    return g.matrix


def _generator(g: Gate):
    """Pauli generator P with R(a) = exp(-i a/2 P), as a dense matrix on the gate qubits."""
    k = len(g.qubits)
    if g.kind == "rx":
        return PAULI_MATS["X"]
    if g.kind == "ry":
        return PAULI_MATS["Y"]
    if g.kind == "rz":
        return PAULI_MATS["Z"]
    idx = np.arange(2 ** k)
    par = np.zeros(2 ** k, dtype=int)
    for q in range(k):
        par ^= (idx >> q) & 1
    return np.diag(1.0 - 2 * par).astype(complex)


# ----------------------------------------------------------------------------
# statevector kernels on flat little-endian vectors
# ----------------------------------------------------------------------------

def _apply_1q(psi, U, q):
    b = 1 << q
    v = psi.reshape(-1, 2, b)
    if U[0, 1] == 0 and U[1, 0] == 0:
        v[:, 0, :] *= U[0, 0]
        v[:, 1, :] *= U[1, 1]
        return psi
    if b >= 4:
        return np.matmul(U, v).reshape(-1)
    a0 = v[:, 0, :]
    a1 = v[:, 1, :]
    out = np.empty_like(v)
    np.multiply(a0, U[0, 0], out=out[:, 0, :])
    out[:, 0, :] += U[0, 1] * a1
    np.multiply(a0, U[1, 0], out=out[:, 1, :])
    out[:, 1, :] += U[1, 1] * a1
    return out.reshape(-1)


def _view2(psi, qa, qb, n):
    lo, hi = min(qa, qb), max(qa, qb)
    return psi.reshape(2 ** (n - 1 - hi), 2, 2 ** (hi - lo - 1), 2, 2 ** lo)


def _apply_2q(psi, U, qa, qb, n):
    t = psi.reshape((2,) * n)
    # U is [out_b, out_a, in_b, in_a] in tensor order (qa is the low bit)
    axes = [n - 1 - qb, n - 1 - qa]
    out = np.tensordot(U.reshape(2, 2, 2, 2), t, axes=([2, 3], axes))
    return np.ascontiguousarray(np.moveaxis(out, [0, 1], axes)).reshape(-1)


def _apply_dense(psi, U, qubits, n):
    k = len(qubits)
    if k == 1:
        return _apply_1q(psi, U, qubits[0])
    if k == 2:
        return _apply_2q(psi, U, qubits[0], qubits[1], n)
    lo, hi = min(qubits), max(qubits)
    if hi - lo + 1 == k:
        # contiguous block: a single batched matmul, no transposes
        U = _embed(U, qubits, range(lo, hi + 1))
        v = psi.reshape(-1, 2 ** k, 2 ** lo)
        if lo == 0:
            return (v[:, :, 0] @ U.T).reshape(-1)
        return np.matmul(U, v).reshape(-1)
    t = psi.reshape((2,) * n)
    axes = [n - 1 - q for q in reversed(qubits)]
    out = np.tensordot(U.reshape((2,) * (2 * k)), t, axes=(list(range(k, 2 * k)), axes))
    out = np.moveaxis(out, list(range(k)), axes)
    return np.ascontiguousarray(out).reshape(-1)


def _zstring_phase(qubits, a, n):
    sign = np.ones([1] * n)
    for q in qubits:
        shape = [1] * n
        shape[n - 1 - q] = 2
        sign = sign * np.array([1.0, -1.0]).reshape(shape)
    return np.exp(-0.5j * a * sign)


def apply_gate(psi, g: Gate, n, theta=None, inverse=False):
    """Apply one gate (or its inverse) to a flat statevector, returning the new vector."""
    kind = g.kind
    if kind in ROTATIONS:
        a = g.bound_angle(theta)
        if inverse:
            a = -a
        if kind == "rzs":
            if len(g.qubits) == 1:
                return _apply_1q(psi, rotation_matrix("rz", a), g.qubits[0])
            t = psi.reshape((2,) * n)
            t *= _zstring_phase(g.qubits, a, n)
            return psi
        return _apply_1q(psi, rotation_matrix(kind, a), g.qubits[0])
    if kind == "cz":
        v = _view2(psi, g.qubits[0], g.qubits[1], n)
        v[:, 1, :, 1, :] *= -1
        return psi
    if kind == "cx":
        c, t = g.qubits
        v = _view2(psi, c, t, n)
        if c > t:
            tmp = v[:, 1, :, 0, :].copy()
            v[:, 1, :, 0, :] = v[:, 1, :, 1, :]
            v[:, 1, :, 1, :] = tmp
        else:
            tmp = v[:, 0, :, 1, :].copy()
            v[:, 0, :, 1, :] = v[:, 1, :, 1, :]
            v[:, 1, :, 1, :] = tmp
        return psi
    if kind == "swap":
        v = _view2(psi, g.qubits[0], g.qubits[1], n)
        tmp = v[:, 0, :, 1, :].copy()
        v[:, 0, :, 1, :] = v[:, 1, :, 0, :]
        v[:, 1, :, 0, :] = tmp
        return psi
    U = g.matrix.conj().T if inverse else g.matrix
    return _apply_dense(psi, U, g.qubits, n)


def _embed(U, qubits, onto):
    """Write a dense gate on ``qubits`` as a matrix on the ordered qubit list ``onto``."""
    k = len(onto)
    qubits = list(qubits)
    onto = list(onto)
    if qubits == onto:
        return U
    if k == 2 and len(qubits) == 1:
        full = np.zeros((4, 4), dtype=complex)
        if qubits[0] == onto[0]:
            full[:2, :2] = U
            full[2:, 2:] = U
        else:
            full[0::2, 0::2] = U
            full[1::2, 1::2] = U
        return full
    if k == 2 and qubits == onto[::-1]:
        return U.reshape(2, 2, 2, 2).transpose(1, 0, 3, 2).reshape(4, 4)
    pos = [onto.index(q) for q in qubits]
    full = np.zeros((2 ** k, 2 ** k), dtype=complex)
    m = len(qubits)
    for col in range(2 ** k):
        sub_in = sum(((col >> pos[i]) & 1) << i for i in range(m))
        rest = col
        for p in pos:
            rest &= ~(1 << p)
        for sub_out in range(2 ** m):
            amp = U[sub_out, sub_in]
            if amp == 0:
                continue
            row = rest
            for i in range(m):
                row |= ((sub_out >> i) & 1) << pos[i]
            full[row, col] += amp
    return full


def fuse_groups(circuit: Circuit, width=2):
    """Greedy partition of the gate list into runs acting within at most ``width`` qubits."""
    groups = []
    cur, cq = [], []
    for i, g in enumerate(circuit.gates):
        union = cq + [q for q in g.qubits if q not in cq]
        if cur and len(union) <= width:
            cur.append(i)
            cq = union
        else:
            if cur:
                groups.append((tuple(cq), cur))
            cur, cq = [i], list(g.qubits)
    if cur:
        groups.append((tuple(cq), cur))
    return groups


def bind(circuit: Circuit, theta=None, fuse=False, width=2):
    """Concrete (matrix, qubits) list; runs of gates within ``width`` qubits are merged when ``fuse``."""
    if not fuse:
        return [(gate_matrix(g, theta), tuple(g.qubits)) for g in circuit.gates]
    return [(_group_ops(circuit, qs, idx, theta)[0], qs) for qs, idx in fuse_groups(circuit, width)]


def apply_circuit(psi, circuit: Circuit, theta=None, fuse=False):
    """Run ``circuit`` on a statevector (copied) and return the result."""
    theta = np.asarray(theta, dtype=float) if theta is not None else np.zeros(circuit.n_params)
    if len(theta) != circuit.n_params:
        raise ValueError(f"expected {circuit.n_params} parameters, got {len(theta)}")
    n = circuit.n_qubits
    psi = np.array(psi, dtype=complex).reshape(-1)
    if psi.size != 2 ** n:
        raise ValueError("state size does not match the register")
    if fuse:
        # blocks of up to four qubits (two sites) halve the passes over the state
        for U, qs in bind(circuit, theta, fuse=True, width=4):
            if len(qs) == 1 and U[0, 1] == 0 and U[1, 0] == 0:
                psi = _apply_1q(psi, U, qs[0])
            else:
                psi = _apply_dense(psi, U, qs, n)
    else:
        for g in circuit.gates:
            psi = apply_gate(psi, g, n, theta)
    if circuit.global_phase:
        psi *= np.exp(1j * circuit.global_phase)
    return psi


def zero_state(n):
    psi = np.zeros(2 ** n, dtype=complex)
    psi[0] = 1.0
    return psi


def circuit_unitary(circuit: Circuit, theta=None):
    n = circuit.n_qubits
    if n > 12:
        raise ValueError("register too large for a dense unitary")
    # run once on a doubled register whose high qubits label the column
    wide = Circuit(2 * n).extend(circuit)
    out = apply_circuit(np.eye(2 ** n, dtype=complex).reshape(-1), wide, theta, fuse=True)
    return out.reshape(2 ** n, 2 ** n).T


def _group_ops(circuit: Circuit, qs, idx, theta, with_derivs=False):
    """Matrix of a fused gate run and, optionally, (slot, dU) for each parametric member."""
    mats = [_embed(gate_matrix(circuit.gates[i], theta), circuit.gates[i].qubits, qs) for i in idx]
    U = mats[0]
    for m in mats[1:]:
        U = m @ U
    if not with_derivs:
        return U, []
    derivs = []
    for k, i in enumerate(idx):
        g = circuit.gates[i]
        if g.slot is None:
            continue
        d = _embed(_generator(g), g.qubits, qs) @ mats[k]
        pre = mats[0] if k else None
        for m in mats[1:k]:
            pre = m @ pre
        if pre is not None:
            d = d @ pre
        for m in mats[k + 1:]:
            d = m @ d
        derivs.append((g.slot, -0.5j * g.scale * d))
    return U, derivs


def _window_matrix(psi, qs, n):
    """(2^k, rest) matrix with row index little-endian over ``qs``."""
    t = psi.reshape((2,) * n)
    axes = [n - 1 - q for q in reversed(qs)]
    return np.moveaxis(t, axes, list(range(len(qs)))).reshape(2 ** len(qs), -1)


def adjoint_gradient(circuit: Circuit, theta, psi0, grad_state):
    """d/dtheta of a real objective J(psi) whose state gradient is ``grad_state``.

    ``grad_state`` must satisfy dJ = Re<grad_state|d psi> at psi = U(theta) psi0.
    Gates are fused into runs on at most two qubits and differentiated run by run.
    """
    theta = np.asarray(theta, dtype=float)
    n = circuit.n_qubits
    groups = fuse_groups(circuit)
    ops = [_group_ops(circuit, qs, idx, theta, True) for qs, idx in groups]
    psi = np.array(psi0, dtype=complex)
    for (qs, _), (U, _) in zip(groups, ops):
        psi = _apply_dense(psi, U, qs, n)
    lam = np.array(grad_state, dtype=complex)
    if circuit.global_phase:
        lam *= np.exp(-1j * circuit.global_phase)
    grad = np.zeros(circuit.n_params)
    for (qs, _), (U, derivs) in zip(reversed(groups), reversed(ops)):
        Ud = U.conj().T
        psi = _apply_dense(psi, Ud, qs, n)
        if derivs:
            E = _window_matrix(lam, qs, n).conj() @ _window_matrix(psi, qs, n).T
            for slot, dU in derivs:
                grad[slot] += float(np.sum(E * dU).real)
        lam = _apply_dense(lam, Ud, qs, n)
    return grad


# ----------------------------------------------------------------------------
# measurements and reduced states
# ----------------------------------------------------------------------------

def probabilities(psi):
    p = np.abs(psi) ** 2
    return p / p.sum()


def bitstring(index, n):
    return "".join(str((index >> q) & 1) for q in range(n))


def sample(psi, shots, rng, n=None):
    """Draw computational-basis samples; returns a Counter of bitstrings."""
    n = int(np.log2(len(psi))) if n is None else n
    idx = rng.choice(len(psi), size=shots, p=probabilities(psi))
    vals, cnt = np.unique(idx, return_counts=True)
    return Counter({bitstring(int(v), n): int(c) for v, c in zip(vals, cnt)})


def expectation(psi, op: PauliSum):
    if op.is_diagonal():
        return float(np.dot(np.abs(psi) ** 2, op.diagonal()))
    return float(np.vdot(psi, op.to_sparse() @ psi).real)


def site_matrix(psi, keep_sites, L, n_levels):
    """Reshape a state into a (window, rest) matrix for the listed sites."""
    keep = list(keep_sites)
    if len(set(keep)) != len(keep):
        raise ValueError("repeated site in window")
    t = psi.reshape((n_levels,) * L)
    rest = [j for j in range(L) if j not in keep]
    # window index: first listed site is the most significant digit
    order = [L - 1 - j for j in keep] + [L - 1 - j for j in rest]
    t = np.transpose(t, order)
    return t.reshape(n_levels ** len(keep), -1)


def unsite_matrix(mat, keep_sites, L, n_levels):
    keep = list(keep_sites)
    rest = [j for j in range(L) if j not in keep]
    order = [L - 1 - j for j in keep] + [L - 1 - j for j in rest]
    t = mat.reshape((n_levels,) * L)
    return np.ascontiguousarray(np.transpose(t, np.argsort(order))).reshape(-1)


def reduce(psi, keep_sites, L, n_levels):
    """Reduced density matrix on ``keep_sites`` (listed order, first site most significant)."""
    a = site_matrix(psi, keep_sites, L, n_levels)
    return a @ a.conj().T


def _psd_factor(rho, tol=1e-14):
    w, v = np.linalg.eigh((rho + rho.conj().T) / 2)
    w = np.where(w > tol * max(w.max(), 1e-300), w, 0.0)
    return v * np.sqrt(w)


def local_infidelity(rho_t, rho_a):
    """1 - (tr sqrt(sqrt(rho_t) rho_a sqrt(rho_t)))**2."""
    a = _psd_factor(rho_t)
    b = _psd_factor(rho_a)
    s = np.linalg.svd(a.conj().T @ b, compute_uv=False).sum()
    return float(1.0 - s ** 2)


def _compact(a):
    """Purification with an environment no larger than the window."""
    if a.shape[1] <= a.shape[0]:
        return a
    r = np.linalg.qr(a.conj().T, mode="r")
    return r.conj().T


def state_infidelity(psi_t, psi_a, window, L, n_levels):
    """Local infidelity of two pure states on a window of sites, without forming density matrices."""
    a = _compact(site_matrix(psi_t, window, L, n_levels))
    b = _compact(site_matrix(psi_a, window, L, n_levels))
    s = np.linalg.svd(a.conj().T @ b, compute_uv=False).sum()
    return float(1.0 - s ** 2)


def state_infidelity_grad(psi_t, psi_a, window, L, n_levels):
    """Value and state gradient (dJ = Re<g|d psi_a>) of the local infidelity."""
    A = site_matrix(psi_a, window, L, n_levels)
    B = site_matrix(psi_t, window, L, n_levels)
    m = A.conj().T @ B
    u, s, vh = np.linalg.svd(m)
    q = u @ vh
    f = s.sum()
    g = -2.0 * f * (B @ q.conj().T)
    return float(1.0 - f ** 2), unsite_matrix(g, window, L, n_levels)


def contiguous_window(start, d, L):
    if d > L:
        raise ValueError("window larger than lattice")
    if start < 0 or start + d > L:
        raise ValueError("window must not wrap the boundary")
    return list(range(start, start + d))


# ----------------------------------------------------------------------------
# site-register building blocks
# ----------------------------------------------------------------------------

def site_qubits(j, n_q):
    return tuple(range(n_q * j, n_q * j + n_q))


def sqft_gate(site, n_q, phi_max, inverse=False):
    w = sqft_matrix(n_q, phi_max)
    if inverse:
        return dense(w.conj().T, site_qubits(site, n_q), name="isqft")
    return dense(w, site_qubits(site, n_q), name="sqft")


def sqft_native(q0, q1, inverse=False):
    """Native-gate form of the two-qubit site transform (H, rz, rzz, swap), exact up to phase.

    For two qubits per site the transform does not depend on phi_max.
    """
    # W = phase * D F D with D = diag(exp(3i pi l/4)) and F the 4-point DFT (omega = e^{-i pi/2})
    gates = []
    ph = 3 * np.pi / 4

    def diag_phase():
        # exp(i ph l), l = b0 + 2 b1 -> rz(ph) on q0, rz(2 ph) on q1 up to phase
        return [rot("rz", q0, angle=ph), rot("rz", q1, angle=2 * ph)]

    gates += diag_phase()
    gates.append(dense(H_GATE, (q1,), name="h"))
    # controlled phase (-i)^{b0 c0} = CP(-pi/2)
    phi = -np.pi / 2
    gates += [rot("rz", q0, angle=phi / 2), rot("rz", q1, angle=phi / 2), rot("rzs", (q0, q1), angle=-phi / 2)]
    gates.append(dense(H_GATE, (q0,), name="h"))
    gates.append(Gate("swap", (q0, q1)))
    gates += diag_phase()
    if inverse:
        inv = []
        for g in reversed(gates):
            if g.kind in ROTATIONS:
                inv.append(Gate(g.kind, g.qubits, None, 1.0, -g.angle))
            elif g.kind == "u":
                inv.append(dense(g.matrix.conj().T, g.qubits, g.name))
            else:
                inv.append(g)
        gates = inv
    return gates


def diagonal_rotations(op: PauliSum, tau, qubit_offset=0):
    """Gates for exp(-i tau op) with op a Z-string sum; returns (gates, global phase)."""
    gates = []
    phase = 0.0
    for label, c in sorted(op.terms.items()):
        qs = tuple(qubit_offset + q for q, ch in enumerate(label) if ch == "Z")
        if not qs:
            phase -= tau * c.real
            continue
        kind = "rz" if len(qs) == 1 else "rzs"
        gates.append(rot(kind, qs, angle=2 * tau * c.real))
    return gates, phase


def field_diagonal_pauli(params: ModelParams, lam_scale=1.0):
    terms = HamiltonianTerms(params).pauli_terms()
    return terms["phi"] + terms["kin"] + terms["int"] * lam_scale


def trotter2_circuit(params: ModelParams, t, n_steps, lam_scale=1.0):
    """Second-order product formula: exp(-i dt/2 D) exp(-i dt H_pi) exp(-i dt/2 D) per step."""
    if n_steps < 1:
        raise ValueError("need at least one Trotter step")
    dt = t / n_steps
    n = params.n_qubits
    circ = Circuit(n)
    d_op = field_diagonal_pauli(params, lam_scale)
    half_gates, half_phase = diagonal_rotations(d_op, dt / 2)
    pi2 = pi_pauli(params.n_q, params.phi_max)
    pi2 = pi2 * pi2 * 0.5
    pi_gates, pi_phase = diagonal_rotations(pi2, dt)
    for _ in range(n_steps):
        for g in half_gates:
            circ.append(g)
        circ.global_phase += half_phase
        for j in range(params.L):
            circ.append(sqft_gate(j, params.n_q, params.phi_max))
            for g in pi_gates:
                circ.append(g.remap({q: params.n_q * j + q for q in range(params.n_q)}))
            circ.global_phase += pi_phase
            circ.append(sqft_gate(j, params.n_q, params.phi_max, inverse=True))
        for g in half_gates:
            circ.append(g)
        circ.global_phase += half_phase
    return circ


def _lower(g: Gate):
    """Native replacement of one gate (list of gates, global phase)."""
    k = len(g.qubits)
    if g.kind == "u" and k == 2 and g.name in ("sqft", "isqft"):
        seq = sqft_native(g.qubits[0], g.qubits[1], inverse=(g.name == "isqft"))
        u = np.eye(4, dtype=complex)
        for U, qs in bind(Circuit(max(g.qubits) + 1, seq)):
            u = _embed(U, qs, list(g.qubits)) @ u
        # the native sequence matches the dense gate up to a global phase
        return seq, float(np.angle(np.trace(u.conj().T @ g.matrix) / 4))
    if g.kind == "u" and k >= 2:
        raise ValueError(f"no native decomposition for dense gate {g.name!r}")
    if g.kind == "swap":
        a, b = g.qubits
        return [Gate("cx", (a, b)), Gate("cx", (b, a)), Gate("cx", (a, b))], 0.0
    if g.kind == "rzs" and k >= 2:
        qs = list(g.qubits)
        ladder = [Gate("cx", (qs[i], qs[i + 1])) for i in range(k - 1)]
        return ladder + [Gate("rz", (qs[-1],), g.slot, g.scale, g.angle)] + ladder[::-1], 0.0
    return None, 0.0


def compile_native(circuit: Circuit):
    """Rewrite site transforms, swaps and Z-string rotations into {1q, CX, CZ}."""
    out = Circuit(circuit.n_qubits, [], list(circuit.slot_names), circuit.global_phase)
    todo = list(reversed(circuit.gates))
    while todo:
        g = todo.pop()
        seq, ph = _lower(g)
        if seq is None:
            out.gates.append(g)
        else:
            out.global_phase += ph
            todo.extend(reversed(seq))
    return out


# ----------------------------------------------------------------------------
# time evolution
# ----------------------------------------------------------------------------

class TrotterEvolver:
    """Fast second-order product-formula evolution acting directly on statevectors."""

    def __init__(self, ham: HamiltonianTerms):
        self.ham = ham
        self.params = ham.params
        w, v = np.linalg.eigh(ham.pi2_site)
        self._pi_eig = (w, v)
        self._cache = {}

    def _pi_prop(self, dt):
        w, v = self._pi_eig
        return (v * np.exp(-1j * dt * w)) @ v.conj().T

    def step(self, psi, dt, lam_scale=1.0, n_steps=1):
        p = self.params
        key = (dt, lam_scale)
        if key not in self._cache:
            self._cache.clear()
            d = self.ham.field_diagonal(lam_scale)
            self._cache[key] = (np.exp(-0.5j * dt * d), np.exp(-1j * dt * d), self._pi_prop(dt))
        half, full, up = self._cache[key]
        psi = psi * half
        if up.dtype != psi.dtype:
            up = up.astype(psi.dtype)
        for s in range(n_steps):
            for j in range(p.L):
                psi = _site_apply(psi, up, j, p.L, p.n_levels)
            psi *= full if s < n_steps - 1 else half
        return psi

    def evolve(self, psi, t, n_steps, lam_scale=1.0):
        if n_steps < 1:
            raise ValueError("need at least one step")
        return self.step(np.array(psi, dtype=complex), t / n_steps, lam_scale, n_steps)


def _site_apply(psi, op, j, L, N):
    return apply_site_op(psi, op, j, L, N)


def _lanczos_expm(matvec, psi, t, m=30, tol=1e-12):
    """exp(-i H t) psi by short Krylov steps with an a-posteriori error estimate."""
    psi = np.array(psi, dtype=complex)
    nrm = np.linalg.norm(psi)
    tau_left = t
    while abs(tau_left) > 0:
        V = np.zeros((m + 1, psi.size), dtype=complex)
        alpha = np.zeros(m)
        beta = np.zeros(m)
        V[0] = psi / np.linalg.norm(psi)
        k = m
        for i in range(m):
            w = matvec(V[i])
            alpha[i] = np.vdot(V[i], w).real
            w = w - alpha[i] * V[i] - (beta[i - 1] * V[i - 1] if i else 0)
            # full reorthogonalization
            w -= V[: i + 1].T @ (V[: i + 1].conj() @ w)
            beta[i] = np.linalg.norm(w)
            if beta[i] < 1e-13:
                k = i + 1
                break
            V[i + 1] = w / beta[i]
        T = np.diag(alpha[:k]) + np.diag(beta[: k - 1], 1) + np.diag(beta[: k - 1], -1)
        ev, U = np.linalg.eigh(T)
        tau = tau_left
        while True:
            c = U @ (np.exp(-1j * ev * tau) * U[0].conj())
            err = abs(beta[k - 1] * c[-1]) if k == m else 0.0
            if err < tol or abs(tau) < 1e-8:
                break
            tau /= 2
        psi = np.linalg.norm(psi) * (V[:k].T @ c)
        tau_left -= tau
        if abs(tau_left) < 1e-15:
            break
    return psi * (nrm / np.linalg.norm(psi))


def exact_evolve(ham: HamiltonianTerms, psi, t, method="auto", dt=0.02):
    """exp(-i H t) psi.

    ``method``: 'dense' (eigendecomposition), 'krylov' (Lanczos), 'trotter'
    (second-order product formula with step ``dt``, for registers too large
    for a Krylov basis), or 'auto'.
    """
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    dim = ham.params.dim
    if method == "auto":
        method = "dense" if dim <= 2 ** 12 else ("krylov" if dim <= 2 ** 20 else "trotter")
    if t == 0:
        return psi.copy()
    if method == "dense":
        h = ham.to_sparse().toarray()
        w, v = np.linalg.eigh(h)
        return v @ (np.exp(-1j * w * t) * (v.conj().T @ psi))
    if method == "krylov":
        return _lanczos_expm(ham.matvec, psi, t)
    if method == "trotter":
        n = max(1, int(np.ceil(abs(t) / dt)))
        return TrotterEvolver(ham).evolve(psi, t, n)
    raise ValueError(method)


def exact_unitary(ham: HamiltonianTerms, t):
    h = ham.to_sparse().toarray()
    return sla.expm(-1j * t * h)


def phi2_expectations(psi, params: ModelParams):
    """<phi_j^2> for every site."""
    p = np.abs(psi.reshape((params.n_levels,) * params.L)) ** 2
    f2 = phi_grid(params.n_q, params.phi_max) ** 2
    out = []
    for j in range(params.L):
        ax = tuple(a for a in range(params.L) if a != params.L - 1 - j)
        out.append(float(p.sum(axis=ax) @ f2))
    return np.array(out)


def site_zz_pauli(params: ModelParams, j):
    """phi_j^2 = c0 + c1 * Z_a Z_b for n_q = 2; returns (c0, c1, (a, b))."""
    if params.n_q != 2:
        raise ValueError("ZZ form of phi^2 needs n_q = 2")
    f2, _ = phi2_phi4_pauli(2, params.phi_max)
    return f2.constant(), f2.terms["ZZ"].real, (2 * j, 2 * j + 1)

