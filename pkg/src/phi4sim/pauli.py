"""Sparse Pauli-string algebra.

Labels are strings with one character per qubit, character ``q`` acting on
qubit ``q`` (so ``"ZI"`` is Z on qubit 0). Basis index bit ``q`` is qubit ``q``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

PAULI_MATS = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

# single-qubit products: (a, b) -> (phase, c) with a*b = phase*c
_PRODUCT = {}
for _a in "IXYZ":
    for _b in "IXYZ":
        _m = PAULI_MATS[_a] @ PAULI_MATS[_b]
        for _c in "IXYZ":
            _ph = np.trace(PAULI_MATS[_c].conj().T @ _m) / 2
            if abs(_ph) > 0.5:
                _PRODUCT[(_a, _b)] = (complex(np.round(_ph)), _c)


def _string_product(a: str, b: str):
    phase = 1.0 + 0j
    out = []
    for x, y in zip(a, b):
        ph, c = _PRODUCT[(x, y)]
        phase *= ph
        out.append(c)
    return phase, "".join(out)


@dataclass
class PauliSum:
    """Linear combination of Pauli strings on ``n_qubits`` qubits."""

    n_qubits: int
    terms: dict = field(default_factory=dict)
    basis: str = "phi"  # which single-site basis the Z's refer to

    @classmethod
    def identity(cls, n_qubits, coeff=1.0, basis="phi"):
        return cls(n_qubits, {"I" * n_qubits: complex(coeff)}, basis)

    @classmethod
    def single(cls, n_qubits, ops: dict, coeff=1.0, basis="phi"):
        """Build ``coeff * prod_q ops[q]`` from a {qubit: 'X'|'Y'|'Z'} map."""
        label = ["I"] * n_qubits
        for q, p in ops.items():
            label[q] = p
        return cls(n_qubits, {"".join(label): complex(coeff)}, basis)

    def copy(self):
        return PauliSum(self.n_qubits, dict(self.terms), self.basis)

    def simplify(self, tol=1e-14):
        self.terms = {k: v for k, v in self.terms.items() if abs(v) > tol}
        return self

    def _check(self, other):
        if self.n_qubits != other.n_qubits:
            raise ValueError("qubit count mismatch")

    def __add__(self, other):
        if isinstance(other, (int, float, complex)):
            other = PauliSum.identity(self.n_qubits, other, self.basis)
        self._check(other)
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out.get(k, 0) + v
        return PauliSum(self.n_qubits, out, self.basis).simplify()

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other if isinstance(other, PauliSum) else -other)

    def __mul__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return PauliSum(self.n_qubits, {k: v * other for k, v in self.terms.items()}, self.basis).simplify()
        self._check(other)
        out: dict = {}
        for ka, va in self.terms.items():
            for kb, vb in other.terms.items():
                ph, kc = _string_product(ka, kb)
                out[kc] = out.get(kc, 0) + ph * va * vb
        return PauliSum(self.n_qubits, out, self.basis).simplify()

    def __rmul__(self, other):
        return self * other

    def embed(self, n_qubits, offset):
        """Place this operator on qubits ``offset..offset+n-1`` of a larger register."""
        out = {}
        for k, v in self.terms.items():
            lab = ["I"] * n_qubits
            lab[offset:offset + self.n_qubits] = k
            out["".join(lab)] = v
        return PauliSum(n_qubits, out, self.basis)

    # --- properties -----------------------------------------------------
    def is_diagonal(self):
        return all(set(k) <= {"I", "Z"} for k in self.terms)

    def is_hermitian(self, tol=1e-12):
        return all(abs(v.imag) < tol for v in self.terms.values())

    def constant(self):
        return self.terms.get("I" * self.n_qubits, 0.0).real

    def diagonal(self):
        """Diagonal of a Z-only sum as a real vector of length 2**n."""
        if not self.is_diagonal():
            raise ValueError("operator is not diagonal")
        n = self.n_qubits
        idx = np.arange(2 ** n)
        bits = [1 - 2 * ((idx >> q) & 1) for q in range(n)]
        out = np.zeros(2 ** n)
        for k, v in self.terms.items():
            t = np.full(2 ** n, v.real)
            for q, c in enumerate(k):
                if c == "Z":
                    t = t * bits[q]
            out += t
        return out

    def to_sparse(self):
        n = self.n_qubits
        if n > 22:
            raise ValueError("register too large for a sparse matrix")
        dim = 2 ** n
        mat = sp.csr_matrix((dim, dim), dtype=complex)
        for k, v in self.terms.items():
            op = sp.identity(1, dtype=complex, format="csr")
            # qubit 0 is the least significant bit -> rightmost kron factor
            for c in reversed(k):
                op = sp.kron(op, sp.csr_matrix(PAULI_MATS[c]), format="csr")
            mat = mat + v * op
        return mat

    def to_dense(self):
        return self.to_sparse().toarray()

    # --- text form ------------------------------------------------------
    def to_text(self):
        lines = [f"# n_qubits={self.n_qubits} basis={self.basis}"]
        for k in sorted(self.terms):
            v = self.terms[k]
            c = repr(v.real) if abs(v.imag) < 1e-15 else repr(v)
            lines.append(f"{c} {k}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        n, basis, terms = None, "phi", {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    key, _, val = tok.partition("=")
                    if key == "n_qubits":
                        n = int(val)
                    elif key == "basis":
                        basis = val
                continue
            coeff, label = line.split()
            terms[label] = terms.get(label, 0) + complex(coeff)
            n = len(label) if n is None else n
        if n is None:
            raise ValueError("empty Pauli sum")
        return cls(n, terms, basis)
