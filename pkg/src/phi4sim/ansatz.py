"""Variational circuit families: vacuum input, O_d pool layers, wavepacket brickwall, evolution steps.

All families act on the two-qubit-per-site register of ``circuits``. The
two-qubit block is

    B(t1, t2, t3, t4) = (Ry(t3) x Rz(t4)) . CZ . (Rz(t1) x Ry(t2))

written on an ordered qubit pair (a, b): the first factor of each product acts
on ``a``. At zero angles a block is a bare CZ.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .circuits import Circuit, Gate, H_GATE, dense, rot, site_qubits, sqft_gate
from .lattice import ModelParams, phi_pauli, pi_pauli

FAMILIES = ("vacuum_input", "o_d_layer", "wavepacket_brickwall", "time_evo_step")
PARAM_COUNTS = {"vacuum_input": 1, "o_d_layer": 2, "wavepacket_layer": 20, "time_evo_layer": 12,
                "time_evo_step": 72}
EVO_LAYERS = 6


@dataclass(frozen=True)
class AnsatzSpec:
    family: str
    d: int | None = None
    layers: int = 1
    window: tuple = ()
    mirrored: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown ansatz family {self.family!r}")

    @property
    def n_params(self):
        if self.family == "vacuum_input":
            return 1
        if self.family == "o_d_layer":
            return 2 * self.layers
        if self.family == "wavepacket_brickwall":
            return 20 * self.layers
        return 12 * self.layers


@dataclass
class ParameterSet:
    role: str
    lam: float
    L: int
    values: np.ndarray
    t: float = 0.0
    provenance: str = "optimized"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    def to_rows(self):
        return [(self.role, self.lam, self.L, self.t, i, float(v)) for i, v in enumerate(self.values)]

    def to_csv(self):
        lines = ["role,lambda,L,t,index,value"]
        lines += [f"{r},{lam!r},{L},{t!r},{i},{v!r}" for r, lam, L, t, i, v in self.to_rows()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text, provenance="optimized"):
        sets = parameter_sets_from_csv(text, provenance)
        if len(sets) != 1:
            raise ValueError(f"expected one parameter set, found {len(sets)}")
        return sets[0]


def parameter_sets_from_csv(text, provenance="fixture"):
    """Parse a (role, lambda, L, t, index, value) table into parameter sets."""
    groups: dict = {}
    for line in text.strip().splitlines()[1:]:
        if not line.strip():
            continue
        role, lam, L, t, i, v = line.split(",")
        key = (role, float(lam), int(L), float(t))
        groups.setdefault(key, {})[int(i)] = float(v)
    out = []
    for (role, lam, L, t), vals in groups.items():
        arr = np.array([vals[i] for i in range(len(vals))])
        out.append(ParameterSet(role, lam, L, arr, t, provenance))
    return out


# ----------------------------------------------------------------------------
# shared pieces
# ----------------------------------------------------------------------------

def _require_two_qubit_sites(params: ModelParams):
    if params.n_q != 2:
        raise ValueError("variational families are built for two qubits per site")


def block(circ: Circuit, a, b, slots):
    """Append B(theta[slots]) on the ordered qubit pair (a, b)."""
    s1, s2, s3, s4 = slots
    circ.append(rot("rz", a, s1))
    circ.append(rot("ry", b, s2))
    circ.append(Gate("cz", (a, b)))
    circ.append(rot("ry", a, s3))
    circ.append(rot("rz", b, s4))
    return circ


def _reversed_gates(gates):
    """Same gates, opposite order (not the inverse)."""
    return list(reversed(gates))


# ----------------------------------------------------------------------------
# vacuum
# ----------------------------------------------------------------------------

def vacuum_input_circuit(params: ModelParams) -> Circuit:
    """Product state with amplitudes (cos t/2, sin t/2, sin t/2, cos t/2)/sqrt2 on every site.

    One shared slot ``t``; t = pi/2 gives the uniform superposition.
    """
    _require_two_qubit_sites(params)
    circ = Circuit(params.n_qubits)
    s = circ.add_slot("vac_input")
    for j in range(params.L):
        q0, q1 = site_qubits(j, 2)
        circ.append(rot("ry", q0, s))
        circ.append(dense(H_GATE, (q1,), name="h"))
        circ.append(Gate("cx", (q1, q0)))
    return circ


def site_input_amplitudes(theta):
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([c, s, s, c]) / math.sqrt(2)


def o_d_pairs(L, d):
    """Sublayers of (j, j+d) pairs for O_d = sum_j Pi_j phi_{j+d}; two colors when possible.

    Terms j and j+d share a site and do not commute; the conflict graph is a
    union of cycles, so a proper 2-coloring exists when every cycle is even and
    a third group is split off otherwise.
    """
    if not 1 <= d < L:
        raise ValueError("O_d needs 1 <= d < L")
    color = {}
    for start in range(L):
        if start in color:
            continue
        cyc = [start]
        j = (start + d) % L
        while j != start:
            cyc.append(j)
            j = (j + d) % L
        for i, j in enumerate(cyc):
            color[j] = i % 2
        if len(cyc) % 2 == 1 and len(cyc) > 1:
            color[cyc[-1]] = 2
    groups = [[(j, (j + d) % L) for j in range(L) if color[j] == c] for c in (0, 1, 2)]
    return [g for g in groups if g]


def _pi_phi_rotation(circ, params, j, k, slot):
    """exp(-i theta Pi_j phi_k) as SQFT on j, a ZZ ladder, and the inverse SQFT."""
    pi_d = pi_pauli(2, params.phi_max)
    ph = phi_pauli(2, params.phi_max)
    circ.append(sqft_gate(j, 2, params.phi_max))
    for la, ca in sorted(pi_d.terms.items()):
        for lb, cb in sorted(ph.terms.items()):
            qa = 2 * j + la.index("Z")
            qb = 2 * k + lb.index("Z")
            circ.append(rot("rzs", (qa, qb), slot, scale=2.0 * (ca * cb).real))
    circ.append(sqft_gate(j, 2, params.phi_max, inverse=True))


def o_d_circuit(params: ModelParams, d=1, layers=1, symmetric=True) -> Circuit:
    """One even and one odd sublayer of exp(-i theta O_d) on disjoint (j, j+d) pairs.

    With ``symmetric`` each pair gets exp(-i theta phi_j Pi_{j+d}) exp(-i theta Pi_j phi_{j+d}),
    the reflection-symmetric pair generator split into two exactly compilable
    factors; otherwise only the Pi_j phi_{j+d} factor. Either way the unitary is real.
    """
    _require_two_qubit_sites(params)
    circ = Circuit(params.n_qubits)
    groups = o_d_pairs(params.L, d)
    for layer in range(layers):
        s_even = circ.add_slot(f"O{d}_even_{layer}")
        s_odd = circ.add_slot(f"O{d}_odd_{layer}")
        for gi, pairs in enumerate(groups):
            slot = s_even if gi == 0 else s_odd
            for j, k in pairs:
                _pi_phi_rotation(circ, params, j, k, slot)
                if symmetric:
                    _pi_phi_rotation(circ, params, k, j, slot)
    return circ


def vacuum_circuit(params: ModelParams, pool=(1,), symmetric=True) -> Circuit:
    """Input layer followed by one O_d layer for every entry of ``pool`` (in order)."""
    circ = vacuum_input_circuit(params)
    for d in pool:
        circ.extend(o_d_circuit(params, d, symmetric=symmetric))
    return circ


# ----------------------------------------------------------------------------
# wavepackets
# ----------------------------------------------------------------------------

def packet_window(center, L, width=3):
    half = width // 2
    lo = center - half
    if lo < 0 or lo + width > L:
        raise ValueError("wavepacket window must not wrap the boundary")
    return tuple(range(lo, lo + width))


def wavepacket_circuit(params: ModelParams, window, layers=4, mirrored=False) -> Circuit:
    """Brickwall of B blocks on the qubits of a site window; 5 blocks (20 slots) per layer for 3 sites.

    The mirrored variant reflects the packet about the window centre with the
    same parameter values: qubits are reversed inside the window and a SWAP
    inside every site is applied before and after, so that the composite map
    is conjugation by the site reflection.
    """
    _require_two_qubit_sites(params)
    window = tuple(window)
    qs = [q for j in window for q in site_qubits(j, 2)]
    nw = len(qs)
    if mirrored:
        qs = qs[::-1]
    circ = Circuit(params.n_qubits)
    if mirrored:
        for j in window:
            circ.append(Gate("swap", site_qubits(j, 2)))
    for layer in range(layers):
        for start in (0, 1):
            for i in range(start, nw - 1, 2):
                slots = [circ.add_slot(f"wp{layer}_b{i}_{k}") for k in range(4)]
                block(circ, qs[i], qs[i + 1], slots)
    if mirrored:
        for j in window:
            circ.append(Gate("swap", site_qubits(j, 2)))
    return circ


# ----------------------------------------------------------------------------
# time evolution
# ----------------------------------------------------------------------------

def _evo_layer_gates(L, parity, base):
    """Gates of one evolution layer with slots base..base+11."""
    tmp = Circuit(2 * L, slot_names=[""] * (base + 12))
    on_site = [base + k for k in range(4)]
    pair0 = [base + 4 + k for k in range(4)]
    pair1 = [base + 8 + k for k in range(4)]
    for j in range(L):
        a, b = site_qubits(j, 2)
        block(tmp, a, b, on_site)
    for j in range(parity, L, 2):
        k = (j + 1) % L
        if k == j:
            continue
        block(tmp, 2 * j, 2 * k, pair0)
        block(tmp, 2 * j + 1, 2 * k + 1, pair1)
    return tmp.gates


def time_evolution_step(params: ModelParams, n_layers=EVO_LAYERS) -> Circuit:
    """``n_layers`` forward layers then the same layers in reverse gate order (12 slots per layer).

    Every layer applies one shared block on each site's qubit pair, then two
    shared blocks on each even (odd on alternate layers) neighbour pair, one on
    the low qubits and one on the high qubits. At zero angles each layer is a
    pattern of commuting CZs and the palindrome collapses to the identity.
    """
    _require_two_qubit_sites(params)
    L = params.L
    if L % 2:
        raise ValueError("evolution layers need an even number of sites")
    circ = Circuit(params.n_qubits)
    fwd = []
    for layer in range(n_layers):
        base = circ.n_params
        for k in range(12):
            circ.add_slot(f"evo{layer}_{k}")
        fwd += _evo_layer_gates(L, layer % 2, base)
    for g in fwd + _reversed_gates(fwd):
        circ.append(g)
    return circ


def n_evolution_steps(t, per_step=3.0):
    return int(math.ceil(t / per_step - 1e-12)) if t > 0 else 0


def time_evolution_circuit(params: ModelParams, t, n_layers=EVO_LAYERS) -> Circuit:
    """ceil(t/3) repetitions of one evolution step, all sharing the same slots."""
    step = time_evolution_step(params, n_layers)
    circ = Circuit(params.n_qubits, [], list(step.slot_names))
    for _ in range(n_evolution_steps(t)):
        circ.extend(step, share_slots=True)
    return circ


# ----------------------------------------------------------------------------
# assembly
# ----------------------------------------------------------------------------

def packet_centers(L, width=3):
    """Centres of the (left, right) packets: one empty site between two 3-site windows."""
    c = L // 2
    left, right = c - 2, c + 2
    packet_window(left, L, width)
    packet_window(right, L, width)
    if right - left < width + 1:
        raise ValueError("packet windows collide")
    return left, right


@dataclass
class AssembledCircuit:
    circuit: Circuit
    theta: np.ndarray
    sections: dict  # name -> (start slot, stop slot)

    @property
    def two_qubit_depth(self):
        return self.circuit.two_qubit_depth()

    @property
    def two_qubit_count(self):
        return self.circuit.two_qubit_count()


def assemble_full_circuit(params: ModelParams, vacuum_params, wavepacket_params=None, evo_params=None, t=0.0,
                          pool=(1,), packets="both", wavepacket_layers=None):
    """Vacuum preparation, mirrored/unmirrored packets, and ceil(t/3) evolution steps.

    ``packets`` is 'both', 'right', 'left' or 'none'. The right packet is the
    unmirrored circuit (moving left); the left packet is its mirror image.
    """
    circ = vacuum_circuit(params, pool)
    theta = list(np.asarray(vacuum_params, dtype=float))
    if len(theta) != circ.n_params:
        raise ValueError(f"vacuum needs {circ.n_params} parameters, got {len(theta)}")
    sections = {"vacuum": (0, circ.n_params)}
    if packets != "none":
        if wavepacket_params is None:
            raise ValueError("wavepacket parameters missing")
        wp = np.asarray(wavepacket_params, dtype=float)
        layers = wavepacket_layers or len(wp) // 20
        if len(wp) != 20 * layers:
            raise ValueError("wavepacket parameters must come in layers of 20")
        if packets == "both":
            left, right = packet_centers(params.L)
            todo = [(right, False), (left, True)]
        elif packets == "right":
            todo = [(params.L // 2, False)]
        elif packets == "left":
            todo = [(params.L // 2, True)]
        else:
            raise ValueError(f"unknown packet layout {packets!r}")
        start = circ.n_params
        for c, mir in todo:
            sub = wavepacket_circuit(params, packet_window(c, params.L), layers, mirrored=mir)
            if circ.n_params == start:
                circ.slot_names.extend(sub.slot_names)
            # both packets read the same slots
            for g in sub.gates:
                circ.append(g.shift_slot(start))
        theta += list(wp)
        sections["wavepacket"] = (start, circ.n_params)
    if t > 0:
        if evo_params is None:
            raise ValueError("evolution parameters missing")
        ev = np.asarray(evo_params, dtype=float)
        # layers per step follow from the parameter count (12 per layer)
        evo = time_evolution_circuit(params, t, n_layers=max(1, len(ev) // 12))
        if len(ev) != evo.n_params:
            raise ValueError(f"evolution needs {evo.n_params} parameters, got {len(ev)}")
        start = circ.n_params
        circ.extend(evo)
        theta += list(ev)
        sections["evolution"] = (start, circ.n_params)
    return AssembledCircuit(circ, np.array(theta), sections)
