"""Noisy-device emulation and the mitigation stack: Pauli twirling, TREX, ODR, filtering, bootstrap."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .circuits import (Circuit, Gate, apply_gate, bitstring, compile_native, dense, gate_matrix,
                       phi2_expectations, probabilities, zero_state)
from .fitting import fit_exponential
from .lattice import ModelParams, phi2_phi4_pauli
from .pauli import PAULI_MATS

PAULIS = "IXYZ"
ENTANGLERS = ("cz", "cx")


@dataclass(frozen=True)
class NoiseModel:
    p2: float = 0.003  # two-qubit depolarizing probability per entangler
    readout01: float = 0.0  # P(read 1 | 0)
    readout10: float = 0.0  # P(read 0 | 1)
    pair_p: dict | None = None  # optional {(a, b): p} heterogeneous profile on the device ring
    seed: int = 0

    def __post_init__(self):
        vals = [self.p2, self.readout01, self.readout10] + list((self.pair_p or {}).values())
        if any(not 0.0 <= v <= 0.5 for v in vals):
            raise ValueError("noise probabilities must lie in [0, 0.5]")

    def gate_error(self, a, b, n, offset=0):
        if not self.pair_p:
            return self.p2
        key = tuple(sorted(((a + offset) % n, (b + offset) % n)))
        return self.pair_p.get(key, self.p2)


# ----------------------------------------------------------------------------
# twirling
# ----------------------------------------------------------------------------

def _pauli_mat(label):
    m = np.eye(1)
    for c in reversed(label):  # label[0] on the first gate qubit (lowest bit)
        m = np.kron(m, PAULI_MATS[c])
    return m


def _conjugate_label(U, label):
    """Pauli label Q with U P U^dag = +-Q (U Clifford)."""
    m = U @ _pauli_mat(label) @ U.conj().T
    for a in PAULIS:
        for b in PAULIS:
            q = a + b
            if abs(abs(np.trace(_pauli_mat(q).conj().T @ m)) / 4 - 1) < 1e-9:
                return q
    raise ValueError("gate is not Clifford")


_FRAMES = {}
for _kind in ENTANGLERS:
    _U = gate_matrix(Gate(_kind, (0, 1)))
    _FRAMES[_kind] = {a + b: _conjugate_label(_U, a + b) for a in PAULIS for b in PAULIS}


def pauli_gate(label, q):
    return dense(PAULI_MATS[label], (q,), name=label.lower())


@dataclass
class TwirlPlan:
    frames: list = field(default_factory=list)  # (gate index, before label, after label)
    trex_mask: int = 0
    layout_offset: int = 0


def pauli_twirl(circuit: Circuit, rng) -> tuple:
    """Sandwich every CZ/CX between a random Pauli frame and its conjugate."""
    out = Circuit(circuit.n_qubits, [], list(circuit.slot_names), circuit.global_phase)
    plan = TwirlPlan()
    for i, g in enumerate(circuit.gates):
        if g.kind in ENTANGLERS:
            before = PAULIS[rng.integers(4)] + PAULIS[rng.integers(4)]
            after = _FRAMES[g.kind][before]
            for c, q in zip(before, g.qubits):
                if c != "I":
                    out.append(pauli_gate(c, q))
            out.append(g)
            for c, q in zip(after, g.qubits):
                if c != "I":
                    out.append(pauli_gate(c, q))
            plan.frames.append((i, before, after))
        elif len(g.qubits) > 1 and g.two_qubit_cost() > 0:
            raise ValueError(f"cannot twirl {g.kind!r}; compile to native entanglers first")
        else:
            out.append(g)
    return out, plan


def trex_twirl(circuit: Circuit, rng) -> tuple:
    """Random X layer before measurement; returns (circuit, flip mask) for classical correction."""
    out = circuit.copy()
    mask = 0
    for q in range(circuit.n_qubits):
        if rng.integers(2):
            out.append(pauli_gate("X", q))
            mask |= 1 << q
    return out, mask


# ----------------------------------------------------------------------------
# shot-level simulation
# ----------------------------------------------------------------------------

def _two_qubit_paulis():
    return [a + b for a in PAULIS for b in PAULIS if a + b != "II"]


_ERRORS = _two_qubit_paulis()


def _apply_pauli(psi, label, qubits, n):
    for c, q in zip(label, qubits):
        if c != "I":
            psi = apply_gate(psi, pauli_gate(c, q), n)
    return psi


def _readout(samples, n, noise: NoiseModel, rng):
    if noise.readout01 == 0 and noise.readout10 == 0:
        return samples
    out = samples.copy()
    for q in range(n):
        bit = (samples >> q) & 1
        u = rng.random(len(samples))
        flip = np.where(bit == 0, u < noise.readout01, u < noise.readout10)
        out ^= flip.astype(np.int64) << q
    return out


def simulate_noisy_samples(circuit: Circuit, noise: NoiseModel, shots, rng, theta=None, psi0=None,
                           trajectories=16, trex_mask=0, layout_offset=0, error_rng=None):
    """Integer samples from Monte-Carlo Pauli trajectories with readout error.

    Each trajectory draws a random depolarizing error after every entangler
    and contributes an equal share of the shots. ``trex_mask`` is the X layer
    already appended to the circuit; the classical flip is undone here.
    ``error_rng`` (default ``rng``) draws the error locations, so two circuits
    with the same entangler layout can share one noise realization.
    """
    error_rng = rng if error_rng is None else error_rng
    n = circuit.n_qubits
    if n > 26:
        raise ValueError("register too large for statevector emulation")
    theta = np.zeros(circuit.n_params) if theta is None else np.asarray(theta, dtype=float)
    psi_init = zero_state(n) if psi0 is None else np.asarray(psi0, dtype=complex)
    ent = [i for i, g in enumerate(circuit.gates) if g.kind in ENTANGLERS]
    probs = np.array([noise.gate_error(*circuit.gates[i].qubits, n, layout_offset) for i in ent])
    # noiseless checkpoints after each entangler let trajectories restart at their first error
    checkpoints = {}
    psi = psi_init.copy()
    ent_set = set(ent)
    for i, g in enumerate(circuit.gates):
        psi = apply_gate(psi, g, n, theta)
        if i in ent_set:
            checkpoints[i] = psi.copy()
    if circuit.global_phase:
        psi = psi * np.exp(1j * circuit.global_phase)
    clean = psi
    trajectories = max(1, min(trajectories, shots))
    per = np.full(trajectories, shots // trajectories)
    per[: shots % trajectories] += 1
    out = []
    for k in range(trajectories):
        hits = np.nonzero(error_rng.random(len(ent)) < probs)[0]
        if len(hits) == 0:
            state = clean
        else:
            first = ent[hits[0]]
            errs = {ent[h]: _ERRORS[error_rng.integers(len(_ERRORS))] for h in hits}
            state = checkpoints[first].copy()
            state = _apply_pauli(state, errs[first], circuit.gates[first].qubits, n)
            for i in range(first + 1, len(circuit.gates)):
                g = circuit.gates[i]
                state = apply_gate(state, g, n, theta)
                if i in errs:
                    state = _apply_pauli(state, errs[i], g.qubits, n)
        s = rng.choice(len(state), size=int(per[k]), p=probabilities(state))
        out.append(s)
    samples = _readout(np.concatenate(out).astype(np.int64), n, noise, rng)
    return samples ^ trex_mask


def simulate_noisy(circuit: Circuit, noise: NoiseModel, shots, rng, theta=None, psi0=None, trajectories=16):
    """Bitstring counts (qubit 0 first) from ``simulate_noisy_samples``."""
    s = simulate_noisy_samples(circuit, noise, shots, rng, theta, psi0, trajectories)
    vals, cnt = np.unique(s, return_counts=True)
    return Counter({bitstring(int(v), circuit.n_qubits): int(c) for v, c in zip(vals, cnt)})


# ----------------------------------------------------------------------------
# measurement batches
# ----------------------------------------------------------------------------

@dataclass
class TwirlRecord:
    twirl_id: int
    trex_id: int
    counts: dict  # basis index -> count
    shots: int
    trex_mask: int = 0
    layout_offset: int = 0


@dataclass
class MeasurementBatch:
    n_qubits: int
    records: list = field(default_factory=list)
    tag: str = "physics"

    def twirl_ids(self):
        return sorted({r.twirl_id for r in self.records})

    def zz(self, pairs):
        """Per-twirl <Z_a Z_b> (TREX instances of a twirl pooled); array (n_twirls, n_pairs)."""
        ids = self.twirl_ids()
        out = np.zeros((len(ids), len(pairs)))
        for row, tid in enumerate(ids):
            recs = [r for r in self.records if r.twirl_id == tid]
            idx = np.concatenate([np.fromiter(r.counts.keys(), dtype=np.int64) for r in recs])
            cnt = np.concatenate([np.fromiter(r.counts.values(), dtype=float) for r in recs])
            for c, (a, b) in enumerate(pairs):
                par = ((idx >> a) ^ (idx >> b)) & 1
                out[row, c] = np.dot(1 - 2 * par, cnt) / cnt.sum()
        return out

    def to_csv(self):
        lines = ["twirl_id,trex_id,bitstring,count"]
        for r in self.records:
            for k in sorted(r.counts):
                lines.append(f"{r.twirl_id},{r.trex_id},{bitstring(int(k), self.n_qubits)},{r.counts[k]}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text, n_qubits, tag="physics"):
        recs: dict = {}
        for line in text.strip().splitlines()[1:]:
            tid, xid, bits, cnt = line.split(",")
            idx = sum(int(c) << q for q, c in enumerate(bits))
            key = (int(tid), int(xid))
            recs.setdefault(key, {})[idx] = int(cnt)
        batch = cls(n_qubits, tag=tag)
        for (tid, xid), counts in sorted(recs.items()):
            batch.records.append(TwirlRecord(tid, xid, counts, sum(counts.values())))
        return batch


def run_batch(circuit: Circuit, noise: NoiseModel, n_twirls=80, n_trex=2, shots=8000, seed=0, theta=None,
              psi0=None, trajectories=16, tag="physics", native=True, shared_errors=True):
    """Twirled, TREX-randomized noisy runs; twirl ``i`` uses the same frames/masks for any circuit
    with the same gate structure and seed (so physics and mitigation runs pair up).

    With ``shared_errors`` the trajectory error draws depend only on (seed,
    twirl, TREX instance), so paired runs see the same noise realization while
    their shot samples stay independent. A device applies one fixed channel to
    both circuits of a twirl; a handful of trajectories only samples that
    channel, and independent draws would add a spurious per-twirl fluctuation
    of p_j that biases the ratio estimate.
    """
    base = compile_native(circuit) if native else circuit
    batch = MeasurementBatch(circuit.n_qubits, tag=tag)
    for tid in range(n_twirls):
        frame_rng = np.random.default_rng([seed, tid, 0])
        twirled, _ = pauli_twirl(base, frame_rng)
        offset = int(frame_rng.integers(circuit.n_qubits))
        for xid in range(n_trex):
            trex_rng = np.random.default_rng([seed, tid, xid + 1])
            circ, mask = trex_twirl(twirled, trex_rng)
            shot_rng = np.random.default_rng([seed, tid, xid + 1, 1 if tag == "physics" else 2])
            err_rng = np.random.default_rng([seed, tid, xid + 1, 0]) if shared_errors else None
            s = simulate_noisy_samples(circ, noise, shots, shot_rng, theta, psi0, trajectories, mask, offset,
                                       err_rng)
            vals, cnt = np.unique(s, return_counts=True)
            batch.records.append(TwirlRecord(tid, xid, dict(zip(vals.tolist(), cnt.tolist())), shots, mask, offset))
    return batch


# ----------------------------------------------------------------------------
# mitigation
# ----------------------------------------------------------------------------

def bootstrap(values, n_resamples=1000, rng=None):
    """(mean, std of resampled means)."""
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        raise ValueError("bootstrap needs at least two values")
    rng = np.random.default_rng(0) if rng is None else rng
    idx = rng.integers(len(v), size=(n_resamples, len(v)))
    means = v[idx].mean(axis=1)
    return float(v.mean()), float(means.std(ddof=1))


@dataclass
class ODRRecord:
    twirl_id: int
    p: float
    raw: float
    adjusted: float
    accepted: bool
    reason: str = ""


def filter_records(records, threshold=0.01, two_sided=False):
    """Drop records with p_j below ``threshold`` or adjusted <ZZ> at or above 1."""
    out = []
    for r in records:
        if not np.isfinite(r.p) or r.p < threshold:
            out.append(ODRRecord(r.twirl_id, r.p, r.raw, r.adjusted, False, "p_below_threshold"))
        elif (abs(r.adjusted) if two_sided else r.adjusted) >= 1.0:
            out.append(ODRRecord(r.twirl_id, r.p, r.raw, r.adjusted, False, "adjusted_above_one"))
        else:
            out.append(ODRRecord(r.twirl_id, r.p, r.raw, r.adjusted, True))
    return out


@dataclass
class MitigatedEstimate:
    label: str
    records: list
    value: float | None  # mitigated <ZZ>; None when every twirl was filtered out
    std: float | None
    n_accepted: int
    raw_value: float
    raw_std: float

    @property
    def missing(self):
        return self.value is None


def odr_mitigate(physics_zz, mitigation_zz, truth_zz, labels=None, threshold=0.01, two_sided=False,
                 n_resamples=1000, seed=0):
    """Twirl-by-twirl decoherence renormalization of <ZZ> observables.

    ``physics_zz`` and ``mitigation_zz`` are (n_twirls, n_obs) arrays from
    paired runs; ``truth_zz`` holds the noiseless mitigation-circuit values.
    """
    phys = np.asarray(physics_zz, dtype=float)
    mit = np.asarray(mitigation_zz, dtype=float)
    truth = np.asarray(truth_zz, dtype=float)
    if phys.shape != mit.shape:
        raise ValueError("physics and mitigation runs must pair up twirl by twirl")
    if np.any(truth == 0) or not np.all(np.isfinite(truth)):
        raise ValueError("mitigation truth values must be finite and nonzero")
    labels = labels or [str(i) for i in range(phys.shape[1])]
    out = []
    for c in range(phys.shape[1]):
        rng = np.random.default_rng([seed, c])
        recs = []
        for t in range(phys.shape[0]):
            p = mit[t, c] / truth[c]
            adj = phys[t, c] / p if p != 0 else np.inf
            recs.append(ODRRecord(t, p, phys[t, c], adj, True))
        recs = filter_records(recs, threshold, two_sided)
        acc = [r.adjusted for r in recs if r.accepted]
        raw_mean, raw_std = bootstrap(phys[:, c], n_resamples, rng)
        if len(acc) >= 2:
            m, s = bootstrap(acc, n_resamples, rng)
        elif len(acc) == 1:
            m, s = float(acc[0]), float("nan")
        else:
            m, s = None, None
        out.append(MitigatedEstimate(labels[c], recs, m, s, len(acc), raw_mean, raw_std))
    return out


def phi2_from_zz(params: ModelParams, zz):
    """<phi_j^2> = c0 + c1 <Z Z> on each site (two qubits per site)."""
    f2, _ = phi2_phi4_pauli(2, params.phi_max)
    return f2.constant() + f2.terms["ZZ"].real * np.asarray(zz, dtype=float)


def site_pairs(params: ModelParams):
    if params.n_q != 2:
        raise ValueError("ZZ observables need two qubits per site")
    return [(2 * j, 2 * j + 1) for j in range(params.L)]


def exact_zz(psi, params: ModelParams):
    f2, _ = phi2_phi4_pauli(2, params.phi_max)
    return (phi2_expectations(psi, params) - f2.constant()) / f2.terms["ZZ"].real


# ----------------------------------------------------------------------------
# vacuum reference
# ----------------------------------------------------------------------------

@dataclass
class VacuumReference:
    t: float
    L_values: list
    even: list  # per L, mean <phi^2> on even sites
    odd: list
    even_inf: float
    odd_inf: float

    def site_values(self, L):
        return np.array([self.even_inf if j % 2 == 0 else self.odd_inf for j in range(L)])


def vacuum_reference(t, L_values, evolved_vacuum):
    """Extrapolate <phi_j^2> of the evolved vacuum in L, even and odd sites separately.

    ``evolved_vacuum(L)`` returns (params, state) for the evolved vacuum at L.
    """
    L_values = list(L_values)
    if len(L_values) < 3:
        raise ValueError("need at least three system sizes")
    ev, od = [], []
    for L in L_values:
        params, psi = evolved_vacuum(L)
        prof = phi2_expectations(psi, params)
        ev.append(float(prof[0::2].mean()))
        od.append(float(prof[1::2].mean()))
    fe = fit_exponential(L_values, ev)
    fo = fit_exponential(L_values, od)
    return VacuumReference(t, L_values, ev, od, fe.y_inf, fo.y_inf)
