"""End-to-end orchestration: configuration, training, exact/noisy runs, mitigation, export and reports."""
from __future__ import annotations

import configparser
import hashlib
import json
import math
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import ansatz as az
from .circuits import TrotterEvolver, apply_circuit, phi2_expectations, zero_state
from .exact import AdiabaticSchedule, track_center
from .lattice import ModelParams, WavepacketSpec, build_hamiltonian
from .noise import (MeasurementBatch, NoiseModel, exact_zz, odr_mitigate, phi2_from_zz, run_batch, site_pairs,
                    vacuum_reference)
from .svc import (train_time_evolution_series, train_vacuum_ladder, train_wavepacket,
                  wavepacket_target)

SOURCES = ("exact", "noisy-mitigated", "noisy-raw")


class ConfigError(ValueError):
    """Bad or inconsistent configuration (CLI exit code 2)."""


class ConvergenceError(RuntimeError):
    """Training finished above the configured infidelity ceiling (CLI exit code 3)."""


# ----------------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------------

def _floats(text):
    return tuple(float(x) for x in str(text).replace(" ", "").split(",") if x)


def _ints(text):
    return tuple(int(x) for x in str(text).replace(" ", "").split(",") if x)


@dataclass(frozen=True)
class ExperimentConfig:
    # model
    n_q: int = 2
    m: float = 0.5
    phi_max: float = 1.5
    lambdas: tuple = (0.0, 2.0)
    # wavepacket
    p: float = math.pi / 3  # magnitude; the right packet moves left with -p
    sigma: float = math.pi / 3
    width: int = 3
    # training
    vacuum_L: tuple = (4, 6, 8, 10)
    wavepacket_L: int = 8
    wavepacket_layers: int = 4
    evolution_L: int = 6
    evolution_layers: int = az.EVO_LAYERS
    jitters: int = 0
    maxiter: int = 2000
    fail_above: float = 0.9
    t_ad: float = 100.0
    ad_steps: int = 10
    ad_substeps: int = 1000
    ad_hold: int = 10
    # run
    L: int = 12
    times: tuple = tuple(float(t) for t in range(1, 10))
    mode: str = "exact"
    evolution: str = "variational"  # variational circuits or a second-order product formula
    trotter_dt: float = 0.05
    # noise
    noise_L: int = 6
    p2: float = 0.003
    readout01: float = 0.0
    readout10: float = 0.0
    twirls: int = 80
    trex: int = 2
    shots: int = 8000
    trajectories: int = 16
    truth: str = "extrapolated"  # or 'direct'
    reference_L: tuple = (6, 8, 10)
    threshold: float = 0.01
    two_sided: bool = False
    # bookkeeping
    seed: int = 0
    out: str = "out"

    def __post_init__(self):
        if self.mode not in ("exact", "noisy"):
            raise ConfigError(f"mode must be exact or noisy, got {self.mode!r}")
        if self.evolution not in ("variational", "trotter"):
            raise ConfigError(f"evolution must be variational or trotter, got {self.evolution!r}")
        if self.truth not in ("extrapolated", "direct"):
            raise ConfigError(f"truth must be extrapolated or direct, got {self.truth!r}")
        if self.n_q != 2:
            raise ConfigError("the circuit families need two qubits per site")
        for L in (self.L, self.noise_L, self.evolution_L, *self.reference_L):
            if L < 4 or L % 2:
                raise ConfigError(f"lattice sizes must be even and at least 4, got {L}")
        if any(t < 0 for t in self.times):
            raise ConfigError("times must be non-negative")
        if len(self.vacuum_L) < 3 or len(self.reference_L) < 3:
            raise ConfigError("extrapolation needs at least three system sizes")
        if not self.lambdas:
            raise ConfigError("no couplings requested")
        if self.truth == "extrapolated" and self.wavepacket_layers % 2:
            # zero brickwall layers are CZ patterns that only cancel in pairs
            raise ConfigError("extrapolated mitigation truth needs an even number of wavepacket layers")

    def model(self, lam, L=None) -> ModelParams:
        return ModelParams(L or self.L, self.n_q, self.m, lam, self.phi_max)

    def spec(self, center) -> WavepacketSpec:
        return WavepacketSpec(-self.p, self.sigma, center, self.width)

    @property
    def schedule(self):
        return AdiabaticSchedule(self.t_ad, self.ad_steps, self.ad_substeps, self.ad_hold)

    @property
    def noise(self) -> NoiseModel:
        return NoiseModel(self.p2, self.readout01, self.readout10, seed=self.seed)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def with_(self, **kw):
        d = asdict(self)
        d.update(kw)
        return ExperimentConfig(**d)

    def to_dict(self):
        return asdict(self)

    def digest(self):
        """sha256 of the canonical JSON form; changes iff a field changes."""
        text = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(text.encode()).hexdigest()


# ini section -> {key: (field, parser)}
_INI = {
    "model": {"n_q": int, "m": float, "phi_max": float, "lambdas": _floats},
    "wavepacket": {"p": float, "sigma": float, "width": int},
    "train": {"vacuum_L": _ints, "wavepacket_L": int, "wavepacket_layers": int, "evolution_L": int,
              "evolution_layers": int, "jitters": int, "maxiter": int, "fail_above": float, "t_ad": float,
              "ad_steps": int, "ad_substeps": int, "ad_hold": int},
    "run": {"L": int, "times": _floats, "mode": str, "evolution": str, "trotter_dt": float, "seed": int},
    "noise": {"noise_L": int, "p2": float, "readout01": float, "readout10": float, "twirls": int, "trex": int,
              "shots": int, "trajectories": int, "truth": str, "reference_L": _ints, "threshold": float,
              "two_sided": lambda s: s.strip().lower() in ("1", "true", "yes", "on")},
    "output": {"dir": str},
}


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read an INI file (sections model/wavepacket/train/run/noise/output); unknown keys are errors."""
    kw = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        for section in cp.sections():
            if section not in _INI:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in cp[section].items():
                if key not in _INI[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                name = "out" if key == "dir" else key
                try:
                    kw[name] = _INI[section][key](raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# ----------------------------------------------------------------------------
# parameter store
# ----------------------------------------------------------------------------

PARAMS_FILE = "parameters.csv"


def write_parameters(path, sets):
    lines = ["role,lambda,L,t,index,value"]
    for s in sorted(sets, key=lambda s: (s.role, s.lam, s.L, s.t)):
        lines += s.to_csv().splitlines()[1:]
    Path(path).write_text("\n".join(lines) + "\n")


def read_parameters(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"trained parameters missing: {path}")
    return az.parameter_sets_from_csv(path.read_text(), provenance="optimized")


def _lookup(sets, role, lam, t=0.0):
    for s in sets:
        if s.role == role and s.lam == lam and abs(s.t - t) < 1e-9:
            return s.values
    raise ConfigError(f"no {role} parameters for lambda={lam} t={t}")


def packet_layout(L):
    """Two packets when both 3-site windows fit with a gap, else one packet in the middle."""
    return "both" if L >= 10 else "right"


# ----------------------------------------------------------------------------
# train
# ----------------------------------------------------------------------------

@dataclass
class BudgetRow:
    lam: float
    stage: str  # vacuum | wavepacket | evolution
    L: int
    t: float
    metric: str
    value: float
    converged: bool


def cmd_train(cfg: ExperimentConfig, log=print):
    """Vacuum ladder + extrapolation, wavepacket and evolution training; writes parameters and a budget."""
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    sets, budget = [], []
    for lam in cfg.lambdas:
        base = cfg.model(lam)
        ladder = train_vacuum_ladder(base, cfg.vacuum_L)
        for L, r in ladder.per_L.items():
            sets.append(az.ParameterSet("vacuum", lam, L, r.theta))
            budget.append(BudgetRow(lam, "vacuum", L, 0.0, "I4", r.value, r.converged))
        sets.append(az.ParameterSet("vacuum_inf", lam, 0, ladder.theta_inf))
        log(f"lambda={lam}: vacuum I4 {[round(r.value, 5) for r in ladder.per_L.values()]}")

        wp_params = cfg.model(lam, cfg.wavepacket_L)
        c = wp_params.L // 2
        target = wavepacket_target(wp_params, cfg.spec(c), cfg.schedule)
        wp = train_wavepacket(wp_params, ladder.theta_inf, cfg.wavepacket_layers, cfg.spec(c), target,
                              jitters=max(cfg.jitters, 1), seed=cfg.seed, maxiter=cfg.maxiter)
        sets.append(az.ParameterSet("wavepacket", lam, wp_params.L, wp.theta))
        budget.append(BudgetRow(lam, "wavepacket", wp_params.L, 0.0, "I3", wp.value, wp.trail[-1].converged))
        log(f"lambda={lam}: wavepacket I3 {[round(r.value, 5) for r in wp.trail]}")

        times = [t for t in cfg.times if t > 0]
        if times:
            ep = cfg.model(lam, cfg.evolution_L)
            psi0 = initial_state(ep, ladder.theta_inf, wp.theta)
            series = train_time_evolution_series(ep, times, psi0, window_d=ep.L, n_layers=cfg.evolution_layers,
                                                 jitters=cfg.jitters, seed=cfg.seed, maxiter=cfg.maxiter)
            for t, r in series.items():
                sets.append(az.ParameterSet("evolution", lam, ep.L, r.theta, t))
                budget.append(BudgetRow(lam, "evolution", ep.L, t, f"I{len(r.window)}", r.value,
                                        r.trail[-1].converged))
                log(f"lambda={lam} t={t}: evolution I{len(r.window)} {r.value:.5f}")
    write_parameters(out / PARAMS_FILE, sets)
    (out / "budget.csv").write_text(budget_csv(budget))
    (out / "budget.txt").write_text(budget_report(budget))
    bad = [b for b in budget if not np.isfinite(b.value) or b.value > cfg.fail_above]
    if bad:
        raise ConvergenceError(f"{len(bad)} training stages finished above infidelity {cfg.fail_above}")
    return sets, budget


def initial_state(params: ModelParams, vacuum_theta, wavepacket_theta, packets=None):
    a = az.assemble_full_circuit(params, vacuum_theta, wavepacket_theta, None, 0.0,
                                 packets=packets or packet_layout(params.L))
    return apply_circuit(zero_state(params.n_qubits), a.circuit, a.theta)


def budget_csv(rows):
    lines = ["lambda,stage,L,t,metric,value,converged"]
    lines += [f"{r.lam!r},{r.stage},{r.L},{r.t!r},{r.metric},{r.value!r},{int(r.converged)}" for r in rows]
    return "\n".join(lines) + "\n"


def budget_report(rows):
    """Error budget: one line per training stage and coupling."""
    lines = ["error budget (local infidelities)", f"{'stage':<12}{'lambda':>8}{'L':>5}{'t':>6}  {'metric':<6}{'value':>12}"]
    for r in sorted(rows, key=lambda r: (r.stage != "vacuum", r.stage, r.lam, r.L, r.t)):
        flag = "" if r.converged else "  (optimizer stopped early)"
        lines.append(f"{r.stage:<12}{r.lam:>8g}{r.L:>5}{r.t:>6g}  {r.metric:<6}{r.value:>12.5f}{flag}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------------
# run
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class HeatmapRecord:
    t: float
    j: int
    value: float
    err: float
    source: str

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")


def physics_and_vacuum_circuits(params: ModelParams, sets, t, packets=None):
    """Assembled physics and vacuum-evolution circuits; they share every gate (packet slots zero in the latter)."""
    lam = params.lam
    vac = _lookup(sets, "vacuum_inf", lam)
    wp = _lookup(sets, "wavepacket", lam)
    evo = _lookup(sets, "evolution", lam, t) if t > 0 else None
    packets = packets or packet_layout(params.L)
    phys = az.assemble_full_circuit(params, vac, wp, evo, t, packets=packets)
    vtheta = phys.theta.copy()
    lo, hi = phys.sections["wavepacket"]
    vtheta[lo:hi] = 0.0
    return phys, az.AssembledCircuit(phys.circuit, vtheta, phys.sections)


def _evolve_states(cfg: ExperimentConfig, params: ModelParams, sets, t):
    """(physics state, vacuum state) at time t in exact mode."""
    if cfg.evolution == "variational":
        phys, vac = physics_and_vacuum_circuits(params, sets, t)
        z = zero_state(params.n_qubits)
        return (apply_circuit(z, phys.circuit, phys.theta, fuse=True),
                apply_circuit(z, vac.circuit, vac.theta, fuse=True))
    phys, vac = physics_and_vacuum_circuits(params, sets, 0.0)
    z = zero_state(params.n_qubits)
    psi = apply_circuit(z, phys.circuit, phys.theta, fuse=True)
    vpsi = apply_circuit(z, vac.circuit, vac.theta, fuse=True)
    if t > 0:
        ev = TrotterEvolver(build_hamiltonian(params))
        n = max(1, int(round(t / cfg.trotter_dt)))
        psi, vpsi = ev.evolve(psi, t, n), ev.evolve(vpsi, t, n)
    return psi, vpsi


def exact_profiles(cfg: ExperimentConfig, lam, sets=None, times=None, L=None):
    """{t: (physics <phi^2_j>, vacuum <phi^2_j>)} from statevector runs.

    With the product-formula evolution the state is carried from one time to
    the next instead of being rebuilt.
    """
    sets = sets if sets is not None else read_parameters(cfg.out_dir / PARAMS_FILE)
    params = cfg.model(lam, L)
    times = sorted(cfg.times if times is None else times)
    out = {}
    if cfg.evolution == "trotter":
        psi, vpsi = _evolve_states(cfg, params, sets, 0.0)
        ev = TrotterEvolver(build_hamiltonian(params))
        now = 0.0
        for t in times:
            dt = t - now
            if dt > 0:
                n = max(1, int(round(dt / cfg.trotter_dt)))
                psi, vpsi = ev.evolve(psi, dt, n), ev.evolve(vpsi, dt, n)
                now = t
            out[t] = (phi2_expectations(psi, params), phi2_expectations(vpsi, params))
        return out
    for t in times:
        psi, vpsi = _evolve_states(cfg, params, sets, t)
        out[t] = (phi2_expectations(psi, params), phi2_expectations(vpsi, params))
    return out


def heatmap_from_profiles(profiles, source="exact"):
    recs = []
    for t in sorted(profiles):
        phys, vac = profiles[t]
        for j, v in enumerate(phys - vac):
            recs.append(HeatmapRecord(float(t), j, float(v), 0.0, source))
    return recs


def _lam_tag(lam):
    return f"lam{lam:g}"


def _batch_path(out, lam, t, kind):
    return Path(out) / "batches" / f"{_lam_tag(lam)}_t{t:g}_{kind}.csv"


def cmd_run(cfg: ExperimentConfig, log=print):
    """Exact statevector heatmaps, or raw noisy batches for the physics and mitigation circuits."""
    sets = read_parameters(cfg.out_dir / PARAMS_FILE)
    result = {}
    for lam in cfg.lambdas:
        if cfg.mode == "exact":
            recs = heatmap_from_profiles(exact_profiles(cfg, lam, sets))
            write_heatmap(cfg.out_dir / f"heatmap_{_lam_tag(lam)}_exact.csv", recs)
            result[lam] = recs
            log(f"lambda={lam}: exact heatmap with {len(recs)} records")
            continue
        params = cfg.model(lam, cfg.noise_L)
        pairs = site_pairs(params)
        recs = []
        for t in sorted(cfg.times):
            phys, mit = physics_and_vacuum_circuits(params, sets, t)
            for kind, a in (("physics", phys), ("mitigation", mit)):
                batch = run_batch(a.circuit, cfg.noise, cfg.twirls, cfg.trex, cfg.shots, cfg.seed, a.theta,
                                  trajectories=cfg.trajectories, tag=kind)
                path = _batch_path(cfg.out_dir, lam, t, kind)
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(batch.to_csv())
            pz = MeasurementBatch.from_csv(_batch_path(cfg.out_dir, lam, t, "physics").read_text(),
                                           params.n_qubits).zz(pairs).mean(axis=0)
            mz = MeasurementBatch.from_csv(_batch_path(cfg.out_dir, lam, t, "mitigation").read_text(),
                                           params.n_qubits).zz(pairs).mean(axis=0)
            diff = phi2_from_zz(params, pz) - phi2_from_zz(params, mz)
            recs += [HeatmapRecord(float(t), j, float(v), 0.0, "noisy-raw") for j, v in enumerate(diff)]
            log(f"lambda={lam} t={t}: noisy batches written")
        write_heatmap(cfg.out_dir / f"heatmap_{_lam_tag(lam)}_noisy-raw.csv", recs)
        result[lam] = recs
    return result


# ----------------------------------------------------------------------------
# mitigate
# ----------------------------------------------------------------------------

def mitigation_truth(cfg: ExperimentConfig, params: ModelParams, sets, t):
    """Noiseless <ZZ_j> of the mitigation circuit: L-extrapolated vacuum evolution or a direct simulation."""
    if cfg.truth == "direct":
        _, vac = physics_and_vacuum_circuits(params, sets, t)
        psi = apply_circuit(zero_state(params.n_qubits), vac.circuit, vac.theta, fuse=True)
        return exact_zz(psi, params)

    def evolved(L):
        # an even number of zero packet layers is the identity, so the packet-free circuit gives the same state
        p = params.with_(L=L)
        evo = _lookup(sets, "evolution", p.lam, t) if t > 0 else None
        a = az.assemble_full_circuit(p, _lookup(sets, "vacuum_inf", p.lam), None, evo, t, packets="none")
        return p, apply_circuit(zero_state(p.n_qubits), a.circuit, a.theta, fuse=True)

    ref = vacuum_reference(t, cfg.reference_L, evolved)
    phi2 = ref.site_values(params.L)
    f2 = phi2_from_zz(params, np.zeros(params.L))
    slope = phi2_from_zz(params, np.ones(params.L)) - f2
    return (phi2 - f2) / slope


@dataclass
class SiteReport:
    lam: float
    t: float
    site: int
    raw: float
    raw_std: float
    mitigated: float | None
    std: float | None
    n_accepted: int
    n_twirls: int
    exact: float | None = None


def cmd_mitigate(cfg: ExperimentConfig, log=print):
    """ODR with filtering and bootstrap on stored batches; writes heatmaps, estimates and a per-site report."""
    sets = read_parameters(cfg.out_dir / PARAMS_FILE)
    reports, heat = [], {}
    for lam in cfg.lambdas:
        params = cfg.model(lam, cfg.noise_L)
        pairs = site_pairs(params)
        recs = []
        for t in sorted(cfg.times):
            paths = [_batch_path(cfg.out_dir, lam, t, k) for k in ("physics", "mitigation")]
            for p in paths:
                if not p.is_file():
                    raise ConfigError(f"raw batch missing: {p} (run with --mode noisy first)")
            pz = MeasurementBatch.from_csv(paths[0].read_text(), params.n_qubits).zz(pairs)
            mz = MeasurementBatch.from_csv(paths[1].read_text(), params.n_qubits, "mitigation").zz(pairs)
            truth = mitigation_truth(cfg, params, sets, t)
            est = odr_mitigate(pz, mz, truth, [str(j) for j in range(params.L)], cfg.threshold, cfg.two_sided,
                               seed=cfg.seed)
            phys_ex, _ = physics_and_vacuum_circuits(params, sets, t)
            exact = exact_zz(apply_circuit(zero_state(params.n_qubits), phys_ex.circuit, phys_ex.theta), params)
            vac_phi2 = phi2_from_zz(params, truth)
            for j, e in enumerate(est):
                reports.append(SiteReport(lam, t, j, e.raw_value, e.raw_std, e.value, e.std, e.n_accepted,
                                          pz.shape[0], float(exact[j])))
                if e.missing:
                    continue
                slope = float(phi2_from_zz(params, 1.0) - phi2_from_zz(params, 0.0))
                val = float(phi2_from_zz(params, e.value) - vac_phi2[j])
                err = abs(slope) * (e.std if np.isfinite(e.std) else 0.0)
                recs.append(HeatmapRecord(float(t), j, val, err, "noisy-mitigated"))
            log(f"lambda={lam} t={t}: mitigated {sum(not e.missing for e in est)}/{len(est)} sites")
        write_heatmap(cfg.out_dir / f"heatmap_{_lam_tag(lam)}_noisy-mitigated.csv", recs)
        heat[lam] = recs
    (cfg.out_dir / "mitigated.csv").write_text(estimates_csv(reports))
    (cfg.out_dir / "mitigation_report.txt").write_text(mitigation_report(reports))
    return heat, reports


def estimates_csv(reports):
    lines = ["t,lambda,site,value,std,n_accepted"]
    for r in sorted(reports, key=lambda r: (r.t, r.lam, r.site)):
        v = "" if r.mitigated is None else repr(r.mitigated)
        s = "" if r.std is None else repr(r.std)
        lines.append(f"{r.t!r},{r.lam!r},{r.site},{v},{s},{r.n_accepted}")
    return "\n".join(lines) + "\n"


def mitigation_report(reports):
    """Before/after <ZZ> per site with accepted-twirl counts."""
    lines = [f"{'lambda':>6}{'t':>5}{'site':>5}{'raw':>10}{'raw_std':>9}{'mitigated':>11}{'std':>9}"
             f"{'accepted':>10}{'exact':>10}"]
    for r in sorted(reports, key=lambda r: (r.lam, r.t, r.site)):
        mit = "missing" if r.mitigated is None else f"{r.mitigated:.4f}"
        std = "" if r.std is None else f"{r.std:.4f}"
        ex = "" if r.exact is None else f"{r.exact:.4f}"
        lines.append(f"{r.lam:>6g}{r.t:>5g}{r.site:>5}{r.raw:>10.4f}{r.raw_std:>9.4f}{mit:>11}{std:>9}"
                     f"{f'{r.n_accepted}/{r.n_twirls}':>10}{ex:>10}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------------
# export / report
# ----------------------------------------------------------------------------

HEATMAP_HEADER = "t,j,value,err,source"


def sort_records(recs):
    return sorted(recs, key=lambda r: (SOURCES.index(r.source), r.t, r.j))


def heatmap_csv(recs):
    keys = [(r.t, r.j, r.source) for r in recs]
    if len(keys) != len(set(keys)):
        raise ValueError("duplicate (t, j, source) heatmap records")
    lines = [HEATMAP_HEADER] + [f"{r.t!r},{r.j},{r.value!r},{r.err!r},{r.source}" for r in sort_records(recs)]
    return "\n".join(lines) + "\n"


def write_heatmap(path, recs):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(heatmap_csv(recs))


def read_heatmap(path):
    lines = Path(path).read_text().strip().splitlines()
    if not lines or lines[0] != HEATMAP_HEADER:
        raise ValueError(f"{path} is not a heatmap file")
    out = []
    for line in lines[1:]:
        t, j, v, e, s = line.split(",")
        out.append(HeatmapRecord(float(t), int(j), float(v), float(e), s))
    return out


def manifest(cfg: ExperimentConfig, files):
    import scipy

    return {
        "config_hash": cfg.digest(),
        "config": cfg.to_dict(),
        "seeds": {"seed": cfg.seed},
        "versions": {"phi4sim": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "files": sorted(files),
    }


def cmd_export(cfg: ExperimentConfig, log=print):
    """Merge per-source heatmaps into one CSV per coupling and write a JSON manifest."""
    files = []
    for lam in cfg.lambdas:
        recs = []
        for src in SOURCES:
            p = cfg.out_dir / f"heatmap_{_lam_tag(lam)}_{src}.csv"
            if p.is_file():
                recs += read_heatmap(p)
        if not recs:
            raise ConfigError(f"no heatmap records for lambda={lam}; run first")
        name = f"heatmap_{_lam_tag(lam)}.csv"
        write_heatmap(cfg.out_dir / name, recs)
        files.append(name)
        log(f"lambda={lam}: exported {len(recs)} records to {name}")
    (cfg.out_dir / "manifest.json").write_text(json.dumps(manifest(cfg, files), indent=2, sort_keys=True,
                                                          default=list) + "\n")
    return files


@dataclass
class ScatteringSummary:
    lam: float
    times: list
    left: list  # tracked centres of the left/right halves
    right: list
    separation: list
    collision_t: float  # time of minimum packet separation
    peak_t: float  # time of the largest signal at the central sites
    vacuum_max: float  # largest |signal| on sites outside every light cone
    extra: dict = field(default_factory=dict)


def light_cone_sites(L, t, centers, width=3, speed=1.0):
    """Sites no packet signal can have reached by time t (packet half-width plus speed * t)."""
    reach = width // 2 + speed * t + 1
    out = []
    for j in range(L):
        d = min(min(abs(j - c), L - abs(j - c)) for c in centers)
        if d > reach:
            out.append(j)
    return out


def summarize_heatmap(recs, L, lam=0.0, source="exact"):
    """Packet tracking on a heatmap: centres per half, collision time, vacuum-region level."""
    recs = [r for r in recs if r.source == source]
    times = sorted({r.t for r in recs})
    grid = np.zeros((len(times), L))
    for r in recs:
        grid[times.index(r.t), r.j] = r.value
    half = L // 2
    left = [track_center(row, range(0, half)) for row in grid]
    right = [track_center(row, range(half, L)) for row in grid]
    sep = [b - a for a, b in zip(left, right)]
    centre = [half - 1, half]
    signal = grid[:, centre].sum(axis=1)
    centers = az.packet_centers(L) if packet_layout(L) == "both" else (L // 2,)
    vac = [abs(grid[i, j]) for i, t in enumerate(times) for j in light_cone_sites(L, t, centers)]
    return ScatteringSummary(lam, times, left, right, sep, times[int(np.argmin(sep))],
                             times[int(np.argmax(signal))], max(vac) if vac else 0.0)


def cmd_report(cfg: ExperimentConfig, log=print):
    """Text report: training budget, scattering summaries per coupling and source, mitigation table."""
    lines = [f"config hash {cfg.digest()}", ""]
    budget = cfg.out_dir / "budget.txt"
    if budget.is_file():
        lines += [budget.read_text()]
    for lam in cfg.lambdas:
        path = cfg.out_dir / f"heatmap_{_lam_tag(lam)}.csv"
        if not path.is_file():
            continue
        recs = read_heatmap(path)
        L = max(r.j for r in recs) + 1
        for src in SOURCES:
            if not any(r.source == src for r in recs):
                continue
            s = summarize_heatmap(recs, L, lam, src)
            lines.append(f"lambda={lam:g} source={src}")
            lines.append("  t      " + " ".join(f"{t:>6g}" for t in s.times))
            lines.append("  left   " + " ".join(f"{x:>6.2f}" for x in s.left))
            lines.append("  right  " + " ".join(f"{x:>6.2f}" for x in s.right))
            lines.append(f"  collision (minimum separation) at t={s.collision_t:g}; central peak at t={s.peak_t:g}")
            lines.append(f"  max |signal| outside the light cone: {s.vacuum_max:.4f}")
            lines.append("")
    mit = cfg.out_dir / "mitigation_report.txt"
    if mit.is_file():
        lines += ["mitigation (per-site <ZZ>)", mit.read_text()]
    text = "\n".join(lines) + "\n"
    (cfg.out_dir / "report.txt").write_text(text)
    log(text)
    return text
