"""Published reference tables shipped as CSV (angles, budgets, vacuum references)."""
from __future__ import annotations

import csv
import io
from importlib import resources

import numpy as np

from .ansatz import parameter_sets_from_csv

TABLES = ("vacuum_angles", "wavepacket_angles", "evolution_angles", "vacuum_reference", "error_budget",
          "wavepacket_fidelity")


def read_text(name):
    if name not in TABLES:
        raise KeyError(f"unknown fixture {name!r}")
    return resources.files("phi4sim").joinpath("data", f"{name}.csv").read_text()


def rows(name):
    """Fixture as a list of dicts with numeric fields converted to float."""
    out = []
    for r in csv.DictReader(io.StringIO(read_text(name))):
        conv = {}
        for k, v in r.items():
            try:
                conv[k] = float(v)
            except ValueError:
                conv[k] = v
        out.append(conv)
    return out


def parameter_sets(name):
    """Angle fixtures as ParameterSet objects (provenance 'fixture')."""
    if not name.endswith("_angles"):
        raise KeyError(f"{name!r} is not an angle table")
    return parameter_sets_from_csv(read_text(name), provenance="fixture")


def vacuum_angle_samples(lam):
    """(L values, theta_0 samples) of the published vacuum ladder, finite L only."""
    sets = [s for s in parameter_sets("vacuum_angles") if s.role == "vacuum" and s.lam == lam]
    sets.sort(key=lambda s: s.L)
    return [s.L for s in sets], np.array([s.values for s in sets])
