"""Command-line entry point: phi4sim {train,run,mitigate,export,report}."""
from __future__ import annotations

import argparse
import sys

from . import pipeline as pl

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE = 0, 2, 3

COMMANDS = {
    "train": pl.cmd_train,
    "run": pl.cmd_run,
    "mitigate": pl.cmd_mitigate,
    "export": pl.cmd_export,
    "report": pl.cmd_report,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="phi4sim", description="Wavepacket scattering pipeline for the digitized "
                                                             "1+1D scalar field on qubits.")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "train": "train vacuum, wavepacket and evolution circuits; write parameters and an error budget",
        "run": "simulate the assembled circuits (exact statevector or noisy emulation)",
        "mitigate": "apply decoherence renormalization, filtering and bootstrap to stored noisy batches",
        "export": "merge heatmap records into CSV files with a JSON manifest",
        "report": "write a text summary of training, scattering and mitigation results",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--mode", choices=("exact", "noisy"), help="override the run mode")
        p.add_argument("--out", help="override the output directory")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = pl.load_config(args.config, seed=args.seed, mode=args.mode, out=args.out)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg)
    except pl.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except pl.ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
