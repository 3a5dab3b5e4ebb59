"""Decision-window sweep on synthetic data, rendered as an accuracy table.

Generates a synthetic dataset, preprocesses it and trains with per-subject
5-fold CV for each of the six standard window lengths, then prints the table
next to the published reference row.  The defaults are a reduced budget that
finishes in well under an hour on one CPU core; the numbers are synthetic and
say nothing about real EEG.

    python3 scripts/window_sweep.py --out runs/sweep --snr-db 0
"""
import argparse
from pathlib import Path

from tanet import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--snr-db", type=float, default=0.0)
    ap.add_argument("--subjects", type=int, default=2)
    ap.add_argument("--trials", type=int, default=8)
    ap.add_argument("--seconds", type=float, default=30.0)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--patience", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    steps = [
        ["synth", "--subjects", args.subjects, "--trials", args.trials, "--seconds", args.seconds,
         "--snr-db", args.snr_db, "--seed", args.seed, "--out", out / "raw"],
        ["preprocess", "--manifest", out / "raw" / "manifest.txt", "--out", out / "prep"],
        ["train", "--manifest", out / "prep" / "manifest.txt", "--out", out / "train",
         "--epochs", args.epochs, "--patience", args.patience, "--seed", args.seed],
        ["report", f"synthetic {args.snr_db:g} dB={out / 'train' / 'results.txt'}", "--reference",
         "--csv", out / "table.csv"],
    ]
    for argv in steps:
        code = cli.main([str(a) for a in argv])
        if code != cli.EXIT_OK:
            raise SystemExit(code)


if __name__ == "__main__":
    main()
