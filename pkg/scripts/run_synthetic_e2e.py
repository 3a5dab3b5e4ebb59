"""Synthetic end-to-end experiment: 4 subjects x 8 trials x 30 s at 128 Hz,
0.5 s windows, reduced training budget, at several SNRs.

Writes one results file per SNR (same format as ``tanet train``) and prints the
grand-mean accuracy for each.

    python3 scripts/run_synthetic_e2e.py --out runs/e2e --snr 12 6 0
"""
import argparse
import time
from pathlib import Path

from tanet.training import RESULTS_HEADER, TrainConfig
from tanet.verify import synthetic_cv


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="runs/e2e")
    ap.add_argument("--snr", type=float, nargs="+", default=[12.0, 0.0])
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--patience", type=int, default=10)
    ap.add_argument("--subjects", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = TrainConfig(epochs=args.epochs, patience=args.patience, seed=args.seed)
    for snr in args.snr:
        path = out / f"snr{snr:g}.txt"
        t0 = time.perf_counter()
        with open(path, "w") as fh:
            fh.write(RESULTS_HEADER + "\n")
            res = synthetic_cv(snr, args.seed, cfg, subjects=args.subjects,
                               on_fold=lambda p, r: (fh.write(r.to_line() + "\n"), fh.flush()))
        per = " ".join(f"s{s}={a:.3f}" for s, a in res.subject_mean.items())
        print(f"snr {snr:g} dB: accuracy {res.grand_mean:.4f} (+/- {res.grand_std:.4f}) [{per}] "
              f"in {time.perf_counter() - t0:.0f} s -> {path}")


if __name__ == "__main__":
    main()
