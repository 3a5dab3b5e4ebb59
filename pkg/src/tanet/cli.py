"""Command-line interface: ``tanet {synth,preprocess,train,eval,verify,report}``."""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import model as M
from .dataio import (DatasetManifest, SynthConfig, entry_for, generate_synthetic, load_dataset, read_manifest,
                     write_manifest, write_trial)
from .errors import TanetError
from .preprocess import PreprocessConfig, default_taps, preprocess_recording
from .training import (RESULTS_HEADER, FoldReport, TrainConfig, evaluate, parse_results_line, run_cv,
                       subject_windows)
from .verify import PUBLISHED_TANET, DEFAULT_WINDOWS, run_all

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_VERIFY = 4

LOCK_NAME = ".tanet.lock"
log = logging.getLogger("tanet")


class LockedError(TanetError):
    pass


@contextlib.contextmanager
def dir_lock(directory: Path):
    """Exclusive lock on an output directory for the duration of one command."""
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockedError(f"{directory} is locked by another invocation ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _band(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"band must look like LOW:HIGH, got {text!r}") from None
    return lo, hi


def _fmt_win(w: float) -> str:
    return f"{w:g}"


# ------------------------------------------------------------------ commands


def cmd_synth(args) -> int:
    cfg = SynthConfig(subjects=args.subjects, trials_per_subject=args.trials, trial_seconds=args.seconds,
                      channels=args.channels, fs=args.fs, snr_db=args.snr_db, seed=args.seed)
    out = Path(args.out)
    with dir_lock(out):
        manifest = generate_synthetic(cfg, out)
    print(manifest)
    print(f"{cfg.subjects} subjects x {cfg.trials_per_subject} trials, {cfg.channels} channels, "
          f"{cfg.trial_seconds:g} s at {cfg.fs:g} Hz, snr {cfg.snr_db:g} dB")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    manifest = read_manifest(args.manifest)
    prep = PreprocessConfig(band=args.band, taps=args.taps, fs_out=args.fs_out)
    out = Path(args.out)
    failures, entries, taps_used = [], [], {}
    with dir_lock(out):
        for entry in manifest.entries:
            try:
                rec = load_dataset(DatasetManifest([entry], manifest.root))[0]
                taps_used[repr(rec.fs)] = args.taps or default_taps(rec.fs)
                rec = preprocess_recording(rec, prep)
            except TanetError as exc:
                failures.append(f"subject {entry.subject_id} trial {entry.trial_id}: {exc}")
                continue
            name = Path(entry.path).name
            write_trial(out / name, rec)
            entries.append(entry_for(name, rec))
        write_manifest(out / "manifest.txt", DatasetManifest(entries, out))
        provenance = {
            "source_manifest": str(Path(args.manifest)),
            "pipeline": ["common_average_reference", "bandpass_fir_hamming", "decimate", "zscore"],
            "band_hz": list(prep.band),
            "taps_by_input_fs": taps_used,
            "fs_out": prep.fs_out,
            "trials_ok": len(entries),
            "trials_failed": failures,
        }
        (out / "provenance.json").write_text(json.dumps(provenance, indent=2, sort_keys=True) + "\n")
    for f in failures:
        print(f"error: {f}", file=sys.stderr)
    print(out / "manifest.txt")
    return EXIT_INPUT if failures else EXIT_OK


def _train_config(args) -> TrainConfig:
    return TrainConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch, patience=args.patience,
                       folds=args.folds, val_fraction=args.val_fraction, seed=args.seed)


def _model_config(args, channels: int) -> M.ModelConfig:
    return M.ModelConfig(d_model=channels, heads=args.heads, ffn_hidden=args.ffn_hidden,
                         fc_hidden=args.fc_hidden, init_seed=args.init_seed)


def cmd_train(args) -> int:
    recs = load_dataset(read_manifest(args.manifest))
    if not recs:
        raise TanetError(f"{args.manifest}: no trials")
    cfg = _train_config(args)
    mcfg = _model_config(args, recs[0].channels)
    out = Path(args.out)
    with dir_lock(out):
        ckpt_dir = out / "checkpoints"
        ckpt_dir.mkdir(exist_ok=True)
        with open(out / "results.txt", "w") as fh:
            fh.write(RESULTS_HEADER + "\n")

            def on_fold(params, rep: FoldReport):
                M.save_params(ckpt_dir / f"sub{rep.subject:02d}_win{_fmt_win(rep.win_seconds)}_fold{rep.fold}.tant",
                              params, mcfg)
                fh.write(rep.to_line() + "\n")
                fh.flush()
                print(rep.to_line())
                for w in rep.warnings:
                    print(f"warning: subject {rep.subject} fold {rep.fold}: {w}", file=sys.stderr)

            for win in args.win:
                res = run_cv(recs, win, cfg, mcfg, prep=None, hop_seconds=args.hop, on_fold=on_fold)
                print(f"win {_fmt_win(win)} s: mean accuracy {100 * res.grand_mean:.1f}% "
                      f"(+/- {100 * res.grand_std:.1f} across subjects)")
    return EXIT_OK


def cmd_eval(args) -> int:
    params, mcfg = M.load_params(args.checkpoint)
    recs = load_dataset(read_manifest(args.manifest))
    if args.subject is not None:
        recs = [r for r in recs if r.subject_id == args.subject]
    if not recs:
        raise TanetError("no trials selected for evaluation")
    ws = subject_windows(recs, args.win, args.hop)
    if ws.data.shape[-1] != mcfg.d_model:
        raise TanetError(f"data has {ws.data.shape[-1]} channels but checkpoint expects {mcfg.d_model}")
    print(f"accuracy {evaluate(params, ws)!r} on {len(ws)} windows")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_all(seed=args.seed, quick=args.quick, fault=args.fault)
    lines = [r.line() for r in results]
    for r, line in zip(results, lines):
        print(f"{line}  ({r.seconds:.2f} s) {r.detail}")
    if args.out:
        out = Path(args.out)
        with dir_lock(out.parent):
            out.write_text("\n".join(lines) + "\n")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("FAILED: " + ", ".join(failed), file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# ------------------------------------------------------------------- report


def read_results(path) -> list[FoldReport]:
    path = Path(path)
    if not path.exists():
        raise TanetError(f"results file {path} not found")
    reports = []
    for no, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            reports.append(parse_results_line(line))
        except ValueError as exc:
            raise TanetError(f"{path}:{no}: corrupt results line ({exc})") from exc
    return reports


def subject_means(reports, win: float) -> dict[int, float]:
    by: dict[int, list] = {}
    for r in reports:
        if np.isclose(r.win_seconds, win):
            by.setdefault(r.subject, []).append(r.accuracy)
    return {s: float(np.mean(v)) for s, v in sorted(by.items())}


def results_table(rows: dict[str, list[FoldReport]], windows=DEFAULT_WINDOWS,
                  reference: bool = False) -> list[list[str]]:
    """Rows of cells: a header row, one row per labelled results set, optional published row."""
    table = [["Model"] + [_fmt_win(w) for w in windows]]
    for label, reports in rows.items():
        cells = []
        for w in windows:
            means = subject_means(reports, w)
            cells.append(f"{100 * np.mean(list(means.values())):.1f}" if means else "-")
        table.append([label] + cells)
    if reference:
        pub = dict(zip(DEFAULT_WINDOWS, PUBLISHED_TANET))
        table.append(["TAnet (published reference, not reproduced)"]
                     + [f"{pub[w]:.1f}" if w in pub else "-" for w in windows])
    return table


def render(table: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in table) for i in range(len(table[0]))]
    return "\n".join("  ".join(c.ljust(widths[i]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(r))
                     for r in table)


def cmd_report(args) -> int:
    rows = {}
    for spec in args.results:
        label, _, path = spec.rpartition("=")
        rows[label or Path(path).parent.name or Path(path).stem] = read_results(path)
    table = results_table(rows, reference=args.reference)
    print("Decoding accuracy (%) by decision window (s)")
    print(render(table))
    for label, reports in rows.items():
        wins = sorted({r.win_seconds for r in reports})
        if not wins:
            continue
        print(f"\nPer-subject accuracy (%), {label}")
        sub = [["Subject"] + [_fmt_win(w) for w in wins]]
        subjects = sorted({r.subject for r in reports})
        per = {w: subject_means(reports, w) for w in wins}
        for s in subjects:
            sub.append([str(s)] + [f"{100 * per[w][s]:.1f}" if s in per[w] else "-" for w in wins])
        sub.append(["mean"] + [f"{100 * np.mean(list(per[w].values())):.1f}" for w in wins])
        print(render(sub))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            csv.writer(fh).writerows(table)
    return EXIT_OK


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tanet", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic lateralized-EEG dataset")
    s.add_argument("--subjects", type=int, default=4)
    s.add_argument("--trials", type=int, default=8)
    s.add_argument("--seconds", type=float, default=30.0)
    s.add_argument("--channels", type=int, default=64)
    s.add_argument("--fs", type=float, default=128.0)
    s.add_argument("--snr-db", type=float, default=12.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="CAR, band-pass, downsample and z-score every trial")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--band", type=_band, default=(1.0, 50.0), metavar="LOW:HIGH")
    s.add_argument("--taps", type=int, default=None)
    s.add_argument("--fs-out", type=float, default=128.0)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="per-subject k-fold cross-validation for each decision window")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--win", type=float, nargs="+", default=list(DEFAULT_WINDOWS), metavar="SECONDS")
    s.add_argument("--hop", type=float, default=None, metavar="SECONDS", help="default: half the window")
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--epochs", type=int, default=300)
    s.add_argument("--batch", type=int, default=32)
    s.add_argument("--patience", type=int, default=20)
    s.add_argument("--folds", type=int, default=5)
    s.add_argument("--val-fraction", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--heads", type=int, default=2)
    s.add_argument("--ffn-hidden", type=int, default=None)
    s.add_argument("--fc-hidden", type=int, default=32)
    s.add_argument("--init-seed", type=int, default=0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="accuracy of a checkpoint on a manifest's windows")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--win", type=float, required=True)
    s.add_argument("--hop", type=float, default=None)
    s.add_argument("--subject", type=int, default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("verify", help="run the acceptance checks")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--quick", action="store_true", help="skip the synthetic end-to-end run")
    s.add_argument("--fault", choices=["gradient"], default=None, help="inject a known fault")
    s.add_argument("--out", default=None, help="write the check report to this file")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("report", help="render a decision-window accuracy table")
    s.add_argument("results", nargs="+", metavar="[LABEL=]RESULTS")
    s.add_argument("--reference", action="store_true", help="add the published TAnet row, labelled as such")
    s.add_argument("--csv", default=None)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # usage errors exit with EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (TanetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
