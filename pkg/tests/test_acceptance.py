"""One test per acceptance criterion, each held to its stated tolerance.

Every test records a single PASS/FAIL line; the lines are repeated in the
terminal summary at the end of the run.
"""
import time

import pytest

from tanet import cli
from tanet.training import RESULTS_HEADER, TrainConfig
from tanet.verify import (E2E_TRAIN, LAYER_KINDS, check_attention_rows, check_filter_response, check_leakage,
                          check_layer_gradients, check_model_gradient, check_permutation_invariance,
                          check_protocol_constants, synthetic_cv)


def test_model_gradient(verdict):
    r = check_model_gradient(seed=0, n_seeds=10)
    ok = r.passed and r.measured <= 1e-4 and r.seconds < 30
    verdict("model gradient vs central differences (10 seeds)", ok,
            f"max rel err {r.measured:.2e} <= 1e-4, {r.seconds:.1f} s < 30 s")
    assert ok


def test_layer_gradient_suites(verdict):
    results = [check_layer_gradients(kind, seed=0, n_seeds=20) for kind in LAYER_KINDS]
    ok = all(r.passed and r.measured <= 1e-5 for r in results)
    verdict("per-layer gradient suites (20 seeds each)", ok,
            ", ".join(f"{k} {r.measured:.1e}" for k, r in zip(LAYER_KINDS, results)) + " <= 1e-5")
    assert ok


def test_permutation_invariance(verdict):
    r = check_permutation_invariance(seed=0, pairs=100)
    ok = r.passed and r.measured <= 1e-12
    verdict("logit permutation invariance (100 pairs)", ok, f"max |diff| {r.measured:.1e} <= 1e-12")
    assert ok


def test_attention_rows_are_stochastic(verdict):
    r = check_attention_rows(seed=0)
    ok = r.passed and r.measured <= 1e-12
    verdict("attention rows sum to one", ok, f"max |row sum - 1| {r.measured:.1e} <= 1e-12")
    assert ok


def test_filter_response(verdict):
    r = check_filter_response()
    ok = r.passed and r.measured >= 40.0 and r.seconds < 5
    verdict("1-50 Hz filter at 8192 Hz", ok, f"{r.detail}; worst {r.measured:.1f} dB >= 40 dB, {r.seconds:.2f} s < 5 s")
    assert ok


def test_leakage_oracle(verdict):
    r = check_leakage(seed=0, sets=1000)
    verdict("leakage pruning vs brute-force oracle", r.passed, r.detail)
    assert r.passed


def test_protocol_constants(verdict):
    c = TrainConfig()
    ok = (c.lr, c.epochs, c.batch_size, c.patience, c.folds) == (1e-3, 300, 32, 20, 5)
    ok = ok and check_protocol_constants().passed
    verdict("training protocol defaults", ok, f"lr={c.lr} epochs={c.epochs} batch={c.batch_size} "
            f"patience={c.patience} folds={c.folds}")
    assert ok


# ----------------------------------------------------------- end to end


def cv_to_file(snr_db: float, path) -> tuple[float, float]:
    """Run the synthetic CV, writing the results file as ``tanet train`` does; return (accuracy, seconds)."""
    t0 = time.perf_counter()
    with open(path, "w") as fh:
        fh.write(RESULTS_HEADER + "\n")
        res = synthetic_cv(snr_db, seed=0, on_fold=lambda p, r: fh.write(r.to_line() + "\n"))
    return res.grand_mean, time.perf_counter() - t0


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    d = tmp_path_factory.mktemp("e2e")
    high, t_high = cv_to_file(12.0, d / "snr12.txt")
    low, t_low = cv_to_file(0.0, d / "snr0.txt")
    return dict(dir=d, high=high, low=low, seconds=t_high + t_low)


@pytest.mark.slow
def test_synthetic_end_to_end(e2e, verdict):
    assert E2E_TRAIN.epochs <= 50 and E2E_TRAIN.patience == 10
    rows = cli.read_results(e2e["dir"] / "snr12.txt")
    ok = e2e["high"] >= 0.90 and e2e["high"] >= e2e["low"] and e2e["seconds"] <= 600 and len(rows) == 20
    verdict("synthetic end-to-end (4x8x30 s, 0.5 s windows)", ok,
            f"acc@12dB {e2e['high']:.4f} >= 0.90, acc@0dB {e2e['low']:.4f} <= acc@12dB, "
            f"{e2e['seconds']:.0f} s <= 600 s")
    assert ok


@pytest.mark.slow
def test_determinism(e2e, tmp_path, verdict):
    for name in ("v1.txt", "v2.txt"):
        assert cli.main(["verify", "--quick", "--out", str(tmp_path / name)]) == cli.EXIT_OK
    same_verify = (tmp_path / "v1.txt").read_bytes() == (tmp_path / "v2.txt").read_bytes()
    cv_to_file(12.0, tmp_path / "snr12_again.txt")
    same_e2e = (tmp_path / "snr12_again.txt").read_bytes() == (e2e["dir"] / "snr12.txt").read_bytes()
    ok = same_verify and same_e2e
    verdict("bit-identical reruns", ok, f"verify report identical={same_verify}, "
            f"end-to-end results identical={same_e2e}")
    assert ok


def test_report_fidelity(tmp_path, capsys, verdict):
    results = tmp_path / "results.txt"
    results.write_text(RESULTS_HEADER + "\n0 0 0.5 0.9 10 0.2\n")
    assert cli.main(["report", str(results), "--reference"]) == cli.EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    ref = [l for l in lines if l.startswith("TAnet (published reference, not reproduced)")]
    ok = len(ref) == 1 and ref[0].split()[-6:] == ["92.4", "94.9", "95.1", "95.4", "95.5", "94.7"]
    verdict("report reference row", ok, ref[0] if ref else "reference row missing")
    assert ok
