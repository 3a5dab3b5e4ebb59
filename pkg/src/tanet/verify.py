"""Acceptance checks shared by ``tanet verify`` and the test suite.

Each check returns a :class:`CheckResult` carrying the measured value and the
threshold it was held to.  Measured values are deterministic for a fixed seed,
so the rendered report is byte-stable across runs.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import layers as L
from . import model as M
from .dataio import SynthConfig, synthesize
from .gradcheck import max_rel_error, numeric_grad
from .preprocess import WindowSet, design_bandpass, prune_leaky
from .training import TrainConfig, kfold_split, run_cv

TINY = dict(d_model=4, heads=2, ffn_hidden=8, fc_hidden=4)
DEFAULT_WINDOWS = (0.1, 0.25, 0.3, 0.4, 0.5, 1.0)
PUBLISHED_TANET = (92.4, 94.9, 95.1, 95.4, 95.5, 94.7)


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name} {status} measured={self.measured!r} threshold={self.threshold!r}"


def _timed(fn):
    def run(*a, **kw):
        t0 = time.perf_counter()
        res = fn(*a, **kw)
        res.seconds = time.perf_counter() - t0
        return res
    run.__name__ = fn.__name__
    return run


# ---------------------------------------------------------------- gradients


def model_gradient_error(seed: int, fault: str | None = None) -> float:
    """Worst relative error of model.backward against central differences, tiny config."""
    rng = np.random.default_rng(seed)
    params = M.init_params(M.ModelConfig(**TINY, init_seed=seed))
    for a in params.arrays():  # move gains/biases off their symmetric init
        a += rng.normal(0.0, 0.1, a.shape)
    e = rng.normal(size=(6, 4))
    r = rng.normal(size=2)

    def f():
        return float(M.forward(e, params)[0] @ r)

    _, cache = M.forward(e, params)
    grads, d_e = M.backward(r, cache, params, return_input_grad=True)
    if fault == "gradient":
        grads.ln1.gamma *= 1.05
    errs = [max_rel_error(g, numeric_grad(f, p)) for g, p in zip(grads.arrays(), params.arrays())]
    errs.append(max_rel_error(d_e, numeric_grad(f, e)))
    return max(errs)


@_timed
def check_model_gradient(seed: int = 0, n_seeds: int = 10, fault: str | None = None) -> CheckResult:
    worst = max(model_gradient_error(seed + i, fault) for i in range(n_seeds))
    return CheckResult("model_gradient", worst <= 1e-4, worst, 1e-4, f"{n_seeds} seeds, step 1e-6")


def _layer_case(kind: str, rng) -> tuple[list, Callable, Callable]:
    """Inputs, a scalar objective and its analytic gradients for one layer."""
    if kind == "linear":
        x, W, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
        r = rng.normal(size=(3, 2))
        p = L.LinearParams(W, b)

        def f():
            return float(np.sum(L.linear_fwd(x, p)[0] * r))

        def grads():
            return list(L.linear_bwd(r, L.linear_fwd(x, p)[1], p))
        return [x, W, b], f, grads
    if kind == "mha":
        T, d, h = 4, 6, 2
        x = rng.normal(size=(T, d))
        w = 1.0 / np.sqrt(d)  # init-scale weights keep the objective O(1)
        p = L.MhaParams(*(rng.normal(0.0, w, (h, d, d // h)) for _ in range(3)), rng.normal(0.0, w, (d, d)))
        r = rng.normal(size=(T, d))

        def f():
            return float(np.sum(L.mha_fwd(x, p)[0] * r))

        def grads():
            dx, g = L.mha_bwd(r, L.mha_fwd(x, p)[1], p)
            return [dx, g.wq, g.wk, g.wv, g.wo]
        return [x, p.wq, p.wk, p.wv, p.wo], f, grads
    if kind == "layernorm":
        x = rng.normal(size=(3, 5))
        p = L.LayerNormParams(rng.normal(size=5), rng.normal(size=5))
        r = rng.normal(size=(3, 5))

        def f():
            return float(np.sum(L.layernorm_fwd(x, p)[0] * r))

        def grads():
            return list(L.layernorm_bwd(r, L.layernorm_fwd(x, p)[1], p))
        return [x, p.gamma, p.beta], f, grads
    if kind == "relu":
        x = rng.normal(size=(4, 5))
        x[np.abs(x) < 1e-3] = 0.5  # keep finite differences off the kink
        r = rng.normal(size=(4, 5))

        def f():
            return float(np.sum(L.relu_fwd(x)[0] * r))

        def grads():
            return [L.relu_bwd(r, L.relu_fwd(x)[1])]
        return [x], f, grads
    if kind == "pool":
        x = rng.normal(size=(5, 3))
        r = rng.normal(size=3)

        def f():
            return float(L.global_avg_pool_fwd(x)[0] @ r)

        def grads():
            return [L.global_avg_pool_bwd(r, L.global_avg_pool_fwd(x)[1])]
        return [x], f, grads
    if kind == "softmax_xent":
        logits = rng.normal(size=(4, 2))
        labels = rng.integers(0, 2, size=4)

        def f():
            return L.softmax_xent(logits, labels)[0]

        def grads():
            return [L.softmax_xent(logits, labels)[1]]
        return [logits], f, grads
    raise ValueError(kind)


LAYER_KINDS = ("linear", "mha", "layernorm", "relu", "pool", "softmax_xent")


def layer_gradient_error(kind: str, seed: int) -> float:
    inputs, f, grads = _layer_case(kind, np.random.default_rng([seed, LAYER_KINDS.index(kind)]))
    analytic = grads()
    return max(max_rel_error(a, numeric_grad(f, x)) for a, x in zip(analytic, inputs))


@_timed
def check_layer_gradients(kind: str, seed: int = 0, n_seeds: int = 20) -> CheckResult:
    worst = max(layer_gradient_error(kind, seed + i) for i in range(n_seeds))
    return CheckResult(f"layer_gradient_{kind}", worst <= 1e-5, worst, 1e-5, f"{n_seeds} seeds")


# --------------------------------------------------------------- invariances


@_timed
def check_permutation_invariance(seed: int = 0, pairs: int = 100) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(pairs):
        C = int(rng.choice([2, 4, 6, 8]))
        T = int(rng.integers(1, 17))
        params = M.init_params(M.ModelConfig(d_model=C, heads=2, ffn_hidden=2 * C, fc_hidden=4,
                                             init_seed=int(rng.integers(1 << 32))))
        e = rng.normal(size=(T, C))
        perm = rng.permutation(T)
        a = M.forward(e, params)[0]
        b = M.forward(e[perm], params)[0]
        worst = max(worst, float(np.abs(a - b).max()))
    return CheckResult("permutation_invariance", worst <= 1e-12, worst, 1e-12, f"{pairs} pairs")


@_timed
def check_attention_rows(seed: int = 0, cases: int = 100) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    negative = False
    for _ in range(cases):
        T, h, dh = int(rng.integers(1, 20)), 2, int(rng.integers(1, 5))
        d = h * dh
        p = L.MhaParams(*(rng.normal(size=(h, d, dh)) * 2 for _ in range(3)), rng.normal(size=(d, d)))
        attn = L.mha_fwd(rng.normal(size=(T, d)) * 3, p)[1].saved["attn"]
        negative |= bool((attn < 0).any())
        worst = max(worst, float(np.abs(attn.sum(axis=-1) - 1.0).max()))
    return CheckResult("attention_row_stochastic", worst <= 1e-12 and not negative, worst, 1e-12)


# -------------------------------------------------------------------- filter


def filter_attenuation_db(fs: float = 8192.0, taps: int | None = None) -> tuple[float, float]:
    """Attenuation (dB, positive = suppressed) at 0.2 Hz and 60 Hz relative to 10 Hz."""
    filt = design_bandpass(1.0, 50.0, fs, taps)
    lo, ref, hi = filt.response([0.2, 10.0, 60.0])
    return float(20 * np.log10(ref / lo)), float(20 * np.log10(ref / hi))


@_timed
def check_filter_response() -> CheckResult:
    at_low, at_high = filter_attenuation_db()
    worst = min(at_low, at_high)
    return CheckResult("filter_response_db", worst >= 40.0, worst, 40.0,
                       f"0.2 Hz: {at_low:.2f} dB, 60 Hz: {at_high:.2f} dB")


# ------------------------------------------------------------------- leakage


def brute_force_prune(train: WindowSet, test: WindowSet) -> np.ndarray:
    """Indices of train windows overlapping no same-trial test window, by direct comparison."""
    keep = []
    for i in range(len(train)):
        leaky = False
        for j in range(len(test)):
            if (train.subject_ids[i] == test.subject_ids[j] and train.trial_ids[i] == test.trial_ids[j]
                    and max(train.starts[i], test.starts[j]) < min(train.ends[i], test.ends[j])):
                leaky = True
                break
        if not leaky:
            keep.append(i)
    return np.array(keep, dtype=np.int64)


def leaks(train: WindowSet, test: WindowSet) -> bool:
    return len(brute_force_prune(train, test)) != len(train)


def random_window_set(rng, n: int, trials: int, span: int = 200) -> WindowSet:
    starts = rng.integers(0, span, n)
    ends = starts + rng.integers(1, 40, n)
    z = np.zeros(n, dtype=np.int64)
    return WindowSet(np.zeros((n, 1, 1)), rng.integers(0, 2, n), rng.integers(0, trials, n), starts, ends, z)


def _tagged(ws: WindowSet) -> WindowSet:
    """Copy whose single data value records the original row index."""
    return WindowSet(np.arange(len(ws), dtype=np.float64).reshape(-1, 1, 1), ws.labels, ws.trial_ids,
                     ws.starts, ws.ends, ws.subject_ids)


@_timed
def check_leakage(seed: int = 0, sets: int = 1000) -> CheckResult:
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(sets):
        trials = int(rng.integers(1, 6))
        train = _tagged(random_window_set(rng, int(rng.integers(0, 40)), trials))
        test = random_window_set(rng, int(rng.integers(0, 15)), trials)
        got = prune_leaky(train, test).data.reshape(-1).astype(np.int64)
        if not np.array_equal(got, brute_force_prune(train, test)):
            mismatches += 1
    folds_bad = 0
    for _ in range(20):
        ws = random_window_set(rng, int(rng.integers(5, 60)), int(rng.integers(1, 5)))
        for train, test in kfold_split(ws, 5, int(rng.integers(1 << 32))):
            folds_bad += leaks(train, test)
    total = mismatches + folds_bad
    return CheckResult("leakage_oracle", total == 0, float(total), 0.0,
                       f"{sets} random sets, {mismatches} prune mismatches, {folds_bad} leaky folds")


# ---------------------------------------------------------------- protocol


@_timed
def check_protocol_constants() -> CheckResult:
    c = TrainConfig()
    expected = dict(lr=1e-3, epochs=300, batch_size=32, patience=20, folds=5)
    bad = [k for k, v in expected.items() if getattr(c, k) != v]
    return CheckResult("protocol_constants", not bad, float(len(bad)), 0.0,
                       "mismatched: " + ", ".join(bad) if bad else "lr=1e-3 epochs=300 batch=32 patience=20 folds=5")


# ----------------------------------------------------------- end to end


E2E_TRAIN = TrainConfig(epochs=20, patience=10)


def synthetic_cv(snr_db: float, seed: int = 0, train_cfg: TrainConfig = E2E_TRAIN, on_fold=None,
                 subjects: int = 4):
    recs = synthesize(SynthConfig(subjects=subjects, trials_per_subject=8, trial_seconds=30.0,
                                  fs=128.0, snr_db=snr_db, seed=seed))
    return run_cv(recs, 0.5, train_cfg, on_fold=on_fold)


@_timed
def check_synthetic_end_to_end(seed: int = 0) -> CheckResult:
    high = synthetic_cv(12.0, seed).grand_mean
    low = synthetic_cv(0.0, seed).grand_mean
    ok = high >= 0.90 and high >= low
    return CheckResult("synthetic_end_to_end", ok, high, 0.90, f"acc@12dB={high:.4f} acc@0dB={low:.4f}")


def run_all(seed: int = 0, quick: bool = False, fault: str | None = None) -> list[CheckResult]:
    results = [check_model_gradient(seed, fault=fault)]
    results += [check_layer_gradients(k, seed) for k in LAYER_KINDS]
    results += [
        check_permutation_invariance(seed),
        check_attention_rows(seed),
        check_filter_response(),
        check_leakage(seed),
        check_protocol_constants(),
    ]
    if not quick:
        results.append(check_synthetic_end_to_end(seed))
    return results
