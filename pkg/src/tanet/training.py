"""Training protocol: Adam on mean cross-entropy, early stopping on a stratified
validation holdout, and per-subject k-fold cross-validation over windows."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .errors import ConfigError, EmptyInputError, ShapeError, TanetError
from .layers import softmax_xent
from .preprocess import EegRecording, PreprocessConfig, WindowSet, preprocess_recording, prune_leaky, slide_windows

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 300
    batch_size: int = 32
    patience: int = 20
    folds: int = 5
    val_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.lr >= 0:  # lr = 0 is allowed for frozen-parameter diagnostics
            raise ConfigError("lr must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if not 0 < self.val_fraction < 0.5:
            raise ConfigError("val_fraction must lie in (0, 0.5)")


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def fresh(cls, params: M.TanetParams) -> "AdamState":
        return cls([np.zeros_like(a) for a in params.arrays()], [np.zeros_like(a) for a in params.arrays()])


def adam_step(params: M.TanetParams, grads: M.TanetParams, state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    ps, gs = params.arrays(), grads.arrays()
    if len(ps) != len(gs) or len(ps) != len(state.m):
        raise ShapeError("params, grads and optimizer state are not aligned")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1, c2 = 1.0 - b1**state.t, 1.0 - b2**state.t
    for p, g, m, v in zip(ps, gs, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError(f"param {p.shape} vs grad {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    return params, state


@dataclass
class FoldReport:
    subject: int
    fold: int
    win_seconds: float
    accuracy: float = float("nan")
    best_val_loss: float = float("nan")
    stop_epoch: int = 0
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    n_train: int = 0
    n_test: int = 0
    warnings: list = field(default_factory=list)

    def to_line(self) -> str:
        return (f"{self.subject} {self.fold} {self.win_seconds!r} {self.accuracy!r} "
                f"{self.stop_epoch} {self.best_val_loss!r}")


RESULTS_HEADER = "# subject fold win_seconds accuracy stop_epoch best_val_loss"


def parse_results_line(line: str) -> FoldReport:
    s, k, w, acc, stop, best = line.split()
    return FoldReport(int(s), int(k), float(w), float(acc), float(best), int(stop))


# ---------------------------------------------------------------- splitting


def kfold_split(windows: WindowSet, k: int, seed) -> list[tuple[WindowSet, WindowSet]]:
    """Shuffle windows, cut ``k`` near-equal test folds, prune each complement against its fold."""
    n = len(windows)
    if k > n:
        raise ConfigError(f"{k} folds requested for only {n} windows")
    order = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(order, k)
    out = []
    for i, test_idx in enumerate(folds):
        train_idx = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
        test = windows.subset(np.sort(test_idx))
        out.append((prune_leaky(windows.subset(train_idx), test), test))
    return out


def _stratified_holdout(labels: np.ndarray, fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    val = []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_val = int(round(fraction * len(idx)))
        if len(idx) >= 2:
            n_val = min(max(n_val, 1), len(idx) - 1)
        else:
            n_val = 0
        val.append(idx[:n_val])
    val = np.sort(np.concatenate(val)) if val else np.zeros(0, dtype=np.int64)
    fit = np.setdiff1d(np.arange(len(labels)), val)
    return fit, val


def mean_loss(params: M.TanetParams, ws: WindowSet, batch: int = 256) -> float:
    logits = M.predict(ws.data, params, batch)
    return softmax_xent(logits, ws.labels)[0]


# ----------------------------------------------------------------- training


def train_fold(train: WindowSet, cfg: TrainConfig, model_cfg: M.ModelConfig, seed=None,
               report: FoldReport | None = None) -> tuple[M.TanetParams, FoldReport]:
    """Fit one model and return the parameters from the lowest validation-loss epoch."""
    if len(train) == 0:
        raise EmptyInputError("empty training set")
    if train.data.shape[-1] != model_cfg.d_model:
        raise ShapeError(f"windows have {train.data.shape[-1]} channels, model expects {model_cfg.d_model}")
    report = report or FoldReport(0, 0, float("nan"))
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    if len(np.unique(train.labels)) < 2:
        report.warnings.append("training set contains a single class")
    fit_idx, val_idx = _stratified_holdout(train.labels, cfg.val_fraction, rng)
    fit, val = train.subset(fit_idx), train.subset(val_idx)
    if len(val) == 0:
        report.warnings.append("no validation windows; monitoring training loss")

    params = M.init_params(model_cfg)
    state = AdamState.fresh(params)
    best, best_params, wait = np.inf, params.copy(), 0
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(fit))
        total = 0.0
        for b in range(0, len(fit), cfg.batch_size):
            idx = perm[b:b + cfg.batch_size]
            logits, cache = M.forward(fit.data[idx], params)
            loss, dlogits = softmax_xent(logits, fit.labels[idx])
            adam_step(params, M.backward(dlogits, cache, params), state, cfg)
            total += loss * len(idx)
        report.train_losses.append(total / len(fit))
        monitor = mean_loss(params, val) if len(val) else report.train_losses[-1]
        report.val_losses.append(monitor)
        report.stop_epoch = epoch
        if monitor < best:
            best, best_params, wait = monitor, params.copy(), 0
        else:
            wait += 1
            if wait >= cfg.patience:
                break
    report.best_val_loss = float(best)
    report.n_train = len(train)
    return best_params, report


def evaluate(params: M.TanetParams, test: WindowSet) -> float:
    """Fraction of windows whose argmax logit equals the label (ties go to class 0)."""
    if len(test) == 0:
        raise EmptyInputError("cannot evaluate on an empty test set")
    pred = np.argmax(M.predict(test.data, params), axis=1)
    return float(np.mean(pred == test.labels))


# ---------------------------------------------------------- cross-validation


@dataclass
class CVResult:
    win_seconds: float
    reports: list
    subject_mean: dict
    subject_std: dict
    grand_mean: float
    grand_std: float


def subject_windows(recs: list[EegRecording], win_seconds: float, hop_seconds: float | None = None,
                    prep: PreprocessConfig | None = None) -> WindowSet:
    hop = win_seconds / 2 if hop_seconds is None else hop_seconds
    sets = []
    for r in recs:
        r = preprocess_recording(r, prep) if prep is not None else r
        sets.append(slide_windows(r, win_seconds, hop))
    return WindowSet.concat(sets)


def _fold_seed(seed: int, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, *keys])


def _run_fold(args):
    train, test, cfg, model_cfg, subject, fold, win = args
    report = FoldReport(subject, fold, win, n_test=len(test))
    try:
        params, report = train_fold(train, cfg, model_cfg, _fold_seed(cfg.seed, subject, fold, 1), report)
        report.accuracy = evaluate(params, test)
    except TanetError as exc:
        raise TanetError(f"subject {subject} fold {fold} (win {win} s): {exc}") from exc
    return params, report


def worker_count() -> int:
    """Worker processes from ``TANET_THREADS`` (0 or unset = sequential)."""
    try:
        return max(0, int(os.environ.get("TANET_THREADS", "0")))
    except ValueError:
        return 0


def run_cv(recordings: list[EegRecording], win_seconds: float, cfg: TrainConfig = TrainConfig(),
           model_cfg: M.ModelConfig | None = None, prep: PreprocessConfig | None = PreprocessConfig(),
           hop_seconds: float | None = None, on_fold=None, workers: int | None = None) -> CVResult:
    """Per-subject k-fold CV; ``on_fold(params, report)`` is called in (subject, fold) order."""
    by_subject: dict[int, list] = {}
    for r in recordings:
        by_subject.setdefault(r.subject_id, []).append(r)
    tasks = []
    for s in sorted(by_subject):
        try:
            ws = subject_windows(by_subject[s], win_seconds, hop_seconds, prep)
        except TanetError as exc:
            raise TanetError(f"subject {s}: {exc}") from exc
        mcfg = model_cfg or M.ModelConfig(d_model=ws.data.shape[-1])
        if mcfg.d_model != ws.data.shape[-1]:
            raise ConfigError(f"subject {s}: data has {ws.data.shape[-1]} channels, model d_model={mcfg.d_model}")
        for k, (train, test) in enumerate(kfold_split(ws, cfg.folds, _fold_seed(cfg.seed, s))):
            tasks.append((train, test, cfg, mcfg, s, k, win_seconds))

    workers = worker_count() if workers is None else workers
    reports = []
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = pool.map(_run_fold, tasks)
            for params, rep in results:
                reports.append(rep)
                if on_fold:
                    on_fold(params, rep)
    else:
        for t in tasks:
            params, rep = _run_fold(t)
            log.info("subject %d fold %d: acc %.4f stop %d", rep.subject, rep.fold, rep.accuracy, rep.stop_epoch)
            reports.append(rep)
            if on_fold:
                on_fold(params, rep)
    return summarize(win_seconds, reports)


def summarize(win_seconds: float, reports: list) -> CVResult:
    subj: dict[int, list] = {}
    for r in reports:
        subj.setdefault(r.subject, []).append(r.accuracy)
    means = {s: float(np.mean(a)) for s, a in sorted(subj.items())}
    stds = {s: float(np.std(a)) for s, a in sorted(subj.items())}
    vals = list(means.values())
    grand = float(np.mean(vals)) if vals else float("nan")
    gstd = float(np.std(vals)) if vals else float("nan")
    return CVResult(win_seconds, reports, means, stds, grand, gstd)
