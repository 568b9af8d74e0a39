"""Anomaly decisions, confusion matrices and the end-to-end benchmark pipeline.

Conventions used in every report:

* positive class = anomaly (damage detected);
* a reconstruction error equal to the threshold is classified as normal;
* quantile thresholds use linear interpolation between order statistics,
  ``x[floor(h)] + (h - floor(h)) * (x[floor(h)+1] - x[floor(h)])`` with
  ``h = (n - 1) q`` on the sorted errors.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import cae as cae_mod
from . import ocsvm as svm
from . import scalogram as sc
from . import subspace as sub
from . import wavegen
from .errors import StageError, ValidationError, WavescopeError

log = logging.getLogger(__name__)

NORMAL, ANOMALY = 0, 1
METHODS = ("pca_ocsvm", "ica_ocsvm", "cae")
DEFAULT_NUS = tuple(round(0.1 * k, 1) for k in range(1, 10))


@dataclass(frozen=True)
class ThresholdRule:
    kind: str = "quantile"
    q: float = 0.99

    def __post_init__(self):
        if self.kind not in ("max", "quantile"):
            raise ValidationError("threshold kind must be 'max' or 'quantile'")
        if self.kind == "quantile" and not 0 < self.q <= 1:
            raise ValidationError("quantile q must lie in (0, 1]")

    @classmethod
    def parse(cls, text):
        text = text.strip().lower()
        if text == "max":
            return cls("max", 1.0)
        if text.startswith("q"):
            try:
                return cls("quantile", float(text[1:]))
            except ValueError:
                pass
        raise ValidationError(f"bad threshold rule {text!r} (use 'max' or e.g. 'q0.99')")

    def __str__(self):
        return "max" if self.kind == "max" else f"q{self.q:g}"


def quantile_linear(values, q):
    x = np.sort(np.asarray(values, dtype=np.float64))
    h = (x.size - 1) * q
    lo = int(np.floor(h))
    hi = min(lo + 1, x.size - 1)
    return float(x[lo] + (h - lo) * (x[hi] - x[lo]))


def compute_threshold(train_errors, rule=ThresholdRule()):
    e = np.asarray(train_errors, dtype=np.float64).ravel()
    if e.size == 0:
        raise ValidationError("cannot derive a threshold from no errors")
    if rule.kind == "max":
        return float(e.max())
    return quantile_linear(e, rule.q)


def classify(errors, threshold):
    if not np.isfinite(threshold):
        raise ValidationError("threshold must be finite")
    return (np.asarray(errors, dtype=np.float64) > threshold).astype(np.int8)


@dataclass
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self):
        return (self.tp + self.tn) / self.total if self.total else float("nan")


def confusion_and_accuracy(pred, truth):
    pred = np.asarray(pred).astype(int).ravel()
    truth = np.asarray(truth).astype(int).ravel()
    if pred.shape != truth.shape:
        raise ValidationError("prediction and truth lengths differ")
    c = Confusion(
        tp=int(np.sum((pred == ANOMALY) & (truth == ANOMALY))),
        fp=int(np.sum((pred == ANOMALY) & (truth == NORMAL))),
        tn=int(np.sum((pred == NORMAL) & (truth == NORMAL))),
        fn=int(np.sum((pred == NORMAL) & (truth == ANOMALY))),
    )
    return c, c.accuracy


@dataclass
class DetectionReport:
    method: str
    scores: list
    truth: list
    predictions: list
    threshold: float
    confusion: Confusion
    accuracy: float
    rule: str = ""
    score_kind: str = "reconstruction_mse"
    train_scores: list = field(default_factory=list)
    thresholds: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    seed: int | None = None
    config: str = ""

    def to_dict(self):
        d = asdict(self)
        d["confusion"] = asdict(self.confusion)
        d["positive_class"] = "anomaly"
        d["boundary_rule"] = ("score <= threshold is normal" if self.score_kind == "reconstruction_mse"
                              else "decision >= 0 is normal")
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def make_report(method, scores, truth, threshold, **kw):
    scores = np.asarray(scores, dtype=np.float64)
    pred = classify(scores, threshold)
    conf, acc = confusion_and_accuracy(pred, truth)
    return DetectionReport(method, scores.tolist(), np.asarray(truth).astype(int).tolist(),
                           pred.astype(int).tolist(), float(threshold), conf, acc, **kw)


def reconstruction_errors(model, data):
    """Per-sample mean squared reconstruction error.

    ``model`` is a CAE (``data`` are images) or a PCA/ICA model (``data`` are
    flattened rows).
    """
    if isinstance(model, cae_mod.CaeModel):
        return cae_mod.reconstruction_errors(model, data)
    X = np.asarray(data, dtype=np.float64)
    X = X.reshape(X.shape[0], -1)
    R = sub.inverse(model, sub.transform(model, X))
    return np.mean((R - X) ** 2, axis=1)


@dataclass
class SweepRow:
    nu: float
    accuracy: float
    fp: int
    fn: int
    train_outlier_fraction: float
    sv_fraction: float


def nu_sweep(train_features, test_features, test_labels, nus=DEFAULT_NUS, kernel=None):
    """Fit and score one ocSVM per value of nu."""
    rows = []
    for nu in nus:
        model = svm.ocsvm_fit(train_features, nu, kernel)
        pred = svm.predict(model, test_features)
        conf, acc = confusion_and_accuracy(pred, test_labels)
        train_pred = svm.predict(model, train_features)
        rows.append(SweepRow(float(nu), acc, conf.fp, conf.fn,
                             float(np.mean(train_pred)),
                             model.alphas.size / model.n_train))
    return rows


# ---------------------------------------------------------------------------
# pipeline


def run_seed(master_seed, repeat):
    return int(np.random.SeedSequence([int(master_seed), int(repeat)]).generate_state(1)[0])


class _Stage:
    def __init__(self, name, timings):
        self.name, self.timings = name, timings

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, typ, exc, tb):
        self.timings[self.name] = self.timings.get(self.name, 0.0) + time.perf_counter() - self.t0
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _dataset_for(cfg, seed):
    if cfg.dataset.path:
        return wavegen.load_dataset(cfg.dataset.path)
    return wavegen.build_dataset(cfg.generation_config(), seed)


def run_once(cfg, seed, out=None, timings=None):
    """One generate -> CWT -> methods -> report pass.  Returns reports."""
    from .config import format_config

    timings = {} if timings is None else timings
    out = Path(out) if out is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    cfg_text = format_config(cfg)
    rep = cfg.representation

    with _Stage("dataset", timings):
        ds = _dataset_for(cfg, seed)
        if out is not None:
            wavegen.save_dataset(ds, out / "dataset")

    with _Stage("cwt", timings):
        wp = sc.WaveletParams.default(ds.sample_rate, rep.n_scales, rep.beta, rep.gamma,
                                      rep.fmin_ratio, rep.fmax_ratio)
        enc = lambda recs: sc.encode_records(recs, wp, rep.size, rep.size, rep.channels)
        X_train, _ = enc(ds.train_baseline)
        X_test, y_test = enc(ds.test_records())
        y_test = (y_test == wavegen.Label.DAMAGED).astype(np.int8)
        if out is not None:
            sc.save_images(out / "train_images.bin", X_train, np.zeros(len(X_train)))
            sc.save_images(out / "test_images.bin", X_test, y_test)

    reports = []
    common = dict(seed=seed, config=cfg_text)
    flat_train = X_train.reshape(len(X_train), -1)
    flat_test = X_test.reshape(len(X_test), -1)
    m = cfg.methods
    for method in m.methods:
        if method in ("pca_ocsvm", "ica_ocsvm"):
            with _Stage("subspace", timings):
                if method == "pca_ocsvm":
                    model = sub.pca_fit(flat_train, m.components)
                else:
                    model = sub.fastica_fit(flat_train, m.components, m.ica_tol, m.ica_max_iter, seed=seed)
                f_train = sub.transform(model, flat_train)
                f_test = sub.transform(model, flat_test)
                train_rec = reconstruction_errors(model, flat_train)
                if out is not None:
                    sub.save_subspace(model, out / f"{method.split('_')[0]}.wsub")
            with _Stage("ocsvm", timings):
                kernel = svm.KernelSpec(m.rbf_gamma) if m.rbf_gamma else None
                osvm = svm.ocsvm_fit(f_train, m.nu, kernel)
                scores = svm.decision(osvm, f_test)
                pred = svm.predict(osvm, f_test)
                conf, acc = confusion_and_accuracy(pred, y_test)
                sweep = nu_sweep(f_train, f_test, y_test, m.nu_grid, kernel)
                best = max(sweep, key=lambda r: r.accuracy)
                report = DetectionReport(
                    method, scores.tolist(), y_test.astype(int).tolist(), pred.astype(int).tolist(),
                    0.0, conf, acc, rule=f"nu={m.nu:g}", score_kind="ocsvm_decision",
                    train_scores=svm.decision(osvm, f_train).tolist(), thresholds={"decision": 0.0},
                    extras={
                        "nu": m.nu, "rbf_gamma": osvm.rbf_gamma, "rho": osvm.rho,
                        "nu_sweep": [asdict(r) for r in sweep],
                        "best_nu": best.nu, "best_accuracy": best.accuracy,
                        "train_reconstruction_mse": float(train_rec.mean()),
                        "test_reconstruction_mse": reconstruction_errors(model, flat_test).tolist(),
                        "explained_variance_ratio": (sub.explained_variance_ratio(model).tolist()
                                                     if isinstance(model, sub.PcaModel) else None),
                        "ica_converged": getattr(model, "converged", None),
                    },
                    **common,
                )
                reports.append(report)
                if out is not None:
                    svm.save_ocsvm(osvm, out / f"{method}.wsub")
                    _write_csv(out / f"{method}_nu_sweep.csv",
                               ["nu", "accuracy", "fp", "fn", "train_outlier_fraction", "sv_fraction"],
                               [list(asdict(r).values()) for r in sweep])
        elif method == "cae":
            c = cfg.cae
            with _Stage("cae", timings):
                spec = (cae_mod.paper_preset() if c.preset == "paper-shape"
                        else cae_mod.desk_preset(rep.size, rep.channels, c.filters))
                model = cae_mod.build_cae(spec, seed=seed)
                hist = cae_mod.train(model, X_train, c.epochs, c.lr, c.batch, seed)
                train_err = cae_mod.reconstruction_errors(model, X_train)
                test_err = cae_mod.reconstruction_errors(model, X_test)
                codes = cae_mod.latent_codes(model, X_test)
                if out is not None:
                    cae_mod.save_checkpoint(model, out / "cae.wcae")
            thresholds = {str(r): compute_threshold(train_err, r) for r in cfg.threshold.rules}
            for rule in cfg.threshold.rules:
                reports.append(make_report(
                    "cae", test_err, y_test, thresholds[str(rule)], rule=str(rule),
                    train_scores=train_err.tolist(), thresholds=thresholds,
                    extras={"train_reconstruction_mse": float(train_err.mean()),
                            "final_train_loss": hist.loss[-1] if hist.loss else None,
                            "epochs": len(hist)},
                    **common,
                ))
            if out is not None:
                _write_csv(out / "cae_loss.csv", ["epoch", "mse", "mae", "r2", "wall_time"],
                           [[i + 1, a, b, r, t] for i, (a, b, r, t) in
                            enumerate(zip(hist.loss, hist.mae, hist.r2, hist.wall_time))])
                names = list(thresholds)
                _write_csv(out / "cae_errors.csv", ["index", "label", "error"] + names,
                           [[i, int(y), e] + [thresholds[k] for k in names]
                            for i, (y, e) in enumerate(zip(y_test, test_err))])
                _write_csv(out / "cae_latent.csv",
                           ["index", "label"] + [f"z{j + 1}" for j in range(codes.shape[1])],
                           [[i, int(y)] + list(z) for i, (y, z) in enumerate(zip(y_test, codes))])
        else:
            raise StageError("config", ValidationError(f"unknown method {method!r}"))

    if out is not None:
        with _Stage("report", timings):
            for r in reports:
                name = r.method if r.method != "cae" else f"cae_{r.rule}"
                (out / f"report_{name}.json").write_text(r.to_json())
        from .config import write_run_manifest
        write_run_manifest(out, {"seed": seed})
    return reports


def run_pipeline(cfg, out=None):
    """All repeats of a configured run; each repeat gets its own derived seed."""
    from .config import format_config

    if not cfg.methods.methods:
        raise ValidationError("config names no methods")
    out = Path(out) if out is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.echo").write_text(format_config(cfg))
    all_reports = []
    timings = {}
    seeds = []
    for r in range(cfg.run.repeats):
        seed = run_seed(cfg.run.seed, r) if cfg.run.repeats > 1 else cfg.run.seed
        seeds.append(seed)
        sub_out = None
        if out is not None:
            sub_out = out if cfg.run.repeats == 1 else out / f"run-{r:02d}"
        all_reports.append(run_once(cfg, seed, sub_out, timings))
    if out is not None:
        from .config import write_run_manifest
        write_run_manifest(out, {"master_seed": cfg.run.seed,
                                 "run_seeds": ",".join(map(str, seeds)),
                                 **{f"time_{k}": f"{v:.3f}" for k, v in timings.items()}})
    return all_reports if cfg.run.repeats > 1 else all_reports[0]


__all__ = [
    "ANOMALY", "NORMAL", "Confusion", "DetectionReport", "ThresholdRule", "classify",
    "compute_threshold", "confusion_and_accuracy", "nu_sweep", "quantile_linear",
    "reconstruction_errors", "run_once", "run_pipeline", "WavescopeError",
]
