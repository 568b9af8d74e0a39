"""``wavescope`` command-line interface.

Exit codes: 0 success, 1 stage/runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from . import cae as cae_mod
from . import detect
from . import ocsvm as svm
from . import scalogram as sc
from . import subspace as sub
from . import wavegen
from .config import format_config, load_config, parse_config, write_run_manifest
from .errors import ConfigError, StageError, ValidationError, WavescopeError

log = logging.getLogger("wavescope")


def _thread_limit():
    n = os.environ.get("WAVESCOPE_THREADS")
    if not n:
        return nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    return threadpool_limits(int(n))


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except WavescopeError as exc:
        raise StageError(name, exc) from exc
    except (OSError, ValueError, ArithmeticError) as exc:
        raise StageError(name, exc) from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args):
    cfg = load_config(args.config) if args.config else parse_config("")
    out = Path(args.out)
    t0 = time.perf_counter()
    split = _stage("dataset", wavegen.build_dataset, cfg.generation_config(), args.seed)
    _stage("dataset", wavegen.save_dataset, split, out)
    (out / "config.echo").write_text(format_config(cfg))
    write_run_manifest(out, {"command": "gen", "seed": args.seed,
                             "time_dataset": f"{time.perf_counter() - t0:.3f}"})
    print(f"wrote {len(split.train_baseline)}/{len(split.test_baseline)}/"
          f"{len(split.test_damaged)} records to {out}")


_SPLIT_CHOICES = {"all": wavegen.SPLITS, "train": ("train_baseline",),
                  "test": ("test_baseline", "test_damaged")}


def cmd_cwt(args):
    ds = _stage("dataset", wavegen.load_dataset, args.input)
    records = [r for name in _SPLIT_CHOICES[args.split] for r in getattr(ds, name)]
    wp = sc.WaveletParams.default(ds.sample_rate, args.n_scales, args.beta, args.gamma)
    images, labels = _stage("cwt", sc.encode_records, records, wp, args.size, args.size, args.channels)
    _stage("cwt", sc.save_images, args.out, images, labels)
    print(f"wrote {len(images)} images of shape {images.shape[1:]} to {args.out}")


def _load_flat(path):
    images, labels = _stage("load", sc.load_images, path)
    return images.reshape(len(images), -1), labels


def cmd_fit_subspace(args):
    X, _ = _load_flat(args.input)
    if args.kind == "pca":
        model = _stage("subspace", sub.pca_fit, X, args.components)
        info = f"explained variance ratio {np.round(sub.explained_variance_ratio(model), 4).tolist()}"
    else:
        model = _stage("subspace", sub.fastica_fit, X, args.components, args.tol,
                       args.max_iter, args.seed)
        info = f"converged={model.converged} after {model.n_iter} iterations"
    _stage("subspace", sub.save_subspace, model, args.out)
    print(f"{args.kind} model with {args.components} components -> {args.out}; {info}")


def _features(path, subspace_path):
    if subspace_path:
        X, labels = _load_flat(path)
        model = _stage("subspace", sub.load_subspace, subspace_path)
        return _stage("subspace", sub.transform, model, X), labels
    data = _stage("load", np.loadtxt, path, delimiter=",", ndmin=2)
    return data, np.zeros(len(data), dtype=np.uint8)


def cmd_fit_ocsvm(args):
    X, _ = _features(args.input, args.subspace)
    kernel = svm.KernelSpec(args.gamma) if args.gamma else None
    model = _stage("ocsvm", svm.ocsvm_fit, X, args.nu, kernel)
    _stage("ocsvm", svm.save_ocsvm, model, args.out)
    frac = float(np.mean(svm.predict(model, X)))
    print(f"ocSVM nu={args.nu} gamma={model.rbf_gamma:.4g} rho={model.rho:.6g} "
          f"SVs={model.alphas.size} training outliers={frac:.3f} -> {args.out}")


def cmd_train_cae(args):
    images, _ = _stage("load", sc.load_images, args.input)
    if args.preset == "paper-shape":
        spec = cae_mod.paper_preset()
    else:
        spec = cae_mod.desk_preset(images.shape[1], images.shape[3], tuple(args.filters))
    model = _stage("cae", cae_mod.build_cae, spec, images.shape[1:], args.seed)
    opt = cae_mod.OptimizerState(learning_rate=args.lr)
    hist = _stage("cae", cae_mod.train, model, images, args.epochs, args.lr, args.batch,
                  args.seed, opt)
    _stage("cae", cae_mod.save_checkpoint, model, args.out, opt)
    enc, dec, tot = cae_mod.count_params(model)
    last = f"{hist.loss[-1]:.3e}" if hist.loss else "n/a"
    print(f"CAE params encoder={enc} decoder={dec} total={tot}; final loss {last} -> {args.out}")


def cmd_run(args):
    cfg = load_config(args.config)
    out = Path(args.out)
    if args.seed is not None:
        from dataclasses import replace
        cfg = replace(cfg, run=replace(cfg.run, seed=args.seed))
    t0 = time.perf_counter()
    result = detect.run_pipeline(cfg, out)
    runs = result if cfg.run.repeats > 1 else [result]
    write_run_manifest(out, {"command": "run", "time_total": f"{time.perf_counter() - t0:.3f}"})
    for i, reports in enumerate(runs):
        for r in reports:
            print(f"run {i} {r.method:10s} {r.rule:8s} accuracy {r.accuracy:.4f} "
                  f"TP={r.confusion.tp} FP={r.confusion.fp} TN={r.confusion.tn} FN={r.confusion.fn}")


def cmd_sweep_nu(args):
    Xtr, _ = _load_flat(args.input)
    Xte, yte = _load_flat(args.test)
    if args.kind == "pca":
        model = _stage("subspace", sub.pca_fit, Xtr, args.components)
    else:
        model = _stage("subspace", sub.fastica_fit, Xtr, args.components, seed=args.seed)
    ftr, fte = sub.transform(model, Xtr), sub.transform(model, Xte)
    truth = (yte == wavegen.Label.DAMAGED).astype(int)
    kernel = svm.KernelSpec(args.gamma) if args.gamma else None
    rows = _stage("ocsvm", detect.nu_sweep, ftr, fte, truth, tuple(args.nus), kernel)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "nu_sweep.csv", "w") as fh:
        fh.write("nu,accuracy,fp,fn,train_outlier_fraction,sv_fraction\n")
        for r in rows:
            fh.write(f"{r.nu},{r.accuracy},{r.fp},{r.fn},{r.train_outlier_fraction},{r.sv_fraction}\n")
            print(f"nu={r.nu:.1f} accuracy={r.accuracy:.4f} FP={r.fp} FN={r.fn}")
    write_run_manifest(out, {"command": "sweep-nu", "kind": args.kind, "seed": args.seed})


def cmd_report(args):
    root = Path(args.input)
    files = sorted(root.rglob("report_*.json"))
    if not files:
        raise StageError("report", FileNotFoundError(f"no report_*.json under {root}"))
    lines = ["file,method,rule,accuracy,tp,fp,tn,fn,threshold"]
    for f in files:
        d = json.loads(f.read_text())
        c = d["confusion"]
        lines.append(f"{f.relative_to(root)},{d['method']},{d['rule']},{d['accuracy']},"
                     f"{c['tp']},{c['fp']},{c['tn']},{c['fn']},{d['threshold']}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")


# ---------------------------------------------------------------------------
# parser


def build_parser():
    p = argparse.ArgumentParser(prog="wavescope", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"wavescope {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    subs = p.add_subparsers(dest="command", metavar="COMMAND")

    g = subs.add_parser("gen", help="generate a synthetic guided-wave dataset")
    g.add_argument("--config", help="run configuration file ([dataset] section is used)")
    g.add_argument("--seed", type=int, default=0, help="master seed")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.set_defaults(func=cmd_gen)

    c = subs.add_parser("cwt", help="encode a dataset as scalogram images")
    c.add_argument("--in", dest="input", required=True, help="dataset directory")
    c.add_argument("--out", required=True, help="output image corpus file")
    c.add_argument("--size", type=int, default=64, help="image height and width")
    c.add_argument("--channels", type=int, choices=(1, 3), default=1, help="1 = grayscale, 3 = RGB")
    c.add_argument("--split", choices=sorted(_SPLIT_CHOICES), default="all", help="records to encode")
    c.add_argument("--beta", type=float, default=20.0, help="Morse beta")
    c.add_argument("--gamma", type=float, default=3.0, help="Morse gamma")
    c.add_argument("--n-scales", type=int, default=64, help="number of wavelet scales")
    c.set_defaults(func=cmd_cwt)

    s = subs.add_parser("fit-subspace", help="fit PCA or FastICA on an image corpus")
    s.add_argument("--kind", choices=("pca", "ica"), required=True, help="subspace method")
    s.add_argument("--components", type=int, default=3, help="subspace dimension")
    s.add_argument("--in", dest="input", required=True, help="training image corpus")
    s.add_argument("--out", required=True, help="output WSUB model file")
    s.add_argument("--tol", type=float, default=1e-4, help="FastICA tolerance")
    s.add_argument("--max-iter", type=int, default=500, help="FastICA iteration cap")
    s.add_argument("--seed", type=int, default=0, help="FastICA initial rotation seed")
    s.set_defaults(func=cmd_fit_subspace)

    o = subs.add_parser("fit-ocsvm", help="fit a one-class SVM on feature rows")
    o.add_argument("--nu", type=float, default=0.1, help="nu in (0, 1]")
    o.add_argument("--in", dest="input", required=True,
                   help="CSV feature matrix, or an image corpus when --subspace is given")
    o.add_argument("--subspace", help="WSUB subspace model used to featurise --in images")
    o.add_argument("--gamma", type=float, help="RBF gamma (default 1/(M * mean variance))")
    o.add_argument("--out", required=True, help="output WSUB model file")
    o.set_defaults(func=cmd_fit_ocsvm)

    t = subs.add_parser("train-cae", help="train the convolutional autoencoder")
    t.add_argument("--preset", choices=("desk", "paper-shape"), default="desk", help="architecture")
    t.add_argument("--in", dest="input", required=True, help="baseline training image corpus")
    t.add_argument("--epochs", type=int, default=500, help="training epochs")
    t.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    t.add_argument("--batch", type=int, default=32, help="mini-batch size")
    t.add_argument("--filters", type=int, nargs="+", default=[8, 16, 32], help="desk encoder filters")
    t.add_argument("--seed", type=int, default=0, help="initialisation and shuffling seed")
    t.add_argument("--out", required=True, help="output WCAE checkpoint")
    t.set_defaults(func=cmd_train_cae)

    r = subs.add_parser("run", help="run the configured end-to-end benchmark")
    r.add_argument("--config", required=True, help="run configuration file")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seed", type=int, help="override [run] seed")
    r.set_defaults(func=cmd_run)

    w = subs.add_parser("sweep-nu", help="accuracy of PCA/ICA-ocSVM over a grid of nu")
    w.add_argument("--in", dest="input", required=True, help="training image corpus")
    w.add_argument("--test", required=True, help="labelled test image corpus")
    w.add_argument("--kind", choices=("pca", "ica"), default="pca", help="subspace method")
    w.add_argument("--components", type=int, default=3, help="subspace dimension")
    w.add_argument("--nus", type=float, nargs="+", default=list(detect.DEFAULT_NUS), help="nu grid")
    w.add_argument("--gamma", type=float, help="RBF gamma (default 1/(M * mean variance))")
    w.add_argument("--seed", type=int, default=0, help="FastICA seed")
    w.add_argument("--out", required=True, help="output directory")
    w.set_defaults(func=cmd_sweep_nu)

    rp = subs.add_parser("report", help="summarise report JSON files of a run directory")
    rp.add_argument("--in", dest="input", required=True, help="run directory")
    rp.add_argument("--out", help="optional CSV summary file")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            args.func(args)
    except ConfigError as exc:
        print(f"wavescope: config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        if isinstance(exc.cause, ConfigError):
            print(f"wavescope: config error: {exc.cause}", file=sys.stderr)
            return 2
        print(f"wavescope: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"wavescope: {exc}", file=sys.stderr)
        return 2
    except (WavescopeError, OSError) as exc:
        print(f"wavescope: {exc}", file=sys.stderr)
        return 1
    return 0


def main_entry():
    sys.exit(main())
