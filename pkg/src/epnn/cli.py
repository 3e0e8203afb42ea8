"""Command-line interface: fit, predict, eval, synth, inspect.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
divergence.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile

import numpy as np

from . import data as data_mod
from . import engine, modelfile
from . import prediction as predict_mod
from .exceptions import ConfigError, DataError, DimensionMismatch, Diverged, \
    NotPositiveDefinite

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _write_json(path: str, payload: dict) -> None:
    dir_ = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=dir_, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cmd_fit(args) -> int:
    cfg = modelfile.load_config(args.config)
    if args.mode:
        cfg.update_mode = args.mode
    if args.theta_fixed is not None:
        cfg.theta_known = args.theta_fixed
    if args.seed is not None:
        cfg.rng_seed = args.seed
    ds = data_mod.load_csv(args.data)
    result = engine.fit(ds.X, ds.y, cfg)
    modelfile.save_model(args.out, result, ds.norm_stats, ds.columns)
    report_path = args.report_out or os.path.splitext(args.out)[0] + ".report.json"
    _write_json(report_path, result.report.summary())
    print(f"fit: converged={result.report.converged} "
          f"iterations={result.report.iterations} model={args.out}")
    return EXIT_OK


def _load_inputs(model: dict, path: str):
    """Normalized test matrix plus optional targets from a raw CSV."""
    stats = model["norm_stats"]
    if stats is None:
        raise ConfigError("model carries no normalization stats")
    X_raw, y_last, header = data_mod.read_csv_raw(path, target_col=None)
    n_feat = stats.x_mean.size
    total = X_raw.shape[1] + 1
    if total == n_feat:  # no target column present
        X_all = np.column_stack([X_raw, y_last])
        ds = data_mod.normalize_with(X_all, None, stats)
        return ds, None
    if total == n_feat + 1:
        ds = data_mod.normalize_with(X_raw, y_last, stats)
        return ds, y_last
    raise DimensionMismatch(
        f"{path} has {total} columns; model expects {n_feat} features (+ optional target)")


def _cmd_predict(args) -> int:
    model = modelfile.load_model(args.model)
    ds, y_raw = _load_inputs(model, args.data)
    state = model["state"]
    stats = model["norm_stats"]
    y_norm = None if y_raw is None else ds.y
    f_mean, y_var, lpd = predict_mod.predict_batch(state, ds.X, y_norm)
    mean_orig = f_mean * stats.y_std + stats.y_mean
    var_orig = y_var * stats.y_std**2
    header = ["mean", "var"]
    cols = [mean_orig, var_orig]
    if lpd is not None:
        header.append("log_density")
        cols.append(lpd - math.log(stats.y_std))
    data_mod.write_csv(args.out, header, np.column_stack(cols))
    print(f"predict: wrote {len(mean_orig)} rows to {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    model = modelfile.load_model(args.model)
    ds, y_raw = _load_inputs(model, args.data)
    if y_raw is None:
        raise DimensionMismatch("eval requires the target column in the data")
    stats = model["norm_stats"]
    metrics = predict_mod.evaluate(model["state"], ds.X, ds.y,
                                   y_mean=stats.y_mean, y_std=stats.y_std)
    table = np.column_stack([metrics["original"]["lpd"], metrics["original"]["se"],
                             metrics["normalized"]["lpd"], metrics["normalized"]["se"]])
    data_mod.write_csv(args.out, ["lpd", "se", "lpd_normalized", "se_normalized"], table)
    summary = {
        "units_note": "metrics reported in both original and normalized target units",
        "original": metrics["original"]["summary"],
        "normalized": metrics["normalized"]["summary"],
    }
    _write_json(os.path.splitext(args.out)[0] + ".summary.json", summary)
    print(f"eval: lpd_mean={summary['original']['lpd_mean']:.4f} "
          f"se_mean={summary['original']['se_mean']:.4f}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    X, y = data_mod.synth_case_raw(args.case, args.n, args.seed,
                                   noise_std=args.noise, jump=args.jump)
    header = [f"x{j + 1}" for j in range(X.shape[1])] + ["y"]
    data_mod.write_csv(args.out, header, np.column_stack([X, y]))
    print(f"synth: wrote {args.n} rows of case {args.case!r} to {args.out}")
    return EXIT_OK


def _cmd_inspect(args) -> int:
    model = modelfile.load_model(args.model)
    state = model["state"]
    K = state.K
    d = state.qw[0].dim
    rows = []
    z = 1.959963984540054  # 97.5% standard normal quantile
    for k in range(K):
        for j in range(d):
            m = state.qw[k].mean[j]
            s = math.sqrt(state.qw[k].cov[j, j])
            rows.append((0.0, k + 1, j + 1, m, s, m - z * s, m + z * s))
    for c in range(K + 1):
        m = state.qv.mean[c]
        s = math.sqrt(state.qv.cov[c, c])
        rows.append((1.0, c + 1, 0.0, m, s, m - z * s, m + z * s))
    for l, g in enumerate(state.qphi):
        s = math.sqrt(g.var)
        rows.append((2.0, l + 1, 0.0, g.mean, s, g.mean - z * s, g.mean + z * s))
    th = state.qtheta
    s = math.sqrt(th.var)
    rows.append((3.0, 1.0, 0.0, th.mean, s, th.mean - z * s, th.mean + z * s))
    header = ["kind", "unit", "input", "mean", "std", "lo95", "hi95"]
    data_mod.write_csv(args.out, header, np.asarray(rows))
    print(f"inspect: wrote {len(rows)} parameter rows to {args.out} "
          "(kind: 0=input_weight 1=output_weight 2=scale 3=log_noise_var)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="epnn", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a model from a config and a CSV dataset")
    f.add_argument("--config", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--report-out")
    f.add_argument("--seed", type=int)
    f.add_argument("--mode", choices=[engine.SEQUENTIAL, engine.PARALLEL])
    f.add_argument("--theta-fixed", type=float)
    f.set_defaults(func=_cmd_fit)

    pr = sub.add_parser("predict", help="predict with a fitted model")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=_cmd_predict)

    ev = sub.add_parser("eval", help="held-out metrics for a fitted model")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=_cmd_eval)

    sy = sub.add_parser("synth", help="generate a synthetic dataset CSV")
    sy.add_argument("--case", required=True,
                    choices=[data_mod.CASE_CLUSTERS, data_mod.CASE_ADDITIVE,
                             data_mod.CASE_STEP])
    sy.add_argument("--n", type=int, required=True)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--noise", type=float)
    sy.add_argument("--jump", type=float, default=1.0)
    sy.add_argument("--out", required=True)
    sy.set_defaults(func=_cmd_synth)

    ins = sub.add_parser("inspect", help="posterior interval tables as CSV")
    ins.add_argument("--model", required=True)
    ins.add_argument("--out", required=True)
    ins.set_defaults(func=_cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DimensionMismatch) as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (Diverged, NotPositiveDefinite) as exc:
        print(f"error: numerical: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
