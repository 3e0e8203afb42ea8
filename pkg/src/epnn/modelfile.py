"""Lossless JSON serialization of fitted models and fit configs.

Serialization is canonical (sorted keys, compact separators, shortest
round-trip float repr), so serialize -> parse -> serialize is byte-identical
and identical fits produce identical files.
"""

from __future__ import annotations

import dataclasses
import json
import os
import tempfile

import numpy as np

from .data import NormStats
from .engine import EPFit, FitConfig, PosteriorState
from .exceptions import ConfigError
from .gaussians import Gaussian1D, GaussianDense
from .likelihood import LikelihoodSites
from .priors import OutputPriorSites, PriorConfig, WeightPriorSites

MODEL_VERSION = "epnn-model-1"


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_to_dict(cfg: FitConfig) -> dict:
    out = dataclasses.asdict(cfg)
    gi = out["priors"]["group_index"]
    if gi is not None:
        out["priors"]["group_index"] = [int(v) for v in gi]
    return out


def config_from_dict(d: dict) -> FitConfig:
    """Strict config parsing: unknown keys are errors."""
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    d = dict(d)
    prior_fields = {f.name for f in dataclasses.fields(PriorConfig)}
    fit_fields = {f.name for f in dataclasses.fields(FitConfig)}
    priors = d.pop("priors", {})
    if not isinstance(priors, dict):
        raise ConfigError("'priors' must be a JSON object")
    unknown = set(d) - fit_fields
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    unknown = set(priors) - prior_fields
    if unknown:
        raise ConfigError(f"unknown prior config keys: {sorted(unknown)}")
    return FitConfig(**d, priors=PriorConfig(**priors))


def load_config(path: str) -> FitConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(raw)


def _gauss_dense(g: GaussianDense) -> dict:
    return {"mean": g.mean.tolist(), "cov": g.cov.tolist()}


def _gauss_1d(g: Gaussian1D) -> dict:
    return {"mean": float(g.mean), "var": float(g.var)}


def fit_to_dict(result: EPFit, stats: NormStats | None, columns: list[str] | None) -> dict:
    state = result.state
    return {
        "version": MODEL_VERSION,
        "config": config_to_dict(result.config),
        "norm_stats": None if stats is None else {
            "x_mean": stats.x_mean.tolist(), "x_std": stats.x_std.tolist(),
            "y_mean": float(stats.y_mean), "y_std": float(stats.y_std),
        },
        "columns": columns,
        "posterior": {
            "qw": [_gauss_dense(g) for g in state.qw],
            "qv": _gauss_dense(state.qv),
            "qtheta": _gauss_1d(state.qtheta),
            "qphi": [_gauss_1d(g) for g in state.qphi],
        },
        "sites": {
            "likelihood": {
                "tauw": result.lik_sites.tauw.tolist(),
                "nuw": result.lik_sites.nuw.tolist(),
                "alpha": result.lik_sites.alpha.tolist(),
                "nuv": result.lik_sites.nuv.tolist(),
                "theta_tau": result.lik_sites.theta_tau.tolist(),
                "theta_nu": result.lik_sites.theta_nu.tolist(),
            },
            "w_prior": {
                "w_tau": result.w_prior_sites.w_tau.tolist(),
                "w_nu": result.w_prior_sites.w_nu.tolist(),
                "phi_tau": result.w_prior_sites.phi_tau.tolist(),
                "phi_nu": result.w_prior_sites.phi_nu.tolist(),
                "group_index": result.w_prior_sites.group_index.tolist(),
                "n_groups": result.w_prior_sites.n_groups,
            },
            "v_prior": {
                "v_tau": result.v_prior_sites.v_tau.tolist(),
                "v_nu": result.v_prior_sites.v_nu.tolist(),
            },
        },
        "flags": {
            "theta_fixed": result.theta_fixed,
            "v_prior_active": result.v_prior_active,
            "w_prior_active": result.w_prior_active,
        },
        "report": result.report.summary(),
    }


def save_model(path: str, result: EPFit, stats: NormStats | None = None,
               columns: list[str] | None = None) -> None:
    """Atomic canonical-JSON model write."""
    payload = _dumps(fit_to_dict(result, stats, columns))
    dir_ = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=dir_, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_model(path: str) -> dict:
    """Parse a model file into live objects (keys: config, state, sites, ...)."""
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if raw.get("version") != MODEL_VERSION:
        raise ConfigError(f"{path}: unsupported model version {raw.get('version')!r}")
    cfg = config_from_dict(raw["config"])
    post = raw["posterior"]
    state = PosteriorState(
        qw=[GaussianDense(np.array(g["mean"]), np.array(g["cov"])) for g in post["qw"]],
        qv=GaussianDense(np.array(post["qv"]["mean"]), np.array(post["qv"]["cov"])),
        qtheta=Gaussian1D(post["qtheta"]["mean"], post["qtheta"]["var"]),
        qphi=[Gaussian1D(g["mean"], g["var"]) for g in post["qphi"]],
    )
    s = raw["sites"]
    lik = LikelihoodSites(
        tauw=np.array(s["likelihood"]["tauw"], dtype=float),
        nuw=np.array(s["likelihood"]["nuw"], dtype=float),
        alpha=np.array(s["likelihood"]["alpha"], dtype=float),
        nuv=np.array(s["likelihood"]["nuv"], dtype=float),
        theta_tau=np.array(s["likelihood"]["theta_tau"], dtype=float),
        theta_nu=np.array(s["likelihood"]["theta_nu"], dtype=float),
    )
    wp = WeightPriorSites(
        w_tau=np.array(s["w_prior"]["w_tau"], dtype=float),
        w_nu=np.array(s["w_prior"]["w_nu"], dtype=float),
        phi_tau=np.array(s["w_prior"]["phi_tau"], dtype=float),
        phi_nu=np.array(s["w_prior"]["phi_nu"], dtype=float),
        group_index=np.array(s["w_prior"]["group_index"], dtype=int),
        n_groups=int(s["w_prior"]["n_groups"]),
    )
    vp = OutputPriorSites(
        v_tau=np.array(s["v_prior"]["v_tau"], dtype=float),
        v_nu=np.array(s["v_prior"]["v_nu"], dtype=float),
    )
    stats = None
    if raw.get("norm_stats") is not None:
        ns = raw["norm_stats"]
        stats = NormStats(x_mean=np.array(ns["x_mean"], dtype=float),
                          x_std=np.array(ns["x_std"], dtype=float),
                          y_mean=float(ns["y_mean"]), y_std=float(ns["y_std"]))
    return {
        "config": cfg, "state": state, "lik_sites": lik, "w_prior_sites": wp,
        "v_prior_sites": vp, "norm_stats": stats, "columns": raw.get("columns"),
        "flags": raw["flags"], "report": raw["report"],
    }
