"""Command-line driver: one subcommand per stage of a study.

    lrvb simulate     --config C --out DIR      data.csv + truth.json
    lrvb fit          --config C --out DIR      fit.json
    lrvb mcmc         --config C --out DIR      chain.json (+ chain_draws.csv)
    lrvb compare      --config C --out DIR      compare.csv, compare_cov.csv, compare.json
    lrvb scaling      --config C --out DIR      scaling.csv, scaling.json
    lrvb certify-mvn  --config C --out DIR      certify.json

Exit codes: 0 success, 2 input/config/IO problem, 3 optimiser or solver
failure, 4 an oracle gate failed.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.cluster.vq import kmeans2

from .errors import (
    ConfigError,
    DimensionMismatch,
    EssTooLow,
    LabelSwitchDetected,
    LayoutMismatch,
    LrvbError,
    NoConvergence,
)
from .models import gmm as gmm_mod
from .models import mvn as mvn_mod
from .models import normal_poisson as np_mod
from .models import random_effects as re_mod
from .oracles import samplers

log = logging.getLogger("lrvb")

EXIT_OK, EXIT_IO, EXIT_CONVERGENCE, EXIT_GATE = 0, 2, 3, 4
MODELS = ("np", "re", "gmm", "mvn")
COMPARE_COLUMNS = ("name", "mfvb_sd", "lrvb_sd", "mcmc_sd", "mcmc_se", "ess", "lrvb_z", "mfvb_z", "within_gate")
COMPARE_COV_COLUMNS = ("a", "b", "mfvb_cov", "lrvb_cov", "mcmc_cov")
SCALING_COLUMNS = ("N", "K", "P", "rep", "phase", "seconds")


class GateFailure(LrvbError):
    """An oracle comparison did not pass its gate."""


# --------------------------------------------------------------------------
# config, hashing, IO


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path, seed: int | None = None) -> dict:
    """Read and validate a run configuration; ``seed`` overrides the file."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if seed is not None:
        cfg["seed"] = seed
    if cfg.get("model") not in MODELS:
        raise ConfigError(f"config 'model' must be one of {MODELS}")
    s = cfg.get("seed")
    if not isinstance(s, int) or isinstance(s, bool) or not 0 <= s < 2**64:
        raise ConfigError("config needs an unsigned integer 'seed' (or pass --seed)")
    reps = cfg.get("replicates", 1)
    if not isinstance(reps, int) or reps < 1:
        raise ConfigError("'replicates' must be a positive integer")
    cfg["_base_dir"] = str(Path(path).resolve().parent)
    return cfg


def _public(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def write_json(path: Path, payload: dict, cfg: dict) -> None:
    doc = {"config_hash": config_hash(_public(cfg)), "seed": cfg["seed"], **payload}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def read_json(path: Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None


def write_csv(path: Path, header, rows, cfg: dict) -> None:
    """CSV with a leading ``# config_hash=... seed=...`` comment line."""
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash(_public(cfg))} seed={cfg['seed']}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def read_csv(path) -> dict[str, np.ndarray]:
    """Numeric CSV written by :func:`write_csv` (or any headed CSV)."""
    try:
        with open(path) as fh:
            lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    if not lines:
        raise ConfigError(f"{path} has no header")
    reader = csv.reader(lines)
    header = [h.strip() for h in next(reader)]
    try:
        body = np.array([[float(v) for v in row] for row in reader], dtype=float).reshape(-1, len(header))
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric or ragged row ({exc})") from None
    return {h: body[:, j] for j, h in enumerate(header)}


# --------------------------------------------------------------------------
# per-model adapters


@dataclass
class ModelAdapter:
    simulate: Callable  # (sim_cfg, seed) -> (header, rows, truth)
    load: Callable  # (columns) -> dataset
    priors: Callable  # (prior_cfg, dataset) -> priors
    fit: Callable  # (data, priors, fit_cfg, truth, seed) -> FitResult
    named: Callable  # (problem) -> {functional name: coordinate of m}
    mcmc: Callable  # (data, priors, mcmc_cfg, seed, truth) -> ChainSummary


def _fit_kw(fit_cfg: dict) -> dict:
    kw = {}
    for key in ("tol", "max_sweeps"):
        if key in fit_cfg:
            kw[key] = fit_cfg[key]
    return kw


def _make_priors(cls, prior_cfg: dict, **fixed):
    try:
        return cls(**fixed, **prior_cfg)
    except TypeError as exc:
        raise ConfigError(f"bad prior settings: {exc}") from None


# normal-Poisson


def _np_simulate(sim, seed):
    data, truth = np_mod.np_simulate(int(sim.get("n", 500)), float(sim["beta"]), float(sim["tau"]), seed, x_sd=float(sim.get("x_sd", 1.0)))
    return ("y", "x"), np.column_stack([data.y, data.x]), {"beta": truth["beta"], "tau": truth["tau"]}


def _np_load(cols):
    return np_mod.NpDataset(cols["y"], cols["x"])


def _np_mcmc(data, priors, mc, seed, truth):
    return samplers.mh_gibbs_np(data, priors, int(mc.get("draws", 52000)), int(mc.get("burnin", 2000)), seed,
                                z_steps=int(mc.get("z_steps", 2)), thin=int(mc.get("thin", 1)))


NP_ADAPTER = ModelAdapter(
    simulate=_np_simulate,
    load=_np_load,
    priors=lambda pc, data: _make_priors(np_mod.NpPriors, pc),
    fit=lambda data, pr, fc, truth, seed: np_mod.np_fit(data, pr, **_fit_kw(fc)),
    named=lambda prob: {"beta": np_mod.BETA, "tau": np_mod.TAU, "log_tau": np_mod.LOG_TAU},
    mcmc=_np_mcmc,
)


# random effects


def _re_simulate(sim, seed):
    data, truth = re_mod.re_simulate(
        int(sim.get("n", 300)), int(sim.get("n_groups", 30)), sim["beta"], float(sim["tau"]), float(sim["nu"]), seed,
        r_noise_var=float(sim.get("r_noise_var", 0.4)),
    )
    rows = np.column_stack([data.y, data.x, data.r, data.k + 1])
    return ("y", "x1", "x2", "r", "group"), rows, {k: truth[k] for k in ("beta", "tau", "nu")}


def _re_load(cols):
    try:
        g = cols["group"].astype(int) - 1
        return re_mod.ReDataset(cols["y"], np.column_stack([cols["x1"], cols["x2"]]), cols["r"], g, int(g.max()) + 1)
    except KeyError as exc:
        raise ConfigError(f"random-effects CSV lacks column {exc}") from None


RE_ADAPTER = ModelAdapter(
    simulate=_re_simulate,
    load=_re_load,
    priors=lambda pc, data: _make_priors(re_mod.RePriors, pc),
    fit=lambda data, pr, fc, truth, seed: re_mod.re_fit(data, pr, **_fit_kw(fc)),
    named=lambda prob: {
        "beta1": re_mod.B0, "beta2": re_mod.B1, "tau": re_mod.TAU,
        "log_tau": re_mod.LOG_TAU, "nu": re_mod.NU, "log_nu": re_mod.LOG_NU,
    },
    mcmc=lambda data, pr, mc, seed, truth: samplers.gibbs_re(
        data, pr, int(mc.get("draws", 21000)), int(mc.get("burnin", 1000)), seed, thin=int(mc.get("thin", 1))
    ),
)


# Gaussian mixture


def _gmm_truth(sim, seed):
    if "truth" in sim:
        t = sim["truth"]
        return {"mu": np.asarray(t["mu"], float), "cov": np.asarray(t["cov"], float), "pi": np.asarray(t["pi"], float)}
    return gmm_mod.overlapping_truth(int(sim.get("k", 2)), int(sim.get("p", 2)), float(sim.get("separation", 3.5)), seed)


def _gmm_simulate(sim, seed):
    truth = _gmm_truth(sim, seed)
    data, rec = gmm_mod.gmm_simulate(int(sim.get("n", 2000)), truth, seed + 1)
    header = tuple(f"x{j + 1}" for j in range(data.p))
    return header, data.x, {k: rec[k] for k in ("mu", "cov", "lam", "pi")}


def _gmm_load(cols):
    names = sorted((c for c in cols if c.startswith("x")), key=lambda c: int(c[1:]))
    if not names:
        raise ConfigError("mixture CSV needs columns x1..xP")
    return gmm_mod.GmmDataset(np.column_stack([cols[c] for c in names]))


def _gmm_priors(pc, data):
    pc = dict(pc)
    k = int(pc.pop("k", 2))
    if "lambda_inv_scale" in pc:
        pc["lambda_inv_scale"] = np.asarray(pc["lambda_inv_scale"], float)
    return _make_priors(gmm_mod.GmmPriors, pc, k=k, p=data.p)


def _need_truth(truth, what):
    if truth is None:
        raise ConfigError(f"{what} needs truth.json next to the data")
    return {"mu": np.asarray(truth["mu"]), "lam": np.asarray(truth["lam"]), "pi": np.asarray(truth["pi"])}


def _gmm_fit(data, pr, fc, truth, seed):
    init = fc.get("init", "kmeans")
    rec = _need_truth(truth, "init 'truth'") if init == "truth" else None
    return gmm_mod.gmm_fit(data, pr, init=init, truth=rec, seed=seed, **_fit_kw(fc))


def _gmm_mcmc(data, pr, mc, seed, truth):
    init = mc.get("init", "truth")
    if init == "truth":
        start = _need_truth(truth, "mcmc init 'truth'")
    elif init == "kmeans":
        x = data.x
        if pr.k == 1:
            labels = np.zeros(data.n, dtype=int)
        else:
            _, labels = kmeans2(x, pr.k, minit="++", seed=seed)
        mu = np.array([x[labels == k].mean(axis=0) for k in range(pr.k)])
        lam = np.array([np.linalg.inv(np.cov(x[labels == k], rowvar=False).reshape(data.p, data.p)) for k in range(pr.k)])
        pi = (np.bincount(labels, minlength=pr.k) + 1.0) / (data.n + pr.k)
        start = {"mu": mu, "lam": lam, "pi": pi}
    else:
        raise ConfigError(f"unknown mixture mcmc init {init!r}")
    return samplers.gibbs_gmm(data, pr, int(mc.get("draws", 21000)), int(mc.get("burnin", 1000)), seed,
                              init=start, mu_prior=mc.get("mu_prior", "conditional"), thin=int(mc.get("thin", 1)))


def _gmm_named(prob):
    pos = gmm_mod.alpha_index(prob)
    alpha = prob.layout.alpha_index
    return {name: int(alpha[i]) for name, i in pos.items()}


GMM_ADAPTER = ModelAdapter(
    simulate=_gmm_simulate, load=_gmm_load, priors=_gmm_priors, fit=_gmm_fit, named=_gmm_named, mcmc=_gmm_mcmc
)

ADAPTERS = {"np": NP_ADAPTER, "re": RE_ADAPTER, "gmm": GMM_ADAPTER}


def _adapter(cfg) -> ModelAdapter:
    if cfg["model"] not in ADAPTERS:
        raise ConfigError(f"model {cfg['model']!r} only supports certify-mvn")
    return ADAPTERS[cfg["model"]]


# --------------------------------------------------------------------------
# stage implementations (one replicate each)


def _resolve(cfg, value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else Path(cfg["_base_dir"]) / p


def _data_path(cfg, out: Path) -> Path:
    if cfg.get("_data"):
        return Path(cfg["_data"])
    if cfg.get("data") and cfg.get("replicates", 1) == 1:
        return _resolve(cfg, cfg["data"])
    return out / "data.csv"


def _load_data(cfg, out: Path):
    path = _data_path(cfg, out)
    data = _adapter(cfg).load(read_csv(path))
    truth_path = path.with_name("truth.json")
    truth = read_json(truth_path)["truth"] if truth_path.exists() else None
    return data, truth


def run_simulate(cfg: dict, out: Path) -> int:
    ad = _adapter(cfg)
    if "simulate" not in cfg:
        raise ConfigError("config has no 'simulate' section")
    header, rows, truth = ad.simulate(cfg["simulate"], cfg["seed"])
    write_csv(out / "data.csv", header, rows, cfg)
    write_json(out / "truth.json", {"model": cfg["model"], "truth": truth}, cfg)
    return EXIT_OK


def _split_timings(diag: dict) -> tuple[dict, dict]:
    keep, timing = {}, {}
    for k, v in diag.items():
        (timing if k.endswith("seconds") else keep)[k] = v
    return keep, timing


def run_fit(cfg: dict, out: Path) -> int:
    ad = _adapter(cfg)
    data, truth = _load_data(cfg, out)
    priors = ad.priors(cfg.get("priors", {}), data)
    fc = cfg.get("fit", {})
    t0 = time.perf_counter()
    fit = ad.fit(data, priors, fc, truth, cfg["seed"])
    t1 = time.perf_counter()
    prob = fit.problem
    payload = {
        "model": cfg["model"],
        "converged": fit.converged,
        "sweeps": fit.trace.sweeps,
        "elbo": fit.trace.elbo,
        "max_change": fit.trace.max_change,
        "m": fit.m,
        "labels": prob.layout.labels(),
        "layout": prob.layout.to_json(),
        "lrvb": None,
        "named": None,
        "timings": {"fit_seconds": t1 - t0},
    }
    if not fit.converged:
        write_json(out / "fit.json", payload, cfg)
        log.error("MFVB did not converge in %d sweeps; no corrected covariance written", fit.trace.sweeps)
        return EXIT_CONVERGENCE
    res = fit.lrvb(schur=bool(fc.get("schur", True)))
    t2 = time.perf_counter()
    diag, timing = _split_timings(res.diagnostics)
    mfvb = res.mfvb_cov()
    named = ad.named(prob)
    names = list(named)
    rows = [res.position(named[n]) for n in names]
    payload["lrvb"] = {"labels": res.labels, "sigma_hat": res.sigma_hat, "mfvb_cov": mfvb, "diagnostics": diag}
    payload["named"] = {
        "names": names,
        "mean": [float(fit.m[named[n]]) for n in names],
        "lrvb_cov": res.sigma_hat[np.ix_(rows, rows)],
        "mfvb_cov": mfvb[np.ix_(rows, rows)],
    }
    payload["timings"].update({"lrvb_seconds": t2 - t1, **timing})
    write_json(out / "fit.json", payload, cfg)
    return EXIT_OK


def run_mcmc(cfg: dict, out: Path) -> int:
    ad = _adapter(cfg)
    data, truth = _load_data(cfg, out)
    priors = ad.priors(cfg.get("priors", {}), data)
    mc = cfg.get("mcmc", {})
    t0 = time.perf_counter()
    chain = ad.mcmc(data, priors, mc, cfg["seed"], truth)
    seconds = time.perf_counter() - t0
    names = chain.names()
    doc = json.loads(chain.to_json())
    doc.pop("seed", None)
    doc.update({"model": cfg["model"], "names": names, "cov": chain.cov_matrix(names), "timings": {"mcmc_seconds": seconds}})
    write_json(out / "chain.json", doc, cfg)
    if mc.get("save_draws", False):
        write_csv(out / "chain_draws.csv", names, np.column_stack([chain.draws[n] for n in names]), cfg)
    return EXIT_OK


def build_comparison(fit_doc: dict, chain_doc: dict, gate_se: float = 3.0, min_ess: float = 500.0, gate_names=None):
    """Join a fit artifact with a chain summary.

    Returns ``(rows, cov_rows, summary)``; ``rows`` follow
    :data:`COMPARE_COLUMNS`.  Only functionals in ``gate_names`` (default:
    all shared ones) count towards the ESS and standard-error gates.
    Raises :class:`LayoutMismatch` when the two documents describe
    different models or share no functional.
    """
    if fit_doc.get("model") != chain_doc.get("model"):
        raise LayoutMismatch(f"fit is for {fit_doc.get('model')!r}, chain for {chain_doc.get('model')!r}")
    if not fit_doc.get("named"):
        raise LayoutMismatch("fit artifact carries no corrected covariance (unconverged fit?)")
    fn = fit_doc["named"]["names"]
    func = chain_doc["functionals"]
    names = [n for n in fn if n in func]
    if not names:
        raise LayoutMismatch("fit and chain share no tracked functional")
    lcov = np.asarray(fit_doc["named"]["lrvb_cov"])
    mcov = np.asarray(fit_doc["named"]["mfvb_cov"])
    fi = {n: i for i, n in enumerate(fn)}
    rows = []
    for n in names:
        i = fi[n]
        lsd = float(np.sqrt(max(lcov[i, i], 0.0)))
        msd = float(np.sqrt(max(mcov[i, i], 0.0)))
        f = func[n]
        se = f["sd_se"]
        zl = (lsd - f["sd"]) / se if se > 0 else float("inf")
        zm = (msd - f["sd"]) / se if se > 0 else float("inf")
        gated = gate_names is None or n in gate_names
        rows.append((n, msd, lsd, f["sd"], se, f["ess"], zl, zm, bool(abs(zl) <= gate_se) if gated else ""))
    cov_rows = []
    ci = {n: i for i, n in enumerate(chain_doc.get("names", []))}
    ccov = np.asarray(chain_doc["cov"]) if "cov" in chain_doc else None
    for a_i, a in enumerate(names):
        for b in names[a_i + 1:]:
            mc = float(ccov[ci[a], ci[b]]) if ccov is not None and a in ci and b in ci else float("nan")
            cov_rows.append((a, b, float(mcov[fi[a], fi[b]]), float(lcov[fi[a], fi[b]]), mc))
    rel_l = max(abs(r[2] - r[3]) / r[3] for r in rows)
    rel_m = max(abs(r[1] - r[3]) / r[3] for r in rows)
    gated = [r for r in rows if r[8] != ""]
    if not gated:
        raise LayoutMismatch(f"none of the gate names {gate_names} is shared by fit and chain")
    min_e = min(r[5] for r in gated)
    switched = bool(chain_doc.get("info", {}).get("label_switched", False))
    summary = {
        "n_rows": len(rows),
        "max_rel_err_lrvb": rel_l,
        "max_rel_err_mfvb": rel_m,
        "min_ess": min_e,
        "gate_se": gate_se,
        "min_ess_required": min_ess,
        "label_switched": switched,
        "ess_ok": bool(min_e >= min_ess),
        "gated": [r[0] for r in gated],
        "within_gate": bool(all(r[8] for r in gated)),
    }
    summary["passed"] = summary["ess_ok"] and summary["within_gate"] and not switched
    return rows, cov_rows, summary


def run_compare(cfg: dict, out: Path) -> int:
    cc = cfg.get("compare", {})
    fit_doc = read_json(Path(cfg["_fit"]) if cfg.get("_fit") else out / "fit.json")
    chain_doc = read_json(Path(cfg["_chain"]) if cfg.get("_chain") else out / "chain.json")
    rows, cov_rows, summary = build_comparison(
        fit_doc, chain_doc, float(cc.get("gate_se", 3.0)), float(cc.get("min_ess", 500)), cc.get("gate_names")
    )
    write_csv(out / "compare.csv", COMPARE_COLUMNS, rows, cfg)
    write_csv(out / "compare_cov.csv", COMPARE_COV_COLUMNS, cov_rows, cfg)
    write_json(out / "compare.json", {"model": cfg["model"], "summary": summary}, cfg)
    if summary["label_switched"]:
        raise LabelSwitchDetected("chain relabelled its components; comparison is not meaningful")
    if not summary["ess_ok"]:
        raise EssTooLow(f"minimum ESS {summary['min_ess']:.0f} below {summary['min_ess_required']:.0f}")
    if not summary["within_gate"]:
        raise GateFailure(f"LRVB sd outside {summary['gate_se']} MC standard errors for at least one functional")
    return EXIT_OK


def run_scaling(cfg: dict, out: Path) -> int:
    sc = dict(cfg.get("scaling", {}))
    gibbs_draws = int(sc.pop("gibbs_draws", 200))
    bands = sc.pop("bands", {"n": [0.8, 1.2], "p": [2.0, 6.0]})
    report = gmm_mod.gmm_scaling_run(seed=cfg["seed"], **sc)
    k = int(sc.get("k", 2))
    sep = float(sc.get("separation", 4.0))
    # Gibbs cost per grid cell, on the first replicate's data
    cells = sorted({(r[0], r[2]) for r in report.rows})
    rows = list(report.rows)
    for n, p in cells:
        truth = gmm_mod.overlapping_truth(k, p, sep, seed=cfg["seed"])
        data, rec = gmm_mod.gmm_simulate(n, truth, seed=cfg["seed"] + 1)
        t0 = time.perf_counter()
        samplers.gibbs_gmm(data, gmm_mod.GmmPriors(k=k, p=p), gibbs_draws + 1, 1, cfg["seed"], init=rec)
        rows.append((n, k, p, 0, "gibbs", time.perf_counter() - t0))
    write_csv(out / "scaling.csv", SCALING_COLUMNS, rows, cfg)
    payload = {
        "slope_n": report.slope_n,
        "slope_p": report.slope_p,
        "gibbs_draws": gibbs_draws,
        "bands": bands,
        "in_band": {
            "n": report.slope_n is not None and bands["n"][0] <= report.slope_n <= bands["n"][1],
            "p": report.slope_p is not None and bands["p"][0] <= report.slope_p <= bands["p"][1],
        },
        "timings": {"note": "all timing data lives in scaling.csv"},
    }
    write_json(out / "scaling.json", payload, cfg)
    return EXIT_OK


def certify_mvn(n_targets: int = 50, dims=(2, 3, 4, 5, 6), max_condition: float = 100.0, seed: int = 0) -> list[dict]:
    """Exactness report over random Gaussian targets."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_targets):
        d = int(dims[i % len(dims)])
        target = mvn_mod.random_target(d, rng, max_condition)
        res, fit = mvn_mod.mvn_lrvb(target)
        first = np.asarray(fit.m)[0::2]
        sig = res.sigma_hat[0::2, 0::2]
        out.append({
            "dim": d,
            "condition": float(np.linalg.cond(target.sigma)),
            "mean_err": float(np.max(np.abs(first - target.mu))),
            "cov_rel_err": float(np.max(np.abs(sig - target.sigma)) / np.max(np.abs(target.sigma))),
            "sweeps": fit.trace.sweeps,
        })
    return out


def run_certify(cfg: dict, out: Path) -> int:
    cc = cfg.get("certify", {})
    mean_tol = float(cc.get("mean_tol", 1e-9))
    cov_tol = float(cc.get("cov_tol", 1e-8))
    rows = certify_mvn(int(cc.get("n_targets", 50)), tuple(cc.get("dims", (2, 3, 4, 5, 6))),
                       float(cc.get("max_condition", 100.0)), cfg["seed"])
    passed = all(r["mean_err"] <= mean_tol and r["cov_rel_err"] <= cov_tol for r in rows)
    summary = {
        "passed": passed,
        "max_mean_err": max(r["mean_err"] for r in rows),
        "max_cov_rel_err": max(r["cov_rel_err"] for r in rows),
        "mean_tol": mean_tol,
        "cov_tol": cov_tol,
    }
    write_json(out / "certify.json", {"model": "mvn", "summary": summary, "targets": rows}, cfg)
    return EXIT_OK if passed else EXIT_GATE


# --------------------------------------------------------------------------
# dispatch


COMMANDS = {
    "simulate": (run_simulate, True),
    "fit": (run_fit, True),
    "mcmc": (run_mcmc, True),
    "compare": (run_compare, True),
    "scaling": (run_scaling, False),
    "certify-mvn": (run_certify, False),
}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (EssTooLow, LabelSwitchDetected, GateFailure)):
        return EXIT_GATE
    if isinstance(exc, (ConfigError, LayoutMismatch, DimensionMismatch, OSError, KeyError)):
        return EXIT_IO
    if isinstance(exc, (NoConvergence, LrvbError, ArithmeticError, ValueError)):
        return EXIT_CONVERGENCE
    raise exc


def _one(command: str, cfg: dict, out: str) -> int:
    fn, _ = COMMANDS[command]
    try:
        return fn(cfg, Path(out))
    except Exception as exc:  # mapped to an exit code; unknown errors re-raise
        code = exit_code_for(exc)
        log.error("%s: %s: %s", command, type(exc).__name__, exc)
        return code


def run(command: str, cfg: dict, out: Path, threads: int = 1) -> int:
    """Run ``command`` for every replicate; returns the worst exit code."""
    _, replicated = COMMANDS[command]
    reps = cfg.get("replicates", 1) if replicated else 1
    if reps == 1:
        return _one(command, cfg, str(out))
    jobs = []
    for r in range(reps):
        c = dict(cfg, seed=cfg["seed"] + r, replicate=r)
        jobs.append((command, c, str(out / f"rep{r:03d}")))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            codes = list(pool.map(_one, *zip(*jobs)))
    else:
        codes = [_one(*j) for j in jobs]
    return max(codes)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lrvb", description="Mean-field VB with linear-response covariance correction.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "certify-mvn", help="run configuration (JSON)")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker processes for replicates")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("fit", "mcmc"):
            p.add_argument("--data", default=None, help="dataset CSV (default: OUT/data.csv)")
        if name == "compare":
            p.add_argument("--fit", default=None, help="fit artifact (default: OUT/fit.json)")
            p.add_argument("--chain", default=None, help="chain summary (default: OUT/chain.json)")
        if name == "certify-mvn":
            p.add_argument("--dim", type=int, default=None, help="certify a single dimension")
            p.add_argument("--reps", type=int, default=None, help="number of random targets")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        log.error("--threads must be positive")
        return EXIT_IO
    try:
        if args.config is None:
            cfg = {"model": "mvn", "seed": args.seed if args.seed is not None else 0, "_base_dir": str(Path.cwd())}
        else:
            cfg = load_config(args.config, args.seed)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_IO
    if args.command == "certify-mvn":
        cc = cfg.setdefault("certify", {})
        if args.dim is not None:
            cc["dims"] = [args.dim]
        if args.reps is not None:
            cc["n_targets"] = args.reps
        if min(cc.get("dims", [2])) < 1 or cc.get("n_targets", 1) < 1:
            log.error("--dim and --reps must be positive")
            return EXIT_IO
    for key in ("data", "fit", "chain"):
        if getattr(args, key, None):
            cfg[f"_{key}"] = str(Path(getattr(args, key)).resolve())
    if args.command == "certify-mvn" and cfg["model"] != "mvn":
        log.error("certify-mvn needs model 'mvn'")
        return EXIT_IO
    return run(args.command, cfg, Path(args.out), args.threads)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
