"""Command-line driver.

Verbs: ``fit`` (factor models and baselines), ``id-select`` (Bayesian ID),
``evaluate`` (score exported factors against data) and ``export-plot-data``
(convergence series as CSV).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .baselines import AlsConfig, NmfConfig, als_fit, nmf_mu_fit
from .core import GibbsConfig, MaskedMatrix, masked_mse_of
from .dataio import load_array, load_matrix, load_vector, save_array
from .errors import BmfError, ConfigError
from .gibbs_discrete import (
    OggwHyper,
    OrdinalSpec,
    PoissonHyper,
    fit_oggw,
    fit_paa,
    fit_paaa,
    oggw_expected_category,
)
from .gibbs_nmf import NMF_MODELS, NmfHyper, fit_nmf
from .gibbs_rmf import RmfHyper, fit_rmf
from .interpolative import ID_VARIANTS, IdHyper, fit_id, importance_from_scores, post_process

__all__ = ["RunConfig", "run", "main", "parse_config_file", "MODELS"]

log = logging.getLogger(__name__)

RMF_MODELS = ("GGG", "GGGM", "GGGA", "GGGW", "GVG")
DISCRETE_MODELS = ("PAA", "PAAA", "OGGW")
BASELINES = ("ALS", "MU")
FACTOR_MODELS = BASELINES + RMF_MODELS + NMF_MODELS + DISCRETE_MODELS
MODELS = FACTOR_MODELS + ID_VARIANTS
ARD_OF = {"GBT": "GBT-ARD", "GBTN": "GBTN-ARD", "GGG": "GGGA", "GEE": "GEEA"}
ARD_MODELS = ("GBT-ARD", "GBTN-ARD", "GGGA", "GEEA")
NON_SCALAR = {"niw", "importance", "lambda_m_w", "lambda_n_z", "K", "max_iters"}
RUN_KEYS = {"model", "k", "ard", "iters", "burn_in", "thin", "seed", "input", "format", "out",
            "importance", "chains"}


@dataclass
class RunConfig:
    """Everything needed to reproduce a run."""

    verb: str = "fit"
    model: str = "GGG"
    K: Optional[int] = None
    ard: bool = False
    hyper: dict[str, Any] = field(default_factory=dict)
    iters: int = 500
    burn_in: int = 100
    thin: int = 1
    seed: int = 0
    input: Optional[str] = None
    format: str = "dense"
    out: str = "out"
    importance: Optional[str] = None
    chains: int = 1

    def resolved_model(self) -> str:
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {', '.join(MODELS)}")
        if not self.ard or self.model in ARD_MODELS:
            return self.model
        if self.model not in ARD_OF:
            raise ConfigError(f"--ard is not available for {self.model}")
        return ARD_OF[self.model]

    def validate(self) -> str:
        model = self.resolved_model()
        if self.verb == "fit" and model in ID_VARIANTS:
            raise ConfigError(f"{model} is an ID model; use the id-select verb")
        if self.verb == "id-select" and model not in ID_VARIANTS:
            raise ConfigError(f"{model} is not an ID model; use the fit verb")
        if self.K is None and model not in ("GBT-ARD", "GBTN-ARD"):
            raise ConfigError(f"{model} needs --k")
        if self.K is not None and self.K < 1:
            raise ConfigError("K must be at least 1")
        if self.iters < 1:
            raise ConfigError("iters must be at least 1")
        if self.chains < 1:
            raise ConfigError("chains must be at least 1")
        if self.format not in ("dense", "triplets"):
            raise ConfigError(f"unknown format {self.format!r}")
        if self.input is None or not Path(self.input).exists():
            raise ConfigError(f"input file not found: {self.input}")
        if self.importance is not None:
            if model != "IID":
                raise ConfigError("--importance applies to the IID model only")
            if not Path(self.importance).exists():
                raise ConfigError(f"importance file not found: {self.importance}")
        return model

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


# -- hyperparameters --------------------------------------------------------------------

def _hyper_class(model: str):
    if model == "ALS":
        return AlsConfig
    if model == "MU":
        return NmfConfig
    if model in RMF_MODELS:
        return RmfHyper
    if model in NMF_MODELS:
        return NmfHyper
    if model in ("PAA", "PAAA"):
        return PoissonHyper
    if model == "OGGW":
        return OggwHyper
    return IdHyper


def _hyper_defaults(model: str) -> dict[str, Any]:
    out = {}
    for f in dataclasses.fields(_hyper_class(model)):
        if f.name in NON_SCALAR:
            continue
        default = f.default
        if default is dataclasses.MISSING or not (default is None or isinstance(default, (int, float, str))):
            continue
        out[f.name] = default
    if model == "OGGW":
        out["categories"] = None
    return out


def _coerce(key: str, raw: Any, default: Any) -> Any:
    if not isinstance(raw, str):
        return raw
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int) and not isinstance(default, bool):
            return int(raw)
        if isinstance(default, str):
            return raw
        return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def resolve_hyper(model: str, overrides: dict[str, Any]) -> dict[str, Any]:
    """Defaults for ``model`` with ``overrides`` applied; unknown keys are a config error."""
    vals = _hyper_defaults(model)
    unknown = sorted(set(overrides) - set(vals))
    if unknown:
        raise ConfigError(f"unknown hyperparameter(s) {unknown} for {model}; "
                          f"valid keys: {', '.join(sorted(vals))}")
    for k, v in overrides.items():
        vals[k] = _coerce(k, v, vals[k])
    if model == "OGGW" and vals["categories"] is not None:
        vals["categories"] = int(vals["categories"])
    return vals


# -- running ------------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _write_trace(path: Path, losses) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iteration,mse\n")
        for t, v in enumerate(losses, start=1):
            fh.write(f"{t},{_fmt(v)}\n")


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def _fit_factor_model(model: str, A: MaskedMatrix, cfg: RunConfig, hyper: dict, seed: int):
    """Returns (losses, factors dict, reconstruction, extra manifest entries)."""
    K = cfg.K
    gcfg = GibbsConfig(cfg.iters, cfg.burn_in, cfg.thin, seed)
    if model in BASELINES:
        rng = np.random.default_rng(seed)
        if model == "ALS":
            state, hist = als_fit(A, AlsConfig(K=K, max_iters=cfg.iters, **hyper), rng)
        else:
            state, hist = nmf_mu_fit(A, NmfConfig(K=K, max_iters=cfg.iters, **hyper), rng)
        losses = np.asarray(hist[1:]) / A.n_observed
        return losses, {"W": state.W, "Z": state.Z}, state.W @ state.Z, {}
    if model in RMF_MODELS:
        tr = fit_rmf(model, A, RmfHyper(**hyper), gcfg, K=K)
    elif model in NMF_MODELS:
        tr = fit_nmf(model, A, NmfHyper(**hyper), gcfg, K=K)
    elif model in ("PAA", "PAAA"):
        fn = fit_paa if model == "PAA" else fit_paaa
        tr = fn(A, PoissonHyper(**hyper), gcfg, K=K)
    else:
        h = dict(hyper)
        ncat = h.pop("categories")
        if ncat is None:
            ncat = int(round(A.values[A.mask].max()))
        spec = OrdinalSpec(ncat)
        tr = fit_oggw(A, spec, OggwHyper(**h), gcfg, K=K)
        W, Z = tr.posterior_mean("W"), tr.posterior_mean("Z")
        tau = float(tr.posterior_mean("tau"))
        recon = oggw_expected_category(W, Z, tau, spec)
        return tr.losses, {"W": W, "Z": Z}, recon, {"tau": tau, "categories": ncat}
    factors = {"W": tr.posterior_mean("W"), "Z": tr.posterior_mean("Z")}
    if tr.samples and tr.samples[0].get("F") is not None:
        factors["F"] = tr.posterior_mean("F")
    recon = factors["W"] @ factors.get("F", np.eye(factors["W"].shape[1])) @ factors["Z"]
    return tr.losses, factors, recon, {}


def _run_one(cfg: RunConfig, model: str, seed: int, outdir: Path) -> dict:
    outdir.mkdir(parents=True, exist_ok=True)
    A = load_matrix(cfg.input, cfg.format)
    hyper = resolve_hyper(model, cfg.hyper)
    manifest: dict[str, Any] = {
        "config": {**cfg.as_dict(), "seed": seed, "out": None, "chains": 1},
        "model": model,
        "seed": seed,
        "shape": list(A.shape),
        "n_observed": A.n_observed,
    }
    if model in ID_VARIANTS:
        h = dict(hyper)
        if cfg.importance is not None:
            raw = load_vector(cfg.importance)
            if raw.size != A.N:
                raise ConfigError(f"importance has {raw.size} entries, data has {A.N} columns")
            h["importance"] = importance_from_scores(raw)
        tr = fit_id(model, A, cfg.K, IdHyper(**h), GibbsConfig(cfg.iters, cfg.burn_in, cfg.thin, seed))
        C, W = post_process(tr.state)
        J = tr.state.J
        save_array(outdir / "C.txt", C)
        save_array(outdir / "W.txt", W)
        (outdir / "indices.json").write_text(json.dumps(J) + "\n", encoding="utf-8")
        losses = tr.losses
        recon = C @ W
        manifest["J_size"] = len(J)
        if h.get("importance") is not None:
            manifest["importance"] = _plain(h["importance"])
    else:
        losses, factors, recon, extra = _fit_factor_model(model, A, cfg, hyper, seed)
        for name, X in factors.items():
            save_array(outdir / f"{name}.txt", X)
        manifest.update(extra)
    _write_trace(outdir / "trace.csv", losses)
    manifest["hyper"] = {k: _plain(v) for k, v in hyper.items()}
    if model in NMF_MODELS and hyper.get("beta_lambda") is None:
        manifest["hyper"]["beta_lambda"] = NmfHyper().resolved_beta_lambda(A, cfg.K)
    manifest["final_mse"] = masked_mse_of(A, recon)
    _dump_json(outdir / "manifest.json", manifest)
    return manifest


def _run_chain(args) -> dict:
    cfg, model, seed, outdir = args
    return _run_one(cfg, model, seed, Path(outdir))


def run(cfg: RunConfig) -> int:
    """Execute a fit or ID run and write its artifacts; returns the exit status."""
    model = cfg.validate()
    out = Path(cfg.out)
    if cfg.chains == 1:
        _run_one(cfg, model, cfg.seed, out)
        return 0
    jobs = [(cfg, model, cfg.seed + i, str(out / f"chain_{i}")) for i in range(cfg.chains)]
    with ProcessPoolExecutor(max_workers=cfg.chains) as pool:
        list(pool.map(_run_chain, jobs))
    return 0


def _run_dirs(out: Path) -> list[Path]:
    if (out / "manifest.json").exists():
        return [out]
    dirs = sorted(p for p in out.glob("chain_*") if (p / "manifest.json").exists())
    if not dirs:
        raise ConfigError(f"no run found under {out}")
    return dirs


def evaluate(input_path: str, fmt: str, out: str) -> dict:
    """Masked MSE and RMSE of exported factors against ``input_path``."""
    A = load_matrix(input_path, fmt)
    results = {}
    for d in _run_dirs(Path(out)):
        man = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
        model = man["model"]
        if model in ID_VARIANTS:
            recon = load_array(d / "C.txt") @ load_array(d / "W.txt")
        elif model == "OGGW":
            recon = oggw_expected_category(load_array(d / "W.txt"), load_array(d / "Z.txt"),
                                           man["tau"], OrdinalSpec(man["categories"]))
        else:
            W = load_array(d / "W.txt")
            Z = load_array(d / "Z.txt")
            F = load_array(d / "F.txt") if (d / "F.txt").exists() else np.eye(W.shape[1])
            recon = W @ F @ Z
        mse = masked_mse_of(A, recon)
        res = {"mse": mse, "rmse": float(np.sqrt(mse))}
        _dump_json(d / "evaluation.json", res)
        results[d.name if d != Path(out) else "run"] = res
    return results


def export_plot_data(out: str) -> list[Path]:
    """Write ``plot_data.csv`` per run: iteration, mse, burn-in flag and running post-burn-in mean."""
    written = []
    for d in _run_dirs(Path(out)):
        man = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
        burn = int(man["config"]["burn_in"])
        data = np.loadtxt(d / "trace.csv", delimiter=",", skiprows=1, ndmin=2)
        path = d / "plot_data.csv"
        total, count = 0.0, 0
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("iteration,mse,post_burn_in,running_mean\n")
            for it, mse in data:
                post = int(it) > burn
                if post:
                    total += mse
                    count += 1
                mean = _fmt(total / count) if count else ""
                fh.write(f"{int(it)},{_fmt(mse)},{int(post)},{mean}\n")
        written.append(path)
    return written


# -- argument handling ------------------------------------------------------------------

def parse_config_file(path) -> dict[str, str]:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bmfkit", description="Bayesian matrix factorization toolkit")
    p.add_argument("verb", choices=["fit", "id-select", "evaluate", "export-plot-data"])
    p.add_argument("--config", help="flat key=value file; flags override it")
    p.add_argument("--model")
    p.add_argument("--k", type=int)
    p.add_argument("--ard", action="store_true", default=None)
    p.add_argument("--iters", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--input")
    p.add_argument("--format", choices=["triplets", "dense"])
    p.add_argument("--out")
    p.add_argument("--set", dest="sets", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--importance", help="IID raw importance scores, one per column")
    p.add_argument("--chains", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _to_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    if str(v).lower() in ("1", "true", "yes"):
        return True
    if str(v).lower() in ("0", "false", "no", ""):
        return False
    raise ConfigError(f"bad boolean {v!r}")


def build_config(ns: argparse.Namespace) -> RunConfig:
    file_vals = parse_config_file(ns.config) if ns.config else {}
    hyper = {k: v for k, v in file_vals.items() if k not in RUN_KEYS}
    run_vals = {k: v for k, v in file_vals.items() if k in RUN_KEYS}
    for item in ns.sets:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        hyper[k.strip()] = v.strip()
    flags = {"model": ns.model, "k": ns.k, "ard": ns.ard, "iters": ns.iters, "burn_in": ns.burn_in,
             "thin": ns.thin, "seed": ns.seed, "input": ns.input, "format": ns.format, "out": ns.out,
             "importance": ns.importance, "chains": ns.chains}
    for k, v in flags.items():
        if v is not None:
            run_vals[k] = v
    try:
        return RunConfig(
            verb=ns.verb,
            model=str(run_vals.get("model", "GGG")),
            K=None if run_vals.get("k") in (None, "") else int(run_vals["k"]),
            ard=_to_bool(run_vals.get("ard", False)),
            hyper=hyper,
            iters=int(run_vals.get("iters", 500)),
            burn_in=int(run_vals.get("burn_in", 100)),
            thin=int(run_vals.get("thin", 1)),
            seed=int(run_vals.get("seed", 0)),
            input=run_vals.get("input"),
            format=str(run_vals.get("format", "dense")),
            out=str(run_vals.get("out", "out")),
            importance=run_vals.get("importance"),
            chains=int(run_vals.get("chains", 1)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def main(argv=None) -> int:
    ns = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(ns)
        if ns.verb in ("fit", "id-select"):
            return run(cfg)
        if ns.verb == "evaluate":
            if cfg.input is None:
                raise ConfigError("evaluate needs --input")
            print(json.dumps(evaluate(cfg.input, cfg.format, cfg.out), sort_keys=True))
            return 0
        for path in export_plot_data(cfg.out):
            print(path)
        return 0
    except BmfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
