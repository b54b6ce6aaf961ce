"""Command-line entry point: ``sgld-dp <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import dp_mechanisms as dpm
from .core_model import Dataset, DomainSpec, ModelParams, load_json, make_d1, make_d2, make_d3_d4
from .errors import ConfigError, InfeasibleTarget, NoAdmissibleNu, SgldDpError
from .monte_carlo import ChainConfig, empirical_set_mass, offset_for_position, run_chains
from .posterior_privacy import adp_report, posterior_adp
from .sgld_closed_form import (
    DEFAULT_MAX_N,
    certify_violation,
    coefficients,
    critical_epoch,
    figure1_rows,
    largest_feasible_instance,
    max_violated_epsilon,
    state_at_epoch,
    theorem1_bounds,
    theorem1_instantiate,
)
from .wasserstein import SmoothingConfig, gaussian_density, gaussian_w2, verify_bound

FIGURE1_COLUMNS = ["epoch", "step", "gap_metric", "d1_mean", "d1_var", "min_component_mean", "max_component_mean"]

FIGURE1_SPEC = DomainSpec(n=267909, c=900502, gamma1=0.1, x_l=0.9, x_h=1.8, gamma2=1.11)
FIGURE1_MODEL = ModelParams(alpha=0.5, beta=1.0)
# template used when instantiating a problem from (eps, eps', delta) alone
DEFAULT_TEMPLATE = DomainSpec(n=1, c=1.0, gamma1=0.01, x_l=0.9, x_h=1.8, gamma2=1.06)
DEFAULT_TEMPLATE_MODEL = ModelParams(alpha=0.5, beta=1.0)


@dataclass
class ExperimentConfig:
    spec: DomainSpec
    model: ModelParams
    epsilon: float = 0.85
    delta: float = 0.01
    epochs: int = 0
    seeds: list = field(default_factory=lambda: [0])
    output_dir: Optional[str] = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            budget = d.get("budget", {})
            return cls(
                spec=DomainSpec.from_dict(d["spec"]),
                model=ModelParams.from_dict(d["model"]),
                epsilon=float(budget.get("epsilon", 0.85)),
                delta=float(budget.get("delta", 0.01)),
                epochs=int(d.get("epochs", 0)),
                seeds=[int(s) for s in d.get("seeds", [0])],
                output_dir=d.get("output_dir"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid experiment config: {exc}") from exc

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        return cls.from_dict(load_json(path))

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "model": self.model.to_dict(),
            "budget": {"epsilon": self.epsilon, "delta": self.delta},
            "epochs": self.epochs,
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }


def figure1_config() -> ExperimentConfig:
    return ExperimentConfig(FIGURE1_SPEC, FIGURE1_MODEL, 0.85, 0.01, 0, [0], None)


def _out_dir(args, cfg: Optional[ExperimentConfig], required: bool) -> Optional[Path]:
    raw = args.out or (cfg.output_dir if cfg else None)
    if raw is None:
        if required:
            raise ConfigError("an output directory is required (--out or output_dir in the config)")
        return None
    p = Path(raw)
    if not p.is_dir():
        raise ConfigError(f"output directory {p} does not exist")
    return p


def _emit(args, name: str, payload: dict, out: Optional[Path] = None) -> None:
    text = json.dumps(payload, indent=2, default=_json_default)
    if out is not None:
        (out / f"{name}.json").write_text(text + "\n")
    if args.json or out is None:
        print(text)
    else:
        print(f"{name}: wrote {out / (name + '.json')}")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o)}")


def _finite(x: float):
    return x if math.isfinite(x) else None


def _config(args) -> ExperimentConfig:
    return ExperimentConfig.load(args.config) if args.config else figure1_config()


def cmd_figure1(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg, required=True)
    spec, model = cfg.spec, cfg.model
    post = _posterior_or_none(spec, model, cfg.delta)
    coeff = coefficients(spec, model)
    rep = critical_epoch(coeff, spec, model, cfg.delta)
    last = max(2 * rep.k_star, cfg.epochs, rep.k_star + 2)
    rows = figure1_rows(spec, model, range(last + 1), coeff)
    with open(out / "figure1.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=FIGURE1_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    peak = max(rows, key=lambda r: r["gap_metric"])
    summary = {
        "spec": spec.to_dict(),
        "model": model.to_dict(),
        "posterior": post,
        "posterior_within_budget": None if post is None else post["epsilon"] <= cfg.epsilon,
        "critical_epoch": rep.to_dict(),
        "epochs": last + 1,
        "peak_epoch": peak["epoch"],
        "peak_gap_metric": peak["gap_metric"],
        "csv": str(out / "figure1.csv"),
    }
    _emit(args, "figure1_summary", summary, out)
    return 0


def _posterior_or_none(spec, model, delta, epsilon_ref=1.0) -> Optional[dict]:
    # small specs fall below every admissible order; the curve is still useful
    try:
        return adp_report(*posterior_adp(spec, model, delta, epsilon_ref=epsilon_ref))
    except NoAdmissibleNu:
        return None


def cmd_posterior(args) -> int:
    cfg = _config(args)
    budget, bound = posterior_adp(cfg.spec, cfg.model, args.delta if args.delta is not None else cfg.delta)
    _emit(args, "posterior_privacy", adp_report(budget, bound), _out_dir(args, cfg, False))
    return 0


def _template(args) -> tuple[DomainSpec, ModelParams]:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
        return cfg.spec, cfg.model
    return DEFAULT_TEMPLATE, DEFAULT_TEMPLATE_MODEL


def _certificate_payload(spec, model, rep, eps_tested, delta, instantiation, target_eps) -> dict:
    coeff = coefficients(spec, model)
    st = state_at_epoch(rep.k_star + 1, coeff, spec, model)
    cert = certify_violation(rep, st, eps_tested, delta)
    post = _posterior_or_none(spec, model, delta, target_eps)
    payload = cert.to_dict()
    payload.update(
        instantiation=instantiation,
        spec=spec.to_dict(),
        model=model.to_dict(),
        k_dot=rep.k_dot,
        posterior_epsilon=None if post is None else post["epsilon"],
        posterior_within_target=None if post is None else post["epsilon"] <= target_eps,
        max_violated_epsilon_exact=_finite(max_violated_epsilon(st, delta)),
        max_violated_epsilon_chernoff=_finite(max_violated_epsilon(st, delta, use_chernoff=True)),
    )
    return payload


def cmd_certify(args) -> int:
    eps, eps_p, delta = args.epsilon, args.epsilon_prime, args.delta
    if not eps_p > eps:
        raise ConfigError("epsilon-prime must exceed epsilon")
    if args.use_config_spec:
        cfg = ExperimentConfig.load(args.config) if args.config else figure1_config()
        spec, model = cfg.spec, cfg.model
        rep = critical_epoch(coefficients(spec, model), spec, model, delta)
        how = "config"
    else:
        base, model = _template(args)
        try:
            spec, rep = theorem1_instantiate(eps, eps_p, delta, base, model, args.max_n)
            how = "theorem1"
        except InfeasibleTarget:
            if args.strict:
                raise
            spec, rep = largest_feasible_instance(eps, delta, base, model, args.max_n)
            how = "size_cap_fallback"
    payload = _certificate_payload(spec, model, rep, eps_p, delta, how, eps)
    _emit(args, "certificate", payload, _out_dir(args, None, False))
    return 0


def cmd_theorem1(args) -> int:
    base, model = _template(args)
    b = theorem1_bounds(args.epsilon, args.epsilon_prime, args.delta, base, model)
    d = b.to_dict()
    d = {k: (_finite(v) if isinstance(v, float) else [_finite(t) for t in v] if isinstance(v, tuple) else v)
         for k, v in d.items()}
    d["max_n"] = args.max_n
    d["feasible"] = b.n_p <= args.max_n
    if d["feasible"]:
        spec, rep = theorem1_instantiate(args.epsilon, args.epsilon_prime, args.delta, base, model, args.max_n)
        d["spec"], d["critical_epoch"] = spec.to_dict(), rep.to_dict()
    _emit(args, "theorem1_params", d, _out_dir(args, None, False))
    return 0


def _seed_list(args) -> list:
    if args.seeds:
        return [int(s) for s in args.seeds.split(",") if s.strip()]
    return [args.seed + i for i in range(args.runs)]


def cmd_pts(args) -> int:
    params = dpm.PtsParams.from_dict(load_json(args.params))
    if args.generate_d3:
        d3, _ = make_d3_d4(args.generate_d3, dpm.CLAIM3_RHO3, params.x_h)
        d3.to_csv(args.data)
    data = Dataset.from_csv(args.data)
    seeds = _seed_list(args)
    sampled = 0
    for s in seeds:
        rng = np.random.default_rng(s)
        if args.sgld_steps:
            value, tr = dpm.propose_test_sample_sgld(data, params, args.sgld_steps, rng)
        else:
            value, tr = dpm.propose_test_sample(data, params, rng)
        sampled += tr.outcome == dpm.Outcome.SAMPLED
        line = tr.to_dict()
        line.update(seed=s, sample=value)
        print(json.dumps(line, default=_json_default))
    print(json.dumps({"runs": len(seeds), "sampled_rate": sampled / max(len(seeds), 1)}), file=sys.stderr)
    return 0


def _spec_and_model(args) -> tuple[DomainSpec, ModelParams]:
    if args.spec:
        raw = load_json(args.spec)
        if "spec" in raw:
            return DomainSpec.from_dict(raw["spec"]), ModelParams.from_dict(raw["model"])
        spec = DomainSpec.from_dict(raw)
        model = ExperimentConfig.load(args.config).model if args.config else ModelParams(args.alpha, args.beta)
        return spec, model
    cfg = _config(args)
    return cfg.spec, cfg.model


def cmd_mc_verify(args) -> int:
    spec, model = _spec_and_model(args)
    if spec.n > 50:
        raise ConfigError("mc-verify is meant for desk-scale n <= 50")
    coeff = coefficients(spec, model)
    d1, d2 = make_d1(spec), make_d2(spec)
    rows = []
    for k in range(1, args.epochs + 1):
        st = state_at_epoch(k, coeff, spec, model)
        targets = [("d1", 0, d1, st.d1.mean, st.d1.variance)]
        for r in range(1, spec.n + 1):
            targets.append((f"d2_r{r}", offset_for_position(spec.n, r), d2, st.d2_means[r - 1], st.d2_vars[r - 1]))
        for g, (label, off, data, mu, var) in enumerate(targets):
            cfg = ChainConfig(eta=coeff.eta, steps=k * spec.n, order=off, seed=args.seed)
            dist = run_chains(data, model, cfg, args.chains, group=1000 * k + g)
            m = float(np.mean(dist.samples))
            v = float(np.var(dist.samples, ddof=1))
            n = dist.count
            rows.append({
                "epoch": k,
                "target": label,
                "closed_mean": mu,
                "empirical_mean": m,
                "mean_delta_se": (m - mu) / math.sqrt(var / n),
                "closed_var": var,
                "empirical_var": v,
                "var_delta_se": (v - var) / (var * math.sqrt(2 / (n - 1))),
            })
    worst = max(max(abs(r["mean_delta_se"]), abs(r["var_delta_se"])) for r in rows)
    payload = {"spec": spec.to_dict(), "model": model.to_dict(), "chains": args.chains, "seed": args.seed,
               "rows": rows, "max_abs_delta_se": worst, "within_4se": worst <= 4}
    _emit(args, "mc_verify", payload, _out_dir(args, None, False))
    return 0


def cmd_wasserstein(args) -> int:
    if args.case != "gaussians":
        raise ConfigError(f"unknown case {args.case!r}")
    mu1 = [0.0] * args.dim
    mu2 = [args.mu2] + [0.0] * (args.dim - 1)
    spacing = args.spacing or {1: 1e-3, 2: 0.02, 3: 0.1}[args.dim]
    half = args.half_width or {1: 8.0, 2: 6.0, 3: 5.0}[args.dim]
    p = gaussian_density(mu1, 1.0, -half, half, spacing)
    q = gaussian_density(mu2, 1.0, -half, half, spacing)
    rep = verify_bound(p, q, SmoothingConfig(args.radius, args.budget), seed=args.seed)
    payload = rep.to_dict()
    payload.update(dim=args.dim, w2=gaussian_w2(0.0, 1.0, args.mu2, 1.0), radius=args.radius, budget=args.budget)
    _emit(args, "wasserstein_report", payload, _out_dir(args, None, False))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="ExperimentConfig JSON file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="output directory")
    common.add_argument("--json", action="store_true", help="print JSON to stdout")

    ap = argparse.ArgumentParser(prog="sgld-dp", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("figure1", parents=[common], help="gap-metric curve per epoch")
    p.set_defaults(func=cmd_figure1)

    p = sub.add_parser("posterior-privacy", parents=[common], help="posterior (eps, delta) report")
    p.add_argument("--delta", type=float)
    p.set_defaults(func=cmd_posterior)

    for name, fn in (("certify", cmd_certify), ("theorem1-params", cmd_theorem1)):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--epsilon", type=float, default=0.1)
        p.add_argument("--epsilon-prime", type=float, default=1.0)
        p.add_argument("--delta", type=float, default=0.1)
        p.add_argument("--max-n", type=int, default=DEFAULT_MAX_N)
        if name == "certify":
            p.add_argument("--strict", action="store_true", help="fail instead of falling back to the size cap")
            p.add_argument("--use-config-spec", action="store_true")
        p.set_defaults(func=fn)

    p = sub.add_parser("pts-run", parents=[common], help="Propose-Test-Sample runs")
    p.add_argument("--data", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--sgld-steps", type=int)
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--generate-d3", type=int, metavar="N1", help="write a D3 dataset of size N1 to --data first")
    p.set_defaults(func=cmd_pts)

    p = sub.add_parser("mc-verify", parents=[common], help="Monte Carlo vs closed form")
    p.add_argument("--spec")
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--chains", type=int, default=10_000)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=4.0)
    p.set_defaults(func=cmd_mc_verify)

    p = sub.add_parser("wasserstein-demo", parents=[common], help="smoothed-density bound check")
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--case", default="gaussians")
    p.add_argument("--mu2", type=float, default=0.01)
    p.add_argument("--radius", type=float, default=0.5)
    p.add_argument("--budget", type=float, default=0.1)
    p.add_argument("--spacing", type=float)
    p.add_argument("--half-width", type=float)
    p.set_defaults(func=cmd_wasserstein)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SgldDpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
