"""Subcommand bodies.

Each returns ``(results, diagnostics)``, or ``(results, diagnostics,
timings)`` when it has per-step wall-clock times that must stay out of
the reproducible payload.
"""

from __future__ import annotations

import warnings
from itertools import combinations

import numpy as np

from .conv import ConvNetworkSpec, sample_prior_conv_mixture, sample_prior_conv_weightspace
from .dataio import read_dataset
from .errors import ConfigError
from .evidence import evidence_finite_beta, evidence_zero_temperature, gp_log_evidence
from .fc import FcNetworkSpec, sample_prior_mixture, sample_prior_weightspace, vec_outputs
from .ldp import concentration_probe, minimize_rate, saddle_scalar_solve
from .mcstats import compare_moments
from .oracles import weightspace_posterior
from .posterior import predictive_mixture
from .rng import RngStream


def _stream(cfg) -> RngStream:
    return RngStream(cfg.run.seed)


def _train(cfg, spec, require_labels=True):
    path = cfg.resolve(cfg.data.train)
    if path is None:
        raise ConfigError("[data] train is required for this command")
    data = read_dataset(path, spec, require_labels=require_labels)
    return data


def _beta(cfg) -> float:
    if cfg.data.beta is None:
        raise ConfigError("[data] beta is required for this command")
    return cfg.data.beta


def fourth_moment_pairs(k: int) -> list[tuple[int, int]]:
    """E[s_i^2 s_j^2] pairs checked by sample-prior: the diagonal and adjacent outputs."""
    pairs = [(i, i) for i in range(min(k, 3))]
    pairs += [(i, i + 1) for i in range(min(k - 1, 2))]
    return pairs


def sample_prior(cfg, oracle=False):
    spec = cfg.spec()
    spec.check_mixture()
    data = _train(cfg, spec, require_labels=False)
    n = cfg.sampler.n_samples
    stream = _stream(cfg)
    if isinstance(spec, ConvNetworkSpec):
        mix = sample_prior_conv_mixture(spec, data.x, n, stream.child(0))
        ws = sample_prior_conv_weightspace(spec, data.x, n, stream.child(1))
    else:
        mix = vec_outputs(sample_prior_mixture(spec, data.x, n, stream.child(0)))
        ws = vec_outputs(sample_prior_weightspace(spec, data.x, n, stream.child(1)))
    mix = mix.reshape(n, -1)
    ws = ws.reshape(n, -1)
    cmp = compare_moments(mix, ws, fourth=fourth_moment_pairs(mix.shape[1]))
    results = {
        "n_samples": n,
        "moments": cmp.names,
        "mixture": cmp.first,
        "weightspace": cmp.second,
        "z_scores": cmp.z,
        "max_abs_z": cmp.max_abs_z,
        "equivalent": cmp.passed(4.0),
    }
    return results, {"z_threshold": 4.0, "n_moments": len(cmp.names)}


def predict(cfg, oracle=False):
    spec = cfg.spec()
    spec.check_mixture()
    beta = _beta(cfg)
    train = _train(cfg, spec)
    test_path = cfg.resolve(cfg.data.test)
    if test_path is None:
        raise ConfigError("[data] test is required for predict")
    test = read_dataset(test_path, spec, require_labels=False)
    stream = _stream(cfg)
    s = cfg.sampler
    rows, oracle_rows = [], []
    for mu in range(test.p):
        x0 = test.x[mu: mu + 1] if test.x.ndim == 3 else test.x[:, mu: mu + 1]
        # one stream for every test input: all predictions share the mixing draws
        if s.method == "is":
            pred = predictive_mixture(spec, x0, train.x, train.y, beta, "is", s.n_samples, stream.child(0),
                                      check_design_rank=cfg.data.check_design)
        else:
            pred = predictive_mixture(spec, x0, train.x, train.y, beta, "mh", s.n_steps, stream.child(0),
                                      check_design_rank=cfg.data.check_design,
                                      step_size=s.step_size, n_chains=s.n_chains)
        rows.append({"mean": pred.mean, "cov": pred.cov, "mean_se": pred.mean_se, "cov_se": pred.cov_se})
        if oracle:
            ref = weightspace_posterior(spec, x0, train.x, train.y, beta, s.oracle_samples, stream.child(1))
            z_mean = (pred.mean - ref.mean) / np.sqrt(pred.mean_se**2 + ref.mean_se**2)
            z_cov = (pred.cov - ref.cov) / np.sqrt(pred.cov_se**2 + ref.cov_se**2)
            oracle_rows.append({
                "mean": ref.mean, "cov": ref.cov, "mean_se": ref.mean_se, "cov_se": ref.cov_se,
                "z_mean": z_mean, "z_cov": z_cov, "ess": ref.ess,
            })
    mixture = pred.mixture
    results = {"predictions": rows}
    diagnostics = {
        "sampler": mixture.method,
        "draws": len(mixture),
        "ess": mixture.ess,
        "acceptance": mixture.acceptance,
        "n_chains": mixture.n_chains,
        "log_normalizer": mixture.log_normalizer,
        "log_normalizer_se": mixture.log_normalizer_se,
    }
    if oracle:
        worst = max(float(max(np.max(np.abs(r["z_mean"])), np.max(np.abs(r["z_cov"])))) for r in oracle_rows)
        results["oracle"] = {"predictions": oracle_rows, "max_abs_z": worst, "z_threshold": 4.0}
    return results, diagnostics


def evidence(cfg, oracle=False):
    spec = cfg.spec()
    if not isinstance(spec, FcNetworkSpec):
        raise ConfigError("evidence is implemented for fully connected networks")
    train = _train(cfg, spec)
    stream = _stream(cfg)
    ev = cfg.evidence
    entries = {}
    caught = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if cfg.data.beta is not None:
            for k, method in enumerate(ev.methods):
                r = evidence_finite_beta(spec, train.x, train.y, cfg.data.beta, method, ev.n_samples,
                                         stream.child(k))
                entries[f"finite_beta/{method}"] = r
        for k, method in enumerate(ev.zero_temperature):
            r = evidence_zero_temperature(spec, train.x, train.y, method, ev.n_samples, stream.child(100 + k))
            entries[f"zero_temperature/{method}"] = r
    if not entries:
        raise ConfigError("nothing to compute: set [data] beta or [evidence] zero_temperature")
    results = {
        name: {"log_value": r.log_value, "error_estimate": r.error_estimate, "converged": r.converged}
        for name, r in entries.items()
    }
    gaps = {}
    for a, b in combinations(sorted(entries), 2):
        if a.split("/")[0] == b.split("/")[0]:
            gaps[f"{a} vs {b}"] = abs(entries[a].log_value - entries[b].log_value)
    out = {"log_evidence": results, "log_gaps": gaps}
    if cfg.data.beta is not None:
        out["gaussian_process_log_evidence"] = gp_log_evidence(train.x, train.y, spec, cfg.data.beta)
    diagnostics = {"warnings": sorted({f"{w.category.__name__}: {w.message}" for w in caught})}
    return out, diagnostics


def _random_spd_stack(gen, depth, d):
    a = gen.normal(size=(depth, d, d))
    return a @ np.swapaxes(a, -1, -2) / d + 0.1 * np.eye(d)


def ldp(cfg, oracle=False):
    spec = cfg.spec()
    if not isinstance(spec, FcNetworkSpec):
        raise ConfigError("ldp is implemented for fully connected networks")
    stream = _stream(cfg)
    lcfg = cfg.ldp
    results, diagnostics = {}, {}
    if "lazy" in lcfg.objectives:
        gen = stream.child(0).generator()
        starts = []
        for _ in range(lcfg.n_starts):
            p = minimize_rate("lazy", spec, init=_random_spd_stack(gen, spec.depth, spec.d))
            dist = float(np.linalg.norm(p.qs - np.eye(spec.d)))
            starts.append({"distance_to_identity": dist, "gradient_norm": p.gradient_norm,
                           "iterations": p.iterations, "converged": p.converged})
        results["lazy"] = {"starts": starts,
                           "max_distance_to_identity": max(s["distance_to_identity"] for s in starts)}
    if "meanfield" in lcfg.objectives:
        beta = _beta(cfg)
        train = _train(cfg, spec)
        p = minimize_rate("meanfield", spec, train.x, train.y, beta)
        results["meanfield"] = {"minimizer": p.qs, "rate": p.value, "gradient_norm": p.gradient_norm,
                                "iterations": p.iterations, "converged": p.converged}
    if lcfg.alpha is not None:
        train = _train(cfg, spec)
        sad = saddle_scalar_solve(spec, train.x, train.y, lcfg.alpha, cfg.data.beta)
        results["saddle"] = {"u0": sad.u0, "residual": sad.residual, "beta": sad.beta,
                             "sensitivity": sad.sensitivity, **sad.data_terms}
    table = concentration_probe(spec, "lazy", tuple(lcfg.widths), stream.child(1), lcfg.n_draws)
    results["concentration"] = {"widths": table.widths, "mean_distance": table.distances,
                                "std_errors": table.std_errors, "loglog_slope": table.slope}
    diagnostics["gtol"] = 1e-8
    return results, diagnostics


def verify(cfg, oracle=False):
    from .verify import run_criteria

    outcomes = run_criteria(cfg.verify.criteria, seed=cfg.run.seed)
    results = {"criteria": [o.payload() for o in outcomes],
               "all_passed": all(o.passed for o in outcomes)}
    timings = {str(o.number): o.runtime for o in outcomes}
    return results, {"runtime_limits": {str(o.number): o.limit for o in outcomes if o.limit}}, timings


COMMANDS = {
    "sample-prior": sample_prior,
    "predict": predict,
    "evidence": evidence,
    "ldp": ldp,
    "verify": verify,
}
