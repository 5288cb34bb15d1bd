"""Experiment orchestration: seeded runs, metrics, grid search, CSV/JSON out.

A run executes T rounds of one policy variant against one environment and
logs one row per round. Aggregation across seeds reports the mean and
standard deviation of the average per-round regret plus a 95% confidence
band for the cumulative-regret curve. Timing columns capture the wall time
of the reinitialization step separately from the whole round so its
overhead is directly computable.

Reproducibility contract: two runs of the same (config, seed) write
byte-identical CSVs apart from the two wall-time columns, which can be
suppressed with include_timing=False for byte-level comparisons.
"""

from dataclasses import dataclass, asdict
import csv
import io
import itertools
import json
import math
import os
from pathlib import Path

import numpy as np
from scipy import stats

from .envs import PerturbedEnv, PiecewiseEnv, SyntheticEnvSpec, make_user_features
from .policy import CnbPolicy, PolicyConfig
from .ratings import RatingsDataset, RatingsEnv

SCHEMA_LINE = "# sere-bandits round-log v1"

ROUND_COLUMNS = ["t", "user", "chosen", "r_hat", "reward", "regret", "cum_regret",
                 "pha", "pha_min", "deviation", "rho", "drift", "resets",
                 "q_clusters"]
TIMING_COLUMNS = ["sere_ms", "round_ms"]

# tuning ranges reported for the detector and reset hyperparameters
GRID_BOUNDS = {
    "rho_min": (0.005, 0.02),
    "rho_max": (0.05, 0.2),
    "pha_offset": (0.05, 0.2),
    "pha_threshold": (0.3, 0.7),
    "pha_scale": (0.005, 0.02),
}
GRID_CHOICES = {
    "decay": (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
    "maturity": (50, 100, 150, 200),
}

ALGORITHMS = {"club_n": "club", "mcnb_lite": "mcnb"}
ENVIRONMENTS = ("piecewise", "perturbed", "dataset")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    algo: str = "club_n"
    env: str = "perturbed"
    T: int = 10000
    seeds: tuple = (1, 2, 3, 4, 5)
    out_dir: str | None = None

    # environment
    n_users: int = 6
    d: int = 20
    K: int = 10
    noise_sigma: float = 0.05
    reward_family: str = "cosine"
    change_points: tuple = ()                 # piecewise env
    perturb_period: int = 200                 # perturbed env
    perturb_sigma: float = 0.1
    user_groups: int = 3
    user_jitter: float = 0.1
    user_weights: tuple | None = None         # skewed arrival frequencies
    dataset_path: str | None = None           # cached .npz for env="dataset"

    # policy / networks
    hidden: tuple = (64, 64)
    lr: float = 0.05
    beta_user: float = 0.5
    beta_cluster: float = 0.5
    ridge: float = 1.0
    epsilon1: float = 1.0
    reward_tolerance: float = 1e-2
    sere_enabled: bool = True
    decay: float = 0.9
    maturity: int = 100
    single_reset_per_step: bool = False
    sere_on_clusters: bool = False

    # drift detector
    pha_offset: float = 0.1
    pha_threshold: float = 0.5
    pha_scale: float = 0.01
    rho_min: float = 0.01
    rho_max: float = 0.1
    rearm_on_detection: bool = True

    plasticity_stride: int = 25
    ci_stride: int = 100

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.hidden = tuple(int(h) for h in self.hidden)
        self.change_points = tuple(int(c) for c in self.change_points)
        if self.user_weights is not None:
            self.user_weights = tuple(float(w) for w in self.user_weights)
        self.validate()

    def validate(self):
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"algo must be one of {sorted(ALGORITHMS)}, got {self.algo!r}")
        if self.env not in ENVIRONMENTS:
            raise ConfigError(f"env must be one of {ENVIRONMENTS}, got {self.env!r}")
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if not 0.0 <= self.rho_min <= self.rho_max < 1.0:
            raise ConfigError(f"need 0 <= rho_min <= rho_max < 1, got "
                              f"{self.rho_min}, {self.rho_max}")
        if self.rho_min != self.rho_max and \
                self.pha_scale * self.pha_threshold > self.rho_max - self.rho_min:
            raise ConfigError(
                f"pha_scale * pha_threshold = {self.pha_scale * self.pha_threshold:.6g} "
                f"exceeds rho_max - rho_min = {self.rho_max - self.rho_min:.6g}")
        if self.env == "dataset" and self.dataset_path is None:
            raise ConfigError("env='dataset' requires dataset_path")

    def policy_config(self):
        return PolicyConfig(
            hidden=self.hidden, lr=self.lr, beta_user=self.beta_user,
            beta_cluster=self.beta_cluster, ridge=self.ridge,
            clustering=ALGORITHMS[self.algo], epsilon1=self.epsilon1,
            reward_tolerance=self.reward_tolerance, sere_enabled=self.sere_enabled,
            decay=self.decay, maturity=self.maturity,
            single_reset_per_step=self.single_reset_per_step,
            sere_on_clusters=self.sere_on_clusters, pha_offset=self.pha_offset,
            pha_threshold=self.pha_threshold, pha_scale=self.pha_scale,
            rho_min=self.rho_min, rho_max=self.rho_max,
            rearm_on_detection=self.rearm_on_detection)

    def replace(self, **kwargs):
        d = asdict(self)
        d.update(kwargs)
        return ExperimentConfig(**d)

    @classmethod
    def from_file(cls, path):
        with open(path) as f:
            try:
                raw = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON config: {exc}") from exc
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def perturbed_default(cls, **overrides):
        """Tuned profile for the feature-perturbation experiments: skewed
        user traffic so networks mature at staggered times, a narrower net
        than the library default to keep resets sparse, and a maturity
        threshold scaled to per-network update counts."""
        base = dict(
            env="perturbed", T=10000, seeds=(1, 2, 3, 4, 5),
            n_users=6, d=20, K=10, user_groups=3,
            user_weights=(0.30, 0.22, 0.16, 0.13, 0.10, 0.09),
            hidden=(32, 32), lr=0.05, beta_user=0.5, beta_cluster=0.5,
            decay=0.9, maturity=1200, noise_sigma=0.05,
        )
        base.update(overrides)
        return cls(**base)


def build_env(config, seed):
    if config.env == "piecewise":
        spec = SyntheticEnvSpec(
            n_users=config.n_users, d=config.d, K=config.K, T=config.T,
            change_points=config.change_points, noise_sigma=config.noise_sigma,
            reward_family=config.reward_family, seed=seed)
        return PiecewiseEnv(spec)
    if config.env == "perturbed":
        feats = make_user_features(config.n_users, config.d,
                                   n_groups=config.user_groups,
                                   jitter=config.user_jitter, seed=seed)
        return PerturbedEnv(feats, period=config.perturb_period,
                            sigma=config.perturb_sigma, seed=seed,
                            K=config.K, T=config.T, noise_sigma=config.noise_sigma,
                            reward_family=config.reward_family,
                            user_weights=config.user_weights)
    dataset = RatingsDataset.load(config.dataset_path)
    return RatingsEnv(dataset, T=config.T, seed=seed, n_negatives=config.K - 1)


@dataclass
class RunLog:
    """Everything recorded from one (config, seed) run."""

    seed: int
    rows: list                      # one dict per round, ROUND/TIMING columns
    reset_events: list              # dicts: round, learner, layer, unit
    plasticity: list                # (t, last-layer delta since previous sample)
    summary: dict

    def cum_regret(self):
        return np.array([r["cum_regret"] for r in self.rows])


def _last_layer_snapshot(policy):
    return {u: l.net.weights[-1].copy() for u, l in policy.learners.items()}


def _plasticity_delta(prev, current):
    tracked = [u for u in prev if u in current]
    if not tracked:
        return 0.0
    return float(np.sqrt(sum(np.sum((current[u] - prev[u]) ** 2) for u in tracked)))


def run_single(config, seed):
    """One seeded run: T rounds, per-round rows, events, plasticity samples.

    The environment consumes the root stream for `seed`; the policy spawns
    its per-learner streams from the same seed's spawn keys, so the two
    never interact and each is reproducible on its own.
    """
    env = build_env(config, seed)
    policy = CnbPolicy(config.policy_config(), d=_env_dim(config, env), seed=seed)
    rows, events, plasticity = [], [], []
    cum = 0.0
    snapshot = _last_layer_snapshot(policy)
    for rnd in env.rounds():
        rec = policy.play_round(rnd)
        cum += rec.regret
        rows.append({
            "t": rec.t, "user": rec.user, "chosen": rec.chosen,
            "r_hat": rec.r_hat, "reward": rec.reward, "regret": rec.regret,
            "cum_regret": cum, "pha": rec.pha, "pha_min": rec.pha_min,
            "deviation": rec.deviation, "rho": rec.rho,
            "drift": int(rec.drift), "resets": len(rec.reset_events),
            "q_clusters": rec.q_clusters,
            "sere_ms": rec.sere_seconds * 1e3, "round_ms": rec.round_seconds * 1e3,
        })
        for ev in rec.reset_events:
            events.append({"round": rec.t, "learner": rec.user,
                           "layer": ev.layer, "unit": ev.unit})
        if rec.t % config.plasticity_stride == 0:
            current = _last_layer_snapshot(policy)
            plasticity.append((rec.t, _plasticity_delta(snapshot, current)))
            snapshot = current
    summary = summarize_rows(rows, events, config.T)
    summary["seed"] = seed
    summary["detections"] = policy.detector.detections
    return RunLog(seed=seed, rows=rows, reset_events=events,
                  plasticity=plasticity, summary=summary)


def _env_dim(config, env):
    if config.env == "dataset":
        return env.dataset.arm_dim
    return config.d


def summarize_rows(rows, events, T):
    regrets = np.array([r["regret"] for r in rows])
    half = len(rows) // 2
    reinit = compute_reinit_stats(events, T)
    return {
        "rounds": len(rows),
        "avg_regret": float(regrets.mean()),
        "cum_regret": float(regrets.sum()),
        "first_half_regret": float(regrets[:half].sum()) if half else 0.0,
        "second_half_regret": float(regrets[half:2 * half].sum()) if half else 0.0,
        "total_resets": int(sum(r["resets"] for r in rows)),
        "mean_sere_ms": float(np.mean([r["sere_ms"] for r in rows])),
        "mean_round_ms": float(np.mean([r["round_ms"] for r in rows])),
        "sere_overhead_ratio": float(sum(r["sere_ms"] for r in rows) /
                                     max(sum(r["round_ms"] for r in rows), 1e-12)),
        **reinit,
    }


def compute_reinit_stats(events, T):
    """Fraction of rounds with >=1 reset and inter-reset-round intervals."""
    reset_rounds = sorted({e["round"] for e in events})
    out = {"reset_round_fraction": len(reset_rounds) / max(T, 1)}
    if len(reset_rounds) >= 2:
        gaps = np.diff(reset_rounds)
        out["interval_min"] = int(gaps.min())
        out["interval_mean"] = float(gaps.mean())
        out["interval_max"] = int(gaps.max())
    else:
        out["interval_min"] = out["interval_mean"] = out["interval_max"] = None
    return out


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: list                     # RunLog per seed
    aggregate: dict

    def avg_regrets(self):
        return np.array([r.summary["avg_regret"] for r in self.runs])


def run_experiment(config, write=True):
    """All seeds of one config; optionally writes per-seed CSVs plus a JSON
    aggregate to config.out_dir (or $SERE_BANDITS_OUT)."""
    config.validate()
    runs = [run_single(config, seed) for seed in config.seeds]
    aggregate = aggregate_runs(config, runs)
    if write:
        out_dir = resolve_out_dir(config)
        if out_dir is not None:
            write_experiment(config, runs, aggregate, out_dir)
    return ExperimentResult(config=config, runs=runs, aggregate=aggregate)


def aggregate_runs(config, runs):
    avg = np.array([r.summary["avg_regret"] for r in runs])
    band = cumulative_band([r.cum_regret() for r in runs], config.ci_stride)
    return {
        "algo": config.algo, "env": config.env, "T": config.T,
        "seeds": list(config.seeds), "sere_enabled": config.sere_enabled,
        "avg_regret_mean": float(avg.mean()),
        "avg_regret_std": float(avg.std(ddof=1)) if len(avg) > 1 else 0.0,
        "cum_regret_mean": float(np.mean([r.summary["cum_regret"] for r in runs])),
        "mean_sere_ms": float(np.mean([r.summary["mean_sere_ms"] for r in runs])),
        "mean_round_ms": float(np.mean([r.summary["mean_round_ms"] for r in runs])),
        "confidence_band": band,
        "per_seed": [r.summary for r in runs],
    }


def cumulative_band(curves, stride):
    """Mean cumulative-regret curve with a 95% normal-approximation band,
    sampled every `stride` rounds."""
    n = len(curves)
    T = min(len(c) for c in curves)
    idx = np.arange(stride - 1, T, stride)
    if len(idx) == 0:
        idx = np.array([T - 1])
    sampled = np.stack([np.asarray(c)[idx] for c in curves])
    mean = sampled.mean(axis=0)
    if n > 1:
        half = 1.96 * sampled.std(axis=0, ddof=1) / math.sqrt(n)
    else:
        half = np.zeros_like(mean)
    return {"rounds": (idx + 1).tolist(), "mean": mean.tolist(),
            "halfwidth": half.tolist()}


def paired_comparison(base_avg_regrets, variant_avg_regrets):
    """Two-sided paired t-test over per-seed average regrets."""
    a = np.asarray(base_avg_regrets, dtype=float)
    b = np.asarray(variant_avg_regrets, dtype=float)
    if a.shape != b.shape or len(a) < 2:
        raise ConfigError("paired comparison needs >= 2 matched seeds")
    tstat, pvalue = stats.ttest_rel(a, b)
    return {"mean_improvement": float((a - b).mean()),
            "t_statistic": float(tstat), "p_value": float(pvalue)}


# -- output ------------------------------------------------------------------

def resolve_out_dir(config):
    env_dir = os.environ.get("SERE_BANDITS_OUT")
    out = config.out_dir or env_dir
    return Path(out) if out else None


def rows_to_csv(rows, include_timing=True):
    cols = ROUND_COLUMNS + (TIMING_COLUMNS if include_timing else [])
    buf = io.StringIO()
    buf.write(SCHEMA_LINE + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in rows:
        writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                         for c in cols])
    return buf.getvalue()


def write_experiment(config, runs, aggregate, out_dir, include_timing=True):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tag = f"{config.algo}_{config.env}_{'sere' if config.sere_enabled else 'base'}"
    for run in runs:
        stem = out_dir / f"{tag}_seed{run.seed}"
        with open(f"{stem}.csv", "w") as f:
            f.write(rows_to_csv(run.rows, include_timing=include_timing))
        with open(f"{stem}_resets.csv", "w") as f:
            f.write(SCHEMA_LINE + "\n")
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["round", "learner", "layer", "unit"])
            for e in run.reset_events:
                w.writerow([e["round"], e["learner"], e["layer"], e["unit"]])
        with open(f"{stem}_plasticity.csv", "w") as f:
            f.write(SCHEMA_LINE + "\n")
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["t", "last_layer_delta"])
            for t, delta in run.plasticity:
                w.writerow([t, repr(delta)])
    with open(out_dir / f"{tag}_summary.json", "w") as f:
        json.dump(aggregate, f, indent=2, sort_keys=True)
    return out_dir / f"{tag}_summary.json"


# -- grid search --------------------------------------------------------------

def validate_grid(ranges):
    for key, values in ranges.items():
        if key in GRID_BOUNDS:
            lo, hi = GRID_BOUNDS[key]
            bad = [v for v in values if not lo <= v <= hi]
            if bad:
                raise ConfigError(f"grid values {bad} for {key} outside [{lo}, {hi}]")
        elif key in GRID_CHOICES:
            allowed = GRID_CHOICES[key]
            bad = [v for v in values if not any(np.isclose(v, a) for a in allowed)]
            if bad:
                raise ConfigError(f"grid values {bad} for {key} not in {allowed}")
        elif key not in ExperimentConfig.__dataclass_fields__:
            raise ConfigError(f"unknown grid key {key!r}")


def grid_search(config, ranges):
    """Cartesian sweep over `ranges`; infeasible detector combinations are
    skipped and reported. Returns the best config (lowest mean average
    regret), the result table, and the skipped combinations."""
    validate_grid(ranges)
    keys = sorted(ranges)
    table, skipped = [], []
    best = None
    for combo in itertools.product(*(ranges[k] for k in keys)):
        point = dict(zip(keys, combo))
        try:
            candidate = config.replace(**point)
        except ConfigError as exc:
            skipped.append({"point": point, "reason": str(exc)})
            continue
        result = run_experiment(candidate, write=False)
        entry = {"point": point,
                 "avg_regret_mean": result.aggregate["avg_regret_mean"],
                 "avg_regret_std": result.aggregate["avg_regret_std"]}
        table.append(entry)
        if best is None or entry["avg_regret_mean"] < best[1]["avg_regret_mean"]:
            best = (candidate, entry)
    if best is None:
        raise ConfigError("no feasible grid point")
    return {"best_config": best[0], "best": best[1], "table": table,
            "skipped": skipped}


def sensitivity_sweep(config, decays=(0.1, 0.5, 0.9), maturities=(50, 100, 200)):
    """End-to-end sweep over the utility decay rate and maturity threshold;
    emits the comparison table ordered by mean average regret."""
    result = grid_search(config, {"decay": list(decays),
                                  "maturity": list(maturities)})
    table = sorted(result["table"], key=lambda e: e["avg_regret_mean"])
    return {"table": table, "best": result["best"],
            "best_config": result["best_config"]}
