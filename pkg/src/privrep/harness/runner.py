"""Seed-replicated method comparison over an epsilon sweep."""

from __future__ import annotations

import dataclasses
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..dp import NoiseScale, PrivacySpec, calibrate_training_noise
from ..fedrep import FedRepConfig, InitMode, heads_matrix, train
from ..jl import MarginParams, default_k_prime, private_classify
from ..metrics import classification_population_loss, excess_population_risk, local_gd_baseline
from ..privinit import estimate_psi_init, private_init
from ..rng import keyed_rng
from ..subspace import principal_dist, qr_orthonormalize
from ..synth import ClassModel, FeatureDistribution, HeadStyle, gen_ground_truth, sample_class_data, sample_federation
from .config import ExperimentConfig

METHODS = ("private_fedrep", "nonprivate_fedrep", "local_gd", "jl_classify")
# which metric columns each method can fill
CAPABILITY = {
    "private_fedrep": {"excess_mse", "dist_to_ustar", "clip_rate"},
    "nonprivate_fedrep": {"excess_mse", "dist_to_ustar", "clip_rate"},
    "local_gd": {"excess_mse"},
    "jl_classify": {"zero_one_loss", "dist_to_ustar"},
}


class CellFailure(RuntimeError):
    """A method failed inside one (method, epsilon, seed) cell; ``__cause__`` holds the original."""

    def __init__(self, method: str, epsilon: float, seed: int, exc: BaseException):
        super().__init__(f"{method} at epsilon={epsilon} seed={seed}: {type(exc).__name__}: {exc}")
        self.method = method
        self.epsilon = epsilon
        self.seed = seed


@dataclass(frozen=True)
class ResultRow:
    method: str
    epsilon: float
    seed: int
    excess_mse: float | None = None
    zero_one_loss: float | None = None
    dist_to_ustar: float | None = None
    wall_time_ms: float | None = None
    clip_rate: float | None = None

    def sort_key(self):
        return (METHODS.index(self.method) if self.method in METHODS else len(METHODS), self.method,
                self.epsilon, self.seed)


@dataclass
class ExperimentResult:
    rows: list

    def filter(self, method: str) -> list[ResultRow]:
        return [r for r in self.rows if r.method == method]

    def mean_by_epsilon(self, method: str, metric: str) -> dict[float, float]:
        acc: dict[float, list] = {}
        for r in self.filter(method):
            v = getattr(r, metric)
            if v is not None:
                acc.setdefault(r.epsilon, []).append(v)
        return {e: float(np.mean(v)) for e, v in sorted(acc.items())}


def split_budget(cfg: ExperimentConfig, epsilon: float, psi_init: float, n: int):
    f = cfg.privacy.init_fraction
    delta = cfg.privacy.delta
    init_spec = PrivacySpec(epsilon * f, delta * f, cfg.fedrep.psi, psi_init, cfg.fedrep.T, n)
    train_spec = PrivacySpec(epsilon * (1 - f), delta * (1 - f), cfg.fedrep.psi, psi_init, cfg.fedrep.T, n)
    return init_spec, train_spec


def _eta(cfg: ExperimentConfig, model) -> float:
    if cfg.fedrep.eta == "auto":
        return 1.0 / (2.0 * model.sigma_max_star**2)
    return float(cfg.fedrep.eta)


class _Clock:
    def __init__(self, enabled: bool):
        self.enabled = enabled

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.ms = (time.perf_counter() - self.t0) * 1e3 if self.enabled else None


def build_problem(cfg: ExperimentConfig, seed: int):
    """Planted model, feature law and federation for one seed."""
    p, f = cfg.problem, cfg.fedrep
    model = gen_ground_truth(p.d, p.k, p.n, p.head_style, p.R, seed)
    dist = FeatureDistribution(p.features, p.d)
    fed = sample_federation(model, dist, p.m, f.T, f.b, seed, f.batch_mode)
    return model, dist, fed


def resolve_psi_init(cfg: ExperimentConfig, model, dist, seed: int) -> float:
    if cfg.privacy.psi_init == "auto":
        return estimate_psi_init(model, dist, cfg.problem.m, seed)
    return float(cfg.privacy.psi_init)


def run_private_fedrep(cfg: ExperimentConfig, model, fed, epsilon: float, psi_init: float, seed: int):
    init_spec, train_spec = split_budget(cfg, epsilon, psi_init, fed.n)
    noise = calibrate_training_noise(train_spec, cfg.privacy.accountant)
    fcfg = FedRepConfig(T=cfg.fedrep.T, b=cfg.fedrep.b, eta=_eta(cfg, model), clip_psi=cfg.fedrep.psi,
                        noise=noise, init=cfg.fedrep.init, init_spec=init_spec)
    return train(fed, fcfg, _cell_seed(seed, epsilon), ground_truth=model)


def run_nonprivate_fedrep(cfg: ExperimentConfig, model, fed, seed: int):
    psi = cfg.fedrep.psi if cfg.methods.nonprivate_psi == "auto" else float(cfg.methods.nonprivate_psi)
    if cfg.fedrep.init == InitMode.PRIVATE:
        U0, _ = private_init(fed, None, model.k, seed)
        init = dict(init=InitMode.PROVIDED, init_basis=U0)
    else:
        init = dict(init=InitMode.RANDOM)
    fcfg = FedRepConfig(T=cfg.fedrep.T, b=cfg.fedrep.b, eta=_eta(cfg, model), clip_psi=psi,
                        noise=NoiseScale.off(), **init)
    return train(fed, fcfg, seed, ground_truth=model)


def _cell_seed(seed: int, epsilon: float) -> int:
    # distinct noise per epsilon, still a pure function of (seed, epsilon)
    return int(keyed_rng(seed, "cell", repr(float(epsilon))).integers(0, 2**62))


def build_class_problem(cfg: ExperimentConfig, seed: int):
    c = cfg.classify
    gt = gen_ground_truth(c.d, c.k, c.n, HeadStyle.UNIT, 0.0, int(keyed_rng(seed, "classify_truth").integers(0, 2**62)))
    model = ClassModel(gt.u_star, gt.v_star, c.r, c.rho)
    data = sample_class_data(gt.u_star, gt.v_star, c.r, c.m, c.n, margin=c.rho, rng_seed=seed)
    return model, data


def run_classify(cfg: ExperimentConfig, model: ClassModel, data, epsilon: float, seed: int):
    c = cfg.classify
    cell = _cell_seed(seed, epsilon)
    kp = c.k_prime if c.k_prime > 0 else None
    params = MarginParams(c.rho, c.Gamma, c.r)
    if kp is None:
        kp = default_k_prime(c.r, c.Gamma, c.rho, c.n, c.m)
    U, heads, report = private_classify(data, params, epsilon, c.cover_spec(kp), cell, k_prime=kp,
                                        solver=c.solver, res=c.grid_res)
    loss = classification_population_loss(U, heads, model, c.pop_samples, keyed_rng(seed, "classify_pop"))
    return U, heads, report, loss


def _seed_rows(cfg: ExperimentConfig, seed: int) -> list[ResultRow]:
    rows: list[ResultRow] = []
    eps_list = list(cfg.privacy.epsilons)
    sentinel = [math.inf] if not eps_list else eps_list
    timing = cfg.timing
    m = cfg.methods
    needs_regression = m.private_fedrep or m.nonprivate_fedrep or m.local_gd

    def guarded(method, eps, fn):
        try:
            return fn()
        except Exception as exc:
            raise CellFailure(method, eps, seed, exc) from exc

    if needs_regression:
        model, dist, fed = guarded("data", math.nan, lambda: build_problem(cfg, seed))

        if m.nonprivate_fedrep:
            with _Clock(timing) as clk:
                st, h, tr = guarded("nonprivate_fedrep", math.inf, lambda: run_nonprivate_fedrep(cfg, model, fed, seed))
            risk = excess_population_risk(st.basis, heads_matrix(h), model)
            dist_u = principal_dist(model.u_star, st.basis)
            for e in sentinel:
                rows.append(ResultRow("nonprivate_fedrep", e, seed, excess_mse=risk, dist_to_ustar=dist_u,
                                      wall_time_ms=clk.ms, clip_rate=tr.clip_rate()))

        if m.local_gd:
            with _Clock(timing) as clk:
                _, risk = guarded("local_gd", math.inf,
                                  lambda: local_gd_baseline(fed, steps=m.local_gd_steps, model=model))
            for e in sentinel:
                rows.append(ResultRow("local_gd", e, seed, excess_mse=risk, wall_time_ms=clk.ms))

        if m.private_fedrep:
            psi_init = guarded("private_fedrep", math.nan, lambda: resolve_psi_init(cfg, model, dist, seed))
            for e in eps_list:
                with _Clock(timing) as clk:
                    st, h, tr = guarded("private_fedrep", e,
                                        lambda: run_private_fedrep(cfg, model, fed, e, psi_init, seed))
                rows.append(ResultRow("private_fedrep", e, seed,
                                      excess_mse=excess_population_risk(st.basis, heads_matrix(h), model),
                                      dist_to_ustar=principal_dist(model.u_star, st.basis),
                                      wall_time_ms=clk.ms, clip_rate=tr.clip_rate()))

    if cfg.classify.enabled:
        cmodel, data = guarded("jl_classify", math.nan, lambda: build_class_problem(cfg, seed))
        for e in eps_list:
            with _Clock(timing) as clk:
                U, _, _, loss = guarded("jl_classify", e, lambda: run_classify(cfg, cmodel, data, e, seed))
            Q, _ = qr_orthonormalize(U)
            rows.append(ResultRow("jl_classify", e, seed, zero_one_loss=loss,
                                  dist_to_ustar=principal_dist(cmodel.u_star, Q), wall_time_ms=clk.ms))
    return rows


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Run every enabled method for every seed and epsilon; rows come back sorted.

    Work is split by seed: a seed's data are generated once and shared by
    its methods and epsilons. Each seed's rows depend only on the config
    and the seed, so the thread count does not change the output.
    """
    if threads < 1:
        raise ValueError("threads must be >= 1")
    if threads == 1:
        chunks = [_seed_rows(cfg, s) for s in cfg.seeds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(lambda s: _seed_rows(cfg, s), cfg.seeds))
    rows = [r for chunk in chunks for r in chunk]
    rows.sort(key=ResultRow.sort_key)
    return ExperimentResult(rows)


def override_seed(cfg: ExperimentConfig, seed: int | None) -> ExperimentConfig:
    return cfg if seed is None else dataclasses.replace(cfg, seeds=[seed])
