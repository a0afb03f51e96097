"""Experiment configuration: a flat ``section.key = value`` file (TOML syntax).

Every key has a default; see :data:`SCHEMA` or run ``privrep describe-config``.
Validation errors name the offending key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..dp import NoiseMode
from ..fedrep import InitMode
from ..jl import CoverKind, CoverSpec, Solver, lattice_cardinality
from ..synth import BatchMode, FeatureKind, HeadStyle


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


@dataclass(frozen=True)
class Key:
    path: str
    kind: str  # int, float, bool, str, float_list, int_list, float_or_inf, float_or_auto
    default: object
    doc: str
    choices: tuple = ()


SCHEMA: list[Key] = [
    Key("problem.d", "int", 50, "feature dimension"),
    Key("problem.k", "int", 2, "rank of the shared embedding"),
    Key("problem.n", "int", 20000, "number of users"),
    Key("problem.m", "int", 10, "samples per user (first half S0, second half S1)"),
    Key("problem.R", "float", 0.01, "label-noise standard deviation"),
    Key("problem.features", "str", "gaussian", "feature law", tuple(k.value for k in FeatureKind)),
    Key("problem.head_style", "str", "gaussian", "user heads: N(0, I_k) or unit-norm", tuple(h.value for h in HeadStyle)),
    Key("fedrep.T", "int", 5, "communication rounds"),
    Key("fedrep.eta", "float_or_auto", 2.5, "step size; 'auto' = 1/(2 sigma_max*^2) from the planted model"),
    Key("fedrep.b", "int", 1, "batch size per round"),
    Key("fedrep.psi", "float_or_inf", 10.0, "gradient clip bound (Frobenius); 'inf' disables"),
    Key("fedrep.init", "str", "private", "initial embedding", ("private", "random")),
    Key("fedrep.batch_mode", "str", "resample", "batch schedule", tuple(b.value for b in BatchMode)),
    Key("privacy.epsilons", "float_list", [1.0, 2.0, 4.0, 8.0], "total epsilon per private run"),
    Key("privacy.delta", "float", 1e-6, "total delta per private run"),
    Key("privacy.accountant", "str", "paper", "training-noise calibration", ("paper", "zcdp")),
    Key("privacy.psi_init", "float_or_auto", "auto", "init-statistic clip bound; 'auto' = 99.9th percentile on a throwaway draw"),
    Key("privacy.init_fraction", "float", 0.5, "share of (epsilon, delta) spent on the private init"),
    Key("methods.private_fedrep", "bool", True, "run Private FedRep"),
    Key("methods.nonprivate_fedrep", "bool", True, "run FedRep without noise"),
    Key("methods.nonprivate_psi", "float_or_auto", "auto", "clip bound of the noise-free baseline; 'auto' = fedrep.psi"),
    Key("methods.local_gd", "bool", True, "run per-user gradient descent"),
    Key("methods.local_gd_steps", "int", 500, "local GD iterations"),
    Key("classify.enabled", "bool", False, "run the JL margin classifier"),
    Key("classify.d", "int", 10, "classification feature dimension"),
    Key("classify.k", "int", 1, "classification embedding rank"),
    Key("classify.n", "int", 50, "classification users"),
    Key("classify.m", "int", 40, "samples per classification user"),
    Key("classify.rho", "float", 0.3, "margin"),
    Key("classify.Gamma", "float", 1.0, "head norm bound"),
    Key("classify.r", "float", 1.0, "feature ball radius"),
    Key("classify.k_prime", "int", 4, "sketch dimension; 0 = derive from (r, Gamma, rho, n, m)"),
    Key("classify.gamma_cover", "float", 0.5, "cover radius (<= 1)"),
    Key("classify.cover", "str", "lattice", "cover construction", tuple(c.value for c in CoverKind)),
    Key("classify.cover_count", "int", 10000, "points in a random net"),
    Key("classify.solver", "str", "exact1d", "inner head solver", tuple(s.value for s in Solver)),
    Key("classify.grid_res", "int", 101, "grid points per axis for the grid solver"),
    Key("classify.pop_samples", "int", 20000, "fresh draws per user for the population 0-1 loss"),
    Key("seeds", "int_list", [0, 1, 2, 3, 4], "replication seeds"),
    Key("output_dir", "str", "out", "where sweep writes results.csv / results.svg"),
    Key("timing", "bool", False, "fill wall_time_ms (breaks byte-identical reruns)"),
]

_BY_PATH = {k.path: k for k in SCHEMA}


def describe() -> str:
    lines = ["# key = default    # description", ""]
    section = None
    for k in SCHEMA:
        sec = k.path.split(".")[0] if "." in k.path else ""
        if sec != section:
            if section is not None:
                lines.append("")
            section = sec
        choices = f" [{'|'.join(k.choices)}]" if k.choices else ""
        lines.append(f"{k.path} = {_fmt(k.default)}    # {k.kind}{choices}: {k.doc}")
    return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, list):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return repr(v)


def _coerce(key: Key, value):
    p = key.path
    kind = key.kind
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(p, f"expected true/false, got {value!r}")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(p, f"expected an integer, got {value!r}")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(p, f"expected a number, got {value!r}")
        return float(value)
    if kind in ("float_or_inf", "float_or_auto"):
        word = "inf" if kind == "float_or_inf" else "auto"
        if isinstance(value, str):
            if value.strip().lower() != word:
                raise ConfigError(p, f"expected a number or '{word}', got {value!r}")
            return math.inf if word == "inf" else "auto"
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(p, f"expected a number or '{word}', got {value!r}")
        return float(value)
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(p, f"expected a string, got {value!r}")
        if key.choices and value not in key.choices:
            raise ConfigError(p, f"must be one of {', '.join(key.choices)}; got {value!r}")
        return value
    if kind in ("float_list", "int_list"):
        if not isinstance(value, list):
            raise ConfigError(p, f"expected a list, got {value!r}")
        out = []
        for j, x in enumerate(value):
            if isinstance(x, bool) or not isinstance(x, (int, float)) or (kind == "int_list" and not isinstance(x, int)):
                raise ConfigError(f"{p}[{j}]", f"bad element {x!r}")
            out.append(float(x) if kind == "float_list" else int(x))
        return out
    raise AssertionError(kind)


def _flatten(d: dict, prefix: str = "") -> dict:
    flat = {}
    for k, v in d.items():
        path = f"{prefix}{k}"
        if isinstance(v, dict):
            flat.update(_flatten(v, path + "."))
        else:
            flat[path] = v
    return flat


@dataclass
class ProblemSection:
    d: int
    k: int
    n: int
    m: int
    R: float
    features: FeatureKind
    head_style: HeadStyle


@dataclass
class FedRepSection:
    T: int
    eta: float | str
    b: int
    psi: float
    init: InitMode
    batch_mode: BatchMode


@dataclass
class PrivacySection:
    epsilons: list
    delta: float
    accountant: NoiseMode
    psi_init: float | str
    init_fraction: float


@dataclass
class MethodsSection:
    private_fedrep: bool
    nonprivate_fedrep: bool
    nonprivate_psi: float | str
    local_gd: bool
    local_gd_steps: int


@dataclass
class ClassifySection:
    enabled: bool
    d: int
    k: int
    n: int
    m: int
    rho: float
    Gamma: float
    r: float
    k_prime: int
    gamma_cover: float
    cover: CoverKind
    cover_count: int
    solver: Solver
    grid_res: int
    pop_samples: int

    def cover_spec(self, k_prime: int) -> CoverSpec:
        return CoverSpec(self.gamma_cover, k_prime, self.k, self.cover, self.cover_count)


@dataclass
class ExperimentConfig:
    problem: ProblemSection
    fedrep: FedRepSection
    privacy: PrivacySection
    methods: MethodsSection
    classify: ClassifySection
    seeds: list = field(default_factory=list)
    output_dir: str = "out"
    timing: bool = False
    source: str | None = None

    def with_seeds(self, seeds) -> ExperimentConfig:
        import dataclasses

        return dataclasses.replace(self, seeds=list(seeds))


def from_mapping(raw: dict, source: str | None = None) -> ExperimentConfig:
    flat = _flatten(raw)
    for path in flat:
        if path not in _BY_PATH:
            raise ConfigError(path, "unknown key (run `privrep describe-config`)")
    vals = {k.path: (_coerce(k, flat[k.path]) if k.path in flat else _copy(k.default)) for k in SCHEMA}

    def sect(name):
        return {p.split(".", 1)[1]: v for p, v in vals.items() if p.startswith(name + ".")}

    pr = sect("problem")
    cfg = ExperimentConfig(
        problem=ProblemSection(**{**pr, "features": FeatureKind(pr["features"]), "head_style": HeadStyle(pr["head_style"])}),
        fedrep=FedRepSection(**{**sect("fedrep"), "init": InitMode(vals["fedrep.init"]),
                                "batch_mode": BatchMode(vals["fedrep.batch_mode"])}),
        privacy=PrivacySection(**{**sect("privacy"), "accountant": NoiseMode(vals["privacy.accountant"])}),
        methods=MethodsSection(**sect("methods")),
        classify=ClassifySection(**{**sect("classify"), "cover": CoverKind(vals["classify.cover"]),
                                    "solver": Solver(vals["classify.solver"])}),
        seeds=vals["seeds"],
        output_dir=vals["output_dir"],
        timing=vals["timing"],
        source=source,
    )
    validate(cfg)
    return cfg


def _copy(v):
    return list(v) if isinstance(v, list) else v


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"parse error: {exc}") from exc
    return from_mapping(raw, source=str(path))


def validate(cfg: ExperimentConfig) -> None:
    p, f, pv, c = cfg.problem, cfg.fedrep, cfg.privacy, cfg.classify
    for name in ("d", "k", "n", "m"):
        if getattr(p, name) < 1:
            raise ConfigError(f"problem.{name}", "must be >= 1")
    if p.k > min(p.d, p.n):
        raise ConfigError("problem.k", f"must be <= min(d, n) = {min(p.d, p.n)}")
    if p.R < 0:
        raise ConfigError("problem.R", "must be >= 0")
    if p.m < 4:
        raise ConfigError("problem.m", "need m >= 4 (two samples in each half)")
    if f.T < 0:
        raise ConfigError("fedrep.T", "must be >= 0")
    if f.b < 1:
        raise ConfigError("fedrep.b", "must be >= 1")
    half = p.m // 2
    if f.batch_mode == BatchMode.PARTITION and 2 * f.T * f.b > half:
        raise ConfigError("fedrep.b", f"partition batching needs 2*T*b <= m/2 ({2 * f.T * f.b} > {half})")
    if f.batch_mode == BatchMode.RESAMPLE and f.T > 0 and 2 * f.b > half:
        raise ConfigError("fedrep.b", f"resample batching needs 2*b <= m/2 ({2 * f.b} > {half})")
    if f.eta != "auto" and not f.eta > 0:
        raise ConfigError("fedrep.eta", "must be positive")
    if not f.psi > 0:
        raise ConfigError("fedrep.psi", "must be positive")
    for j, e in enumerate(pv.epsilons):
        if not e > 0:
            raise ConfigError(f"privacy.epsilons[{j}]", "must be positive")
    if not 0 < pv.delta < 1:
        raise ConfigError("privacy.delta", "must lie in (0, 1)")
    if pv.psi_init != "auto" and not pv.psi_init > 0:
        raise ConfigError("privacy.psi_init", "must be positive or 'auto'")
    if not 0 < pv.init_fraction < 1:
        raise ConfigError("privacy.init_fraction", "must lie in (0, 1)")
    if cfg.methods.nonprivate_psi != "auto" and not cfg.methods.nonprivate_psi > 0:
        raise ConfigError("methods.nonprivate_psi", "must be positive or 'auto'")
    if cfg.methods.local_gd_steps < 1:
        raise ConfigError("methods.local_gd_steps", "must be >= 1")
    if not cfg.seeds:
        raise ConfigError("seeds", "need at least one seed")
    if any(s < 0 for s in cfg.seeds):
        raise ConfigError("seeds", "seeds must be nonnegative")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        raise ConfigError("seeds", "duplicate seeds")
    if c.enabled:
        for name in ("d", "k", "n", "m", "pop_samples"):
            if getattr(c, name) < 1:
                raise ConfigError(f"classify.{name}", "must be >= 1")
        if c.k > c.d:
            raise ConfigError("classify.k", "must be <= classify.d")
        if c.m < 2:
            raise ConfigError("classify.m", "need m >= 2")
        for name in ("rho", "Gamma", "r"):
            if not getattr(c, name) > 0:
                raise ConfigError(f"classify.{name}", "must be positive")
        if c.k_prime < 0:
            raise ConfigError("classify.k_prime", "must be >= 0 (0 = derived)")
        if not 0 < c.gamma_cover <= 1:
            raise ConfigError("classify.gamma_cover", "must lie in (0, 1]")
        if c.solver == Solver.EXACT_1D and c.k != 1:
            raise ConfigError("classify.solver", "exact1d needs classify.k = 1")
        if c.grid_res < 2:
            raise ConfigError("classify.grid_res", "must be >= 2")
        if c.cover == CoverKind.LATTICE and c.k_prime > 0:
            spec = c.cover_spec(c.k_prime)
            if lattice_cardinality(spec) > spec.cap:
                raise ConfigError("classify.gamma_cover", f"lattice cover too large (~{lattice_cardinality(spec)} points)")
        if not pv.epsilons:
            raise ConfigError("privacy.epsilons", "the classifier needs at least one epsilon")
    if cfg.methods.private_fedrep:
        if not pv.epsilons:
            raise ConfigError("privacy.epsilons", "private_fedrep needs at least one epsilon")
        if f.T < 1:
            raise ConfigError("fedrep.T", "private_fedrep needs at least one round")
