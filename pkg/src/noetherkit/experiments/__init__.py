"""Config-driven studies that write CSV tables plus a result.json of verdicts."""
import inspect
import json
from dataclasses import dataclass, field

from ._core import ExperimentResult, Table, Verdict, git_style_hash, map_trials, trial_rng
from .convergence import exp_convergence_elementwise, exp_radial_convergence
from .ellipse import ellipse_init, exp_ellipse
from .ensemble import exp_ensemble, fgsm_attack, majority_vote
from .hessian import exp_hessian_vs_q
from .qinit import exp_q_init_distribution

REGISTRY = {
    "q-init": exp_q_init_distribution,
    "ellipse": exp_ellipse,
    "convergence-elementwise": exp_convergence_elementwise,
    "radial-convergence": exp_radial_convergence,
    "hessian-vs-q": exp_hessian_vs_q,
    "ensemble": exp_ensemble,
}

# parameters without a usable default
REQUIRED = {
    "q-init": {"m": 100, "h": 100, "n": 100},
    "ellipse": {"a": 3.0, "q_grid": [0.5, 1.0, 2.0, 4.0]},
    "convergence-elementwise": {
        "act": {"kind": "Tanh"},
        "variance_grid": [[0.01, 1.0], [0.1, 0.5], [0.3, 0.3], [0.5, 0.1], [1.0, 0.01]],
    },
    "radial-convergence": {"lambda_grid": [0.5, 1.0, 2.0, 4.0]},
}

CONFIG_KEYS = ("experiment", "seed", "out", "params")


def parameter_names(name):
    sig = inspect.signature(REGISTRY[name])
    return [p for p in sig.parameters if p != "seed"]


@dataclass
class ExperimentConfig:
    name: str
    seed: int
    params: dict = field(default_factory=dict)
    out: str = "runs"

    def __post_init__(self):
        if self.name not in REGISTRY:
            raise ValueError(f"unknown experiment {self.name!r}; known: {sorted(REGISTRY)}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ValueError("seed must be an integer")
        unknown = set(self.params) - set(parameter_names(self.name))
        if unknown:
            raise ValueError(f"unknown parameters for {self.name}: {sorted(unknown)}")
        for key, value in self.params.items():
            if isinstance(value, list) and not value:
                raise ValueError(f"grid {key!r} must be non-empty")

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ValueError("config must be a JSON object")
        extra = set(d) - set(CONFIG_KEYS)
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        for key in ("experiment", "seed"):
            if key not in d:
                raise ValueError(f"config is missing {key!r}")
        params = d.get("params", {})
        if not isinstance(params, dict):
            raise ValueError("params must be a JSON object")
        return cls(d["experiment"], d["seed"], dict(params), d.get("out", "runs"))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def run(config: ExperimentConfig) -> ExperimentResult:
    params = {**REQUIRED.get(config.name, {}), **config.params}
    return REGISTRY[config.name](seed=config.seed, **params)


__all__ = [
    "REGISTRY", "ExperimentConfig", "ExperimentResult", "Table", "Verdict", "run",
    "ellipse_init", "exp_convergence_elementwise", "exp_ellipse", "exp_ensemble",
    "exp_hessian_vs_q", "exp_q_init_distribution", "exp_radial_convergence", "fgsm_attack",
    "git_style_hash", "majority_vote", "map_trials", "trial_rng",
]
