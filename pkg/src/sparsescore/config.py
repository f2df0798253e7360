"""Run configuration: flat ``section.key = value`` text files plus flag
overrides, with a defaults registry that doubles as documentation.

Unknown keys are hard errors.  Every resolved configuration hashes to a
stable hex digest that run reports embed, so any output can be traced
back to the exact settings that produced it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

# key -> (default, parser, help)
_BOOL = {"on": True, "off": False, "true": True, "false": False}


def _parse_bool(text: str) -> bool:
    try:
        return _BOOL[text.strip().lower()]
    except KeyError:
        raise ValueError(f"expected on/off, got {text!r}") from None


def _parse_floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _parse_ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _parse_bounds(text: str) -> tuple:
    """Parse ``a:b a:b ...`` interval lists."""
    out = []
    for part in text.replace(",", " ").split():
        a, b = part.split(":")
        out.append((float(a), float(b)))
    return tuple(out)


DEFAULTS: dict[str, tuple] = {
    # target
    "target.kind": ("gaussian", str, "gaussian | gaussian_mixture | gaussian_uniform_product"),
    "target.dim": (3, int, "data dimension"),
    "target.mean": ((0.0, 0.0, 0.0), _parse_floats, "Gaussian means (per coordinate)"),
    "target.var": ((0.08, 1.0, 1.0), _parse_floats, "Gaussian variances (per coordinate)"),
    "target.mixture": ((), _parse_floats, "flat mixture spec: w mu... v... per component"),
    "target.gaussian_coords": ((0,), _parse_ints, "indices of Gaussian coordinates (product kind)"),
    "target.uniform_bounds": (((0.0, 1.0),), _parse_bounds, "a:b per uniform coordinate (product kind)"),
    "target.n": (2000, int, "training sample count"),
    # schedule
    "schedule.sigma_max": (1.05, float, "VE growth base sigma (> 1)"),
    "schedule.eps": (1e-5, float, "time floor"),
    "schedule.T": (50, int, "discrete schedule steps (theory audits)"),
    "schedule.c": (1.0, float, "discrete schedule constant in c log(T)/T"),
    # net
    "net.hidden": ((64, 64, 64), _parse_ints, "hidden layer widths"),
    "net.time_feat_dim": (16, int, "sinusoidal time-feature width (even)"),
    "net.freq_scale": (30.0, float, "std of the frozen feature frequencies"),
    "net.l1_radius": (1.0, float, "parameter l1-ball radius for projection"),
    "net.output_l1_cap": (1.0, float, "bound on ||s(x,t)||_1 when the cap is on"),
    # constraint
    "constraint.output_cap": (True, _parse_bool, "enforce the output l1 cap"),
    # objective
    "objective.r": (0.001, float, "scale-penalty weight"),
    "objective.weighting": ("none", str, "per-row loss weighting: none | sigma2"),
    # train
    "train.epochs": (1500, int, "training epochs"),
    "train.batch_size": (128, int, "minibatch rows"),
    "train.learning_rate": (0.001, float, "Adam step size"),
    "train.seed": (0, int, "run seed"),
    "train.projection": (False, _parse_bool, "project parameters onto the l1 ball each step"),
    "train.kappa_init": (10.0, float, "initial scale"),
    "train.kappa_trainable": (True, _parse_bool, "whether Adam updates kappa"),
    "train.checkpoint_every": (0, int, "epochs between checkpoints (0 = final only)"),
    # sampler
    "sampler.steps": (60, int, "Langevin grid points"),
    "sampler.chains": (2000, int, "number of chains"),
    "sampler.record": (False, _parse_bool, "record full trajectories"),
    "sampler.snr": (0.0, float, "optional SNR-scaled step mode (0 = plain update)"),
    # metrics
    "metrics.knn_k": (5, int, "neighbors for the knn KL estimator"),
    "metrics.n_mc": (2000, int, "Monte-Carlo budget for diagnostics"),
    "metrics.s_levels": ((1, 2, 3), _parse_ints, "sparsity levels for the profile"),
    # sweep
    "sweep.s_values": ((1, 2, 4, 8), _parse_ints, "Gaussian-coordinate counts"),
    "sweep.r_values": ((0.0, 0.001), _parse_floats, "tuning parameters to compare"),
    "sweep.seeds": ((0, 1, 2), _parse_ints, "training seeds per cell"),
    "sweep.dim": (8, int, "sweep data dimension"),
    # output
    "output.dir": ("runs", str, "output root (SPARSE_SCORE_OUT overrides)"),
}


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration: every known key bound to a typed value."""

    values: tuple  # sorted (key, value) pairs

    def __getitem__(self, key: str):
        d = dict(self.values)
        if key not in d:
            raise KeyError(key)
        return d[key]

    def section(self, name: str) -> dict:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values if k.startswith(prefix)}

    def hash(self) -> str:
        payload = json.dumps([[k, repr(v)] for k, v in self.values], sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def as_dict(self) -> dict:
        return dict(self.values)


def _coerce(key: str, text: str):
    if key not in DEFAULTS:
        raise KeyError(f"unknown config key {key!r}")
    _, parser, _ = DEFAULTS[key]
    try:
        return parser(text)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"bad value for {key}: {text!r} ({exc})") from exc


def parse_config_text(text: str) -> dict:
    """Parse ``section.key = value`` lines; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'section.key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = _coerce(key, value)
    return out


def resolve_config(file_text: str = "", overrides: dict | None = None) -> RunConfig:
    """Layer defaults, then a config file, then explicit overrides.

    Override values may be raw strings (parsed like file values) or
    already-typed values.
    """
    merged = {k: default for k, (default, _, _) in DEFAULTS.items()}
    merged.update(parse_config_text(file_text))
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise KeyError(f"unknown config key {key!r}")
        merged[key] = _coerce(key, value) if isinstance(value, str) else value
    return RunConfig(values=tuple(sorted(merged.items())))


def describe_keys() -> str:
    """One line per key: name, default, and help text (for --help)."""
    lines = []
    for key, (default, _, help_text) in sorted(DEFAULTS.items()):
        lines.append(f"  {key} = {default!r}  # {help_text}")
    return "\n".join(lines)
