import os
import json
import hashlib
from dataclasses import dataclass, asdict, fields
from dotenv import load_dotenv

from campc.errors import ConfigError
from campc.sim import VARIANTS

"""
Settings for the command line harness.
    - .env is read once on import, then a BenchmarkConfig is resolved as
      defaults < environment < JSON config file < command line flags
"""

load_dotenv()

DEFAULT_OUT_DIR = "out"
DEFAULT_DATABASE_URL = "sqlite:///campc_runs.db"

CAMPC_LOG_LEVEL = os.getenv("CAMPC_LOG_LEVEL", "WARNING")
CAMPC_DATABASE_URL = os.getenv("CAMPC_DATABASE_URL", DEFAULT_DATABASE_URL)

# exit codes shared by every subcommand
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY = 2
EXIT_NUMERICAL = 3

X0_POLICIES = ("strict", "scale")


@dataclass
class BenchmarkConfig:
    n_v: int = 330
    N: int = 12
    x0: tuple = (-4.0, -0.4)
    x0_policy: str = "scale"
    steps: int = 100
    variants: tuple = VARIANTS
    delta_u: float = 0.3
    sweep: tuple = (30, 60, 120, 240, 480, 960, 1900)
    sweep_steps: int = 20
    out_dir: str = DEFAULT_OUT_DIR
    seed: int = 0
    verify_invariants: bool = False
    cases: int = 100
    workers: int = 1

    def validate(self):
        if self.n_v < 3:
            raise ConfigError(f"n_v must be >= 3, got {self.n_v}")
        if self.N < 1:
            raise ConfigError(f"N must be >= 1, got {self.N}")
        if len(self.x0) != 2:
            raise ConfigError(f"x0 must have 2 entries, got {len(self.x0)}")
        if self.x0_policy not in X0_POLICIES:
            raise ConfigError(f"x0_policy must be one of {X0_POLICIES}, got {self.x0_policy!r}")
        if self.steps < 1 or self.sweep_steps < 1:
            raise ConfigError("steps and sweep_steps must be >= 1")
        unknown = [v for v in self.variants if v not in VARIANTS]
        if unknown or not self.variants:
            raise ConfigError(f"variants must be a nonempty subset of {VARIANTS}, got {list(self.variants)}")
        if self.delta_u <= 0:
            raise ConfigError(f"delta_u must be positive, got {self.delta_u}")
        if not self.sweep or any(n < 3 for n in self.sweep):
            raise ConfigError("sweep must be a nonempty list of n_v values >= 3")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.cases < 1:
            raise ConfigError(f"cases must be >= 1, got {self.cases}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        return self

    def to_dict(self):
        doc = asdict(self)
        doc["x0"] = list(self.x0)
        doc["variants"] = list(self.variants)
        doc["sweep"] = list(self.sweep)
        return doc

    def checksum(self):
        # out_dir and workers do not change any numerical output
        doc = self.to_dict()
        for key in ("out_dir", "workers"):
            doc.pop(key)
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


CONFIG_KEYS = tuple(f.name for f in fields(BenchmarkConfig))


def _coerce(key, value):
    # json and env both hand us loosely typed values
    try:
        if key in ("x0",):
            if isinstance(value, str):
                value = value.split(",")
            return tuple(float(v) for v in value)
        if key == "sweep":
            if isinstance(value, str):
                value = value.split(",")
            return tuple(int(v) for v in value)
        if key == "variants":
            if isinstance(value, str):
                value = [v.strip() for v in value.split(",") if v.strip()]
            return tuple(value)
        if key in ("n_v", "N", "steps", "sweep_steps", "seed", "cases", "workers"):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if key == "delta_u":
            return float(value)
        if key == "verify_invariants":
            if isinstance(value, str):
                return value.strip().lower() in ("1", "true", "yes", "on")
            return bool(value)
        return str(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid value for {key}: {value!r}") from e


def environment_values():
    """Config values taken from CAMPC_* variables (read at call time)."""
    env = {
        "out_dir": os.getenv("CAMPC_OUT_DIR"),
        "seed": os.getenv("CAMPC_SEED"),
        "workers": os.getenv("CAMPC_WORKERS"),
    }
    return {k: _coerce(k, v) for k, v in env.items() if v not in (None, "")}


def read_config_file(path):
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a flat JSON object")
    unknown = sorted(set(doc) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {', '.join(unknown)}")
    return {k: _coerce(k, v) for k, v in doc.items()}


def load_config(path=None, overrides=None):
    values = environment_values()
    if path:
        values.update(read_config_file(path))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, value)
    return BenchmarkConfig(**values).validate()


def add_common_arguments(parser):
    parser.add_argument("--config", help="flat JSON config file")
    parser.add_argument("--out", dest="out_dir", help="output directory")
    parser.add_argument("--seed", type=int, help="random seed")
    parser.add_argument("--variants", help="comma separated list of full,exact,approx")
    parser.add_argument("--verify-invariants", dest="verify_invariants", action="store_const", const=True,
                        help="audit the removal conditions at every step")
    parser.add_argument("--n-v", dest="n_v", type=int, help="tangent rows per ellipse")
    parser.add_argument("--horizon", dest="N", type=int, help="prediction horizon N")
    parser.add_argument("--steps", type=int, help="closed-loop steps")
    parser.add_argument("--x0", help="initial state as x1,x2")
    parser.add_argument("--x0-policy", dest="x0_policy", choices=X0_POLICIES)
    parser.add_argument("--delta-u", dest="delta_u", type=float, help="bound on |u - u~| in approx mode")


def config_from_args(args):
    overrides = {key: getattr(args, key, None) for key in CONFIG_KEYS}
    return load_config(getattr(args, "config", None), overrides)
