# mocr/config.py
"""
Run configuration. Precedence: CLI flags > --config file > environment > defaults.

The config file uses .env syntax and may only contain the MOCR_* keys below
(plus the variable named by MOCR_JUDGE_API_KEY_ENV, which holds the token).
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Tuple, Union

from dotenv import dotenv_values, load_dotenv

from mocr.elo import EloConfig
from mocr.errors import ConfigError, EloInputError, SamplingSpecError
from mocr.prompting import DEFAULT_PROMPT_FILE
from mocr.services.judge_client import DEFAULT_API_KEY_ENV, JudgeEndpointConfig
from mocr.svg_engine import SamplingSpec

PREFIX = "MOCR_"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p.strip())


def _caps(text: str) -> Dict[str, float]:
    out = {}
    for item in text.split(","):
        if not item.strip():
            continue
        domain, sep, share = item.partition("=")
        if not sep or not domain.strip():
            raise ValueError(f"expected domain=share, got '{item}'")
        out[domain.strip()] = float(share)
    return out


def _level(text: str) -> str:
    level = text.strip().upper()
    if level not in LOG_LEVELS:
        raise ValueError(f"expected one of {', '.join(LOG_LEVELS)}")
    return level


@dataclass(frozen=True)
class Setting:
    key: str
    attr: str
    parse: Callable[[str], Any]
    default: Any


SETTINGS: Tuple[Setting, ...] = (
    Setting("MOCR_JUDGE_BASE_URL", "judge_base_url", str, "https://api.openai.com"),
    Setting("MOCR_JUDGE_PATH", "judge_path", str, "/v1/chat/completions"),
    Setting("MOCR_JUDGE_MODEL", "judge_model", str, "gpt-4o"),
    Setting("MOCR_JUDGE_API_KEY_ENV", "judge_api_key_env", str, DEFAULT_API_KEY_ENV),
    Setting("MOCR_JUDGE_TIMEOUT", "judge_timeout", float, 120.0),
    Setting("MOCR_JUDGE_MAX_RETRIES", "judge_max_retries", int, 3),
    Setting("MOCR_JUDGE_BACKOFF_BASE", "judge_backoff_base", float, 1.0),
    Setting("MOCR_JUDGE_MAX_IN_FLIGHT", "judge_max_in_flight", int, 8),
    Setting("MOCR_JUDGE_RATE", "judge_rate", float, 0.0),
    Setting("MOCR_JUDGE_PROMPT", "prompt_path", str, str(DEFAULT_PROMPT_FILE)),
    Setting("MOCR_ELO_INITIAL", "elo_initial", float, 1000.0),
    Setting("MOCR_ELO_K", "elo_k", float, 32.0),
    Setting("MOCR_ELO_SCALE", "elo_scale", float, 400.0),
    Setting("MOCR_BOOTSTRAP_ITERATIONS", "iterations", int, 1000),
    Setting("MOCR_SEED", "seed", int, 0),
    Setting("MOCR_JOBS", "jobs", int, 1),
    Setting("MOCR_PAIRING", "pairing", str, "all-pairs"),
    Setting("MOCR_HASH_SIZE", "hash_size", int, 256),
    Setting("MOCR_PHASH_THRESHOLD", "phash_threshold", int, 6),
    Setting("MOCR_SAMPLE_TARGET", "sample_target", int, 1000),
    Setting("MOCR_SAMPLE_DOMAIN_CAP", "sample_domain_cap", float, 1.0),
    Setting("MOCR_SAMPLE_DOMAIN_CAPS", "sample_domain_caps", _caps, {}),
    Setting("MOCR_SAMPLE_QUANTILES", "sample_quantiles", _floats, (0.5,)),
    Setting("MOCR_SAMPLE_PROPORTIONS", "sample_proportions", _floats, (0.5, 0.5)),
    Setting("MOCR_LOG_LEVEL", "log_level", _level, "INFO"),
)
BY_KEY = {s.key: s for s in SETTINGS}
BY_ATTR = {s.attr: s for s in SETTINGS}


@dataclass(frozen=True)
class RunConfig:
    judge: JudgeEndpointConfig
    prompt_path: Path
    elo: EloConfig
    iterations: int
    seed: int
    jobs: int
    pairing: str
    hash_size: int
    phash_threshold: int
    sampling: SamplingSpec
    log_level: str = "INFO"
    sources: Mapping[str, str] = field(default_factory=dict, compare=False)

    def to_dict(self) -> Dict[str, Any]:
        """Resolved settings with the token redacted."""
        j = self.judge
        return {
            "judge": {
                "base_url": j.base_url, "path": j.path, "model": j.model,
                "api_key_env": j.api_key_env,
                "api_key": "***" if j.token() else None,
                "timeout": j.timeout, "max_retries": j.max_retries, "backoff_base": j.backoff_base,
                "max_in_flight": j.max_in_flight, "rate": j.rate,
            },
            "prompt_path": str(self.prompt_path),
            "elo": {"initial_rating": self.elo.initial_rating, "k_factor": self.elo.k_factor,
                    "scale": self.elo.scale},
            "iterations": self.iterations,
            "seed": self.seed,
            "jobs": self.jobs,
            "pairing": self.pairing,
            "hash_size": self.hash_size,
            "phash_threshold": self.phash_threshold,
            "sampling": {
                "target": self.sampling.target,
                "default_domain_cap": self.sampling.default_domain_cap,
                "domain_caps": dict(sorted(self.sampling.domain_caps.items())),
                "strata_quantiles": list(self.sampling.strata_quantiles),
                "strata_proportions": list(self.sampling.strata_proportions),
            },
            "log_level": self.log_level,
            "sources": dict(sorted(self.sources.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _unknown(keys, allowed_secret: str, origin: str, *, prefixed_only: bool) -> None:
    unknown = sorted(
        k for k in keys
        if (k.startswith(PREFIX) or not prefixed_only) and k not in BY_KEY and k != allowed_secret
    )
    if unknown:
        raise ConfigError(f"unknown configuration key(s) in {origin}: {', '.join(unknown)}")


def read_config_file(path: Union[str, Path]) -> Dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    return {k: v for k, v in dotenv_values(p).items() if v is not None}


def _parse(setting: Setting, value: Any, origin: str) -> Any:
    if not isinstance(value, str):
        return value
    try:
        return setting.parse(value)
    except ValueError as e:
        raise ConfigError(f"{setting.key}={value!r} from {origin}: {e}") from None


def resolve(
    flags: Optional[Mapping[str, Any]] = None,
    config_file: Union[str, Path, None] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Merge all sources. `flags` maps setting attrs to values; None means not given."""
    environ = dict(os.environ if environ is None else environ)
    file_values = read_config_file(config_file) if config_file else {}
    flags = {k: v for k, v in (flags or {}).items() if v is not None}
    for attr in flags:
        if attr not in BY_ATTR:
            raise ConfigError(f"unknown setting '{attr}'")

    # the token variable may itself be renamed, so resolve that name first
    key_env = flags.get("judge_api_key_env") or file_values.get("MOCR_JUDGE_API_KEY_ENV") \
        or environ.get("MOCR_JUDGE_API_KEY_ENV") or DEFAULT_API_KEY_ENV
    _unknown(file_values, key_env, f"config file {config_file}", prefixed_only=False)
    _unknown(environ, key_env, "environment", prefixed_only=True)

    values: Dict[str, Any] = {}
    sources: Dict[str, str] = {}
    for s in SETTINGS:
        if s.attr in flags:
            values[s.attr], sources[s.key] = _parse(s, flags[s.attr], "flag"), "flag"
        elif s.key in file_values:
            values[s.attr], sources[s.key] = _parse(s, file_values[s.key], "config file"), "file"
        elif s.key in environ:
            values[s.attr], sources[s.key] = _parse(s, environ[s.key], "environment"), "env"
        else:
            values[s.attr], sources[s.key] = s.default, "default"

    token = file_values.get(key_env) or environ.get(key_env) or None
    v = values
    try:
        judge = JudgeEndpointConfig(
            base_url=v["judge_base_url"], path=v["judge_path"], model=v["judge_model"],
            api_key_env=v["judge_api_key_env"], timeout=v["judge_timeout"],
            max_retries=v["judge_max_retries"], backoff_base=v["judge_backoff_base"],
            max_in_flight=v["judge_max_in_flight"], rate=v["judge_rate"], api_key=token,
        )
        elo_config = EloConfig(v["elo_initial"], v["elo_k"], v["elo_scale"])
        sampling = SamplingSpec(
            target=v["sample_target"], seed=v["seed"],
            default_domain_cap=v["sample_domain_cap"], domain_caps=dict(v["sample_domain_caps"]),
            strata_quantiles=tuple(v["sample_quantiles"]),
            strata_proportions=tuple(v["sample_proportions"]),
        )
    except (EloInputError, SamplingSpecError) as e:
        raise ConfigError(str(e)) from None

    for attr in ("iterations", "jobs", "hash_size"):
        if v[attr] < 1:
            raise ConfigError(f"{BY_ATTR[attr].key} must be >= 1 (got {v[attr]})")
    if not 0 <= v["phash_threshold"] <= 64:
        raise ConfigError(f"MOCR_PHASH_THRESHOLD must be within 0..64 (got {v['phash_threshold']})")

    return RunConfig(
        judge=judge,
        prompt_path=Path(v["prompt_path"]),
        elo=elo_config,
        iterations=v["iterations"],
        seed=v["seed"],
        jobs=v["jobs"],
        pairing=v["pairing"],
        hash_size=v["hash_size"],
        phash_threshold=v["phash_threshold"],
        sampling=sampling,
        log_level=v["log_level"],
        sources=sources,
    )


def load_environment() -> None:
    """Pull a working-directory .env into os.environ without overriding it."""
    load_dotenv(dotenv_path=Path.cwd() / ".env", override=False)
