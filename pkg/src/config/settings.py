from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

from dotenv import load_dotenv

from src.exceptions import InvalidConfigError


@dataclass(frozen=True)
class Settings:
    output_dir: str
    threads: int
    log_level: str
    log_file: Optional[str]
    seed: int


def _int_from_env(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise InvalidConfigError(f"Invalid {name}: {raw}")


def get_settings() -> Settings:
    # Load .env if present
    load_dotenv(override=False)

    threads = _int_from_env("IGI_THREADS", os.cpu_count() or 1)
    if threads < 1:
        raise InvalidConfigError(f"Invalid IGI_THREADS: {threads}")

    seed = _int_from_env("IGI_SEED", 0)
    if seed < 0:
        raise InvalidConfigError(f"Invalid IGI_SEED: {seed}")

    return Settings(
        output_dir=os.getenv("IGI_OUTPUT_DIR", "runs"),
        threads=threads,
        log_level=os.getenv("IGI_LOG_LEVEL", "INFO"),
        log_file=os.getenv("IGI_LOG_FILE") or None,
        seed=seed,
    )
