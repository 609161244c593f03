"""
Configuration for the defogging laboratory

Two layers:
- Settings: process-wide knobs read from the environment / .env (pydantic-settings)
- key=value config files (``--config``) that override the typed section models
  (SimConfig, ModelConfig, TrainConfig, EvalConfig) field by field
"""
import logging
from pathlib import Path
from typing import Dict, Any, Optional

from dotenv import load_dotenv, dotenv_values
from pydantic_settings import BaseSettings, SettingsConfigDict

# Load environment variables
load_dotenv()

CONFIG_SECTIONS = ("sim", "model", "train", "eval")


class Settings(BaseSettings):
    """Environment-level settings shared by every entry point"""

    model_config = SettingsConfigDict(env_file=".env", extra="ignore")

    log_level: str = "INFO"
    defog_data_dir: str = "data"
    defog_n_jobs: int = 1
    defog_precision: str = "float32"
    defog_run_acceptance: bool = False


settings = Settings()


def configure_logging(level: Optional[str] = None) -> None:
    """Configure root logging once per entry point"""
    logging.basicConfig(
        level=getattr(logging, (level or settings.log_level).upper(), logging.INFO),
        format='%(asctime)s - %(levelname)s - %(message)s'
    )


def load_config_file(path: Optional[str]) -> Dict[str, Dict[str, Any]]:
    """
    Parse a key=value config file into per-section override dicts

    Keys must be prefixed by a section, e.g. ``model.encoder_kind=CL``.
    Values stay strings; pydantic coerces them when the section model is built.

    Args:
        path: config file path, or None for no overrides

    Returns:
        dict: {section: {field: value}}
    """
    sections: Dict[str, Dict[str, Any]] = {name: {} for name in CONFIG_SECTIONS}
    if not path:
        return sections

    config_path = Path(path)
    if not config_path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")

    for key, value in dotenv_values(config_path).items():
        section, _, field = key.partition(".")
        if not field or section not in sections:
            raise ValueError(f"Config key '{key}' must be '<section>.<field>' with section in {CONFIG_SECTIONS}")
        sections[section][field] = value

    return sections


def build_section(model_cls, overrides: Dict[str, Any], **cli_values):
    """
    Build a pydantic section model from file overrides plus CLI values

    CLI values that are None are ignored so that file values survive.
    """
    values = dict(overrides)
    values.update({k: v for k, v in cli_values.items() if v is not None})
    return model_cls(**values)


def data_dir() -> Path:
    """Default data directory (DEFOG_DATA_DIR)"""
    return Path(settings.defog_data_dir)
