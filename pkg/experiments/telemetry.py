"""
Runtime settings and logging setup
Environment knobs under the RANDSPLIT_ prefix
"""

from typing import Literal, Optional
import logging

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict
from pythonjsonlogger import jsonlogger

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

LOG_LEVELS = {
    "off": logging.WARNING,
    "step": logging.INFO,
    "debug": logging.DEBUG,
}


class RuntimeSettings(BaseSettings):
    """Process-level settings read from the environment (and .env)"""

    model_config = SettingsConfigDict(env_prefix="RANDSPLIT_", env_file=".env", extra="ignore")

    log: Literal["off", "step", "debug"] = Field(default="off", description="Diagnostic verbosity")
    log_format: Literal["text", "json"] = Field(default="text")
    threads: Optional[int] = Field(default=None, ge=1, description="Worker processes")
    step_log: Optional[str] = Field(default=None, description="Per-step CSV path (log=step)")

    @property
    def step_logging(self) -> bool:
        return self.log in ("step", "debug")


def configure_logging(settings: Optional[RuntimeSettings] = None) -> RuntimeSettings:
    """Configure the root logger from RANDSPLIT_LOG and RANDSPLIT_LOG_FORMAT"""
    settings = settings or RuntimeSettings()
    level = LOG_LEVELS[settings.log]
    if settings.log_format == "json":
        handler = logging.StreamHandler()
        handler.setFormatter(jsonlogger.JsonFormatter(LOG_FORMAT))
        logging.basicConfig(level=level, handlers=[handler], force=True)
    else:
        logging.basicConfig(level=level, format=LOG_FORMAT, force=True)
    return settings
