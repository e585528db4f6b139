from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


SCHEMES: tuple[str, ...] = ("selective", "adaptive")


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="IBPRE_",
        env_file=(".env",),
        env_file_encoding="utf-8",
        extra="ignore",
    )

    APP_NAME: str = "ibpre"
    APP_VERSION: str = "0.1.0"

    SEED: str | None = None

    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "json"

    DEFAULT_SCHEME: str = "selective"
    DEFAULT_DIMENSION: int = Field(32, ge=1)
    DEFAULT_IDENTITY_BITS: int = Field(128, ge=1)
    SAFETY_MARGIN: float = Field(2.0, ge=1.0)

    HARNESS_TRIALS: int = Field(10_000, ge=0)
    HARNESS_WORKERS: int = Field(1, ge=1)
    METRICS_FILE: str | None = None

    @field_validator("SEED", mode="before")
    @classmethod
    def _normalise_seed(cls, value: object) -> str | None:
        """Accept hex seeds with or without a ``0x`` prefix."""

        if value is None:
            return None
        text = str(value).strip().lower()
        if not text:
            return None
        if text.startswith("0x"):
            text = text[2:]
        try:
            bytes.fromhex(text if len(text) % 2 == 0 else "0" + text)
        except ValueError as exc:
            raise ValueError("IBPRE_SEED must be a hex string") from exc
        return text

    @field_validator("DEFAULT_SCHEME", mode="before")
    @classmethod
    def _normalise_scheme(cls, value: object) -> str:
        text = str(value or "selective").strip().lower()
        if text not in SCHEMES:
            raise ValueError(f"DEFAULT_SCHEME must be one of {', '.join(SCHEMES)}")
        return text

    @field_validator("LOG_FORMAT", mode="before")
    @classmethod
    def _normalise_log_format(cls, value: object) -> str:
        text = str(value or "json").strip().lower()
        return text if text in {"json", "plain"} else "json"


settings = Settings()
