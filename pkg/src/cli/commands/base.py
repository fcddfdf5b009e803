"""
Shared input model and execution wrapper for the pipeline commands.
"""
from pathlib import Path
from typing import Any, Dict, List, Optional, Type

import structlog
from pydantic import BaseModel, Field, ValidationError, field_validator

from src.config import Settings, get_settings
from src.models.run import RunConfig, parse_override
from src.services.pipeline_service import ExperimentPipeline
from src.utils.observability import new_run_id, track_command

logger = structlog.get_logger(__name__)


class CommandInput(BaseModel):
    """Input schema shared by every pipeline command."""
    config: Optional[Path] = Field(None, description="Flat TOML run configuration; defaults apply when omitted")
    overrides: List[str] = Field(default_factory=list, description="key=value overrides applied after the file")

    @field_validator('overrides')
    @classmethod
    def validate_overrides(cls, v: List[str]) -> List[str]:
        for item in v:
            parse_override(item)
        return v

    def run_config(self) -> RunConfig:
        return RunConfig.from_file(self.config, self.overrides)


def error_result(error: Exception) -> Dict[str, Any]:
    """Map an exception onto the command result contract."""
    if isinstance(error, FileNotFoundError):
        error_type = "missing_input"
    elif isinstance(error, (ValidationError, ValueError)):
        error_type = "validation_error"
    else:
        error_type = "internal_error"
    return {"success": False, "error": str(error), "error_type": error_type}


def _jsonable(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


class PipelineCommand:
    """Base for CLI commands that drive one ExperimentPipeline."""

    name: str = ""
    description: str = ""
    input_model: Type[CommandInput] = CommandInput

    def __init__(self, settings: Optional[Settings] = None):
        self.settings = settings

    @property
    def input_schema(self) -> Dict[str, Any]:
        return self.input_model.model_json_schema()

    def run(self, pipeline: ExperimentPipeline, input_data: CommandInput) -> Dict[str, Any]:
        raise NotImplementedError

    def execute(self, data: Dict[str, Any]) -> Dict[str, Any]:
        """Run the command; failures come back as a result dict, never as an exception."""
        run_id = new_run_id()
        logger.info("Executing command", command=self.name, run_id=run_id)
        try:
            input_data = self.input_model(**data)
            pipeline = ExperimentPipeline(input_data.run_config(), self.settings or get_settings())
            result = self.run(pipeline, input_data)
        except Exception as e:
            result = error_result(e)
            log = logger.error if result["error_type"] == "internal_error" else logger.warning
            log("Command failed", command=self.name, error=str(e), error_type=result["error_type"],
                exc_info=result["error_type"] == "internal_error")
            track_command(self.name, "error")
            return result

        track_command(self.name, "success")
        logger.info("Command finished", command=self.name)
        return {"success": True, "command": self.name, "run_id": run_id, **_jsonable(result)}

    def get_schema(self) -> Dict[str, Any]:
        """Get command schema for help output."""
        return {
            "name": self.name,
            "description": self.description,
            "input_schema": self.input_schema,
        }
