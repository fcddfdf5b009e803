"""
CLI command that runs every cell of a named result table.
"""
from typing import Any, Dict

from pydantic import Field, field_validator

from src.cli.commands.base import CommandInput, PipelineCommand
from src.services.pipeline_service import TABLES, ExperimentPipeline, reproduce_table


class ReproduceTableInput(CommandInput):
    """Input schema for reproduce-table."""
    table: str = Field(..., description=f"Table to reproduce, one of: {', '.join(TABLES)}")

    @field_validator('table')
    @classmethod
    def validate_table(cls, v: str) -> str:
        if v not in TABLES:
            raise ValueError(f"Unknown table {v!r}; choose from {sorted(TABLES)}")
        return v


class ReproduceTableCommand(PipelineCommand):
    """
    Expand a table name into its configuration grid and run preprocess, train
    and evaluate (or analyze) for each cell. The config file and overrides set
    the shared base: dataset, n_runs, n_features, seeds and the like.
    """

    name = "reproduce-table"
    description = "Run the configuration grid of a named result table and write one CSV with mean and std per cell"
    input_model = ReproduceTableInput

    def run(self, pipeline: ExperimentPipeline, input_data: ReproduceTableInput) -> Dict[str, Any]:  # type: ignore[override]
        spec = TABLES[input_data.table]
        result = reproduce_table(input_data.table, pipeline.config, pipeline.settings)
        return {"title": spec.title, "metric": spec.metric, **result}
