"""
CLI command that measures feature quality of trained dictionaries.
"""
from typing import Any, Dict

from src.cli.commands.base import CommandInput, PipelineCommand
from src.services.pipeline_service import ExperimentPipeline


class AnalyzeCommand(PipelineCommand):
    """Sparseness, coherence, reconstruction error, weight histograms and filter sheets."""

    name = "analyze"
    description = "Analyze trained dictionaries on the test split and write per-run and aggregated reports"

    def run(self, pipeline: ExperimentPipeline, input_data: CommandInput) -> Dict[str, Any]:
        result = pipeline.analyze()
        result["reports"] = pipeline.output_dir / "analysis"
        return result
