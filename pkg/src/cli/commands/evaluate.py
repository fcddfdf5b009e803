"""
CLI command that classifies the test split with trained dictionaries.
"""
from typing import Any, Dict

from src.cli.commands.base import CommandInput, PipelineCommand
from src.services.pipeline_service import ExperimentPipeline


class EvaluateCommand(PipelineCommand):
    name = "evaluate"
    description = "Build pooled descriptors, train the linear SVM and report test accuracy (mean and std over runs)"

    def run(self, pipeline: ExperimentPipeline, input_data: CommandInput) -> Dict[str, Any]:
        result = pipeline.evaluate()
        result["manifest"] = pipeline.output_dir / "manifest-evaluate.json"
        return result
