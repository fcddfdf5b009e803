"""
CLI command that trains the feature dictionaries.
"""
from typing import Any, Dict

from src.cli.commands.base import CommandInput, PipelineCommand
from src.services.pipeline_service import ExperimentPipeline


class TrainCommand(PipelineCommand):
    name = "train"
    description = "Train n_runs SNN or AE dictionaries on random patches of the coded training split"

    def run(self, pipeline: ExperimentPipeline, input_data: CommandInput) -> Dict[str, Any]:
        paths = pipeline.train()
        return {
            "dictionaries": [pipeline.dictionary_path(i) for i in range(pipeline.config.n_runs)],
            "outputs": paths,
            "seeds": pipeline.seeds,
            "manifest": pipeline.output_dir / "manifest-train.json",
        }
