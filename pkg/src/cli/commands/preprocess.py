"""
CLI command that codes and caches both dataset splits.
"""
from typing import Any, Dict

import structlog

from src.cli.commands.base import CommandInput, PipelineCommand
from src.models.image import Split
from src.services.pipeline_service import ExperimentPipeline

logger = structlog.get_logger(__name__)


class PreprocessCommand(PipelineCommand):
    """Color-transform, DoG-filter and cache every image of both splits."""

    name = "preprocess"
    description = "Code the train and test splits into cached channel stacks (skips valid caches)"

    def run(self, pipeline: ExperimentPipeline, input_data: CommandInput) -> Dict[str, Any]:
        caches = pipeline.preprocess()
        images = {split.value: len(pipeline.coded(split)) for split in (Split.TRAIN, Split.TEST)}
        pipeline.outputs.extend(caches.values())
        manifest = pipeline.write_manifest("preprocess", notes={"images": images})
        logger.info("Splits cached", **images)
        return {"caches": caches, "images": images, "manifest": manifest}
