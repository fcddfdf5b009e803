"""
Registry of the workbench CLI commands.
"""
from typing import Dict, List, Optional

import structlog

from src.cli.commands.analyze import AnalyzeCommand
from src.cli.commands.base import PipelineCommand
from src.cli.commands.evaluate import EvaluateCommand
from src.cli.commands.preprocess import PreprocessCommand
from src.cli.commands.reproduce_table import ReproduceTableCommand
from src.cli.commands.train import TrainCommand
from src.config import Settings

logger = structlog.get_logger(__name__)

COMMAND_CLASSES = [
    PreprocessCommand,
    TrainCommand,
    EvaluateCommand,
    AnalyzeCommand,
    ReproduceTableCommand,
]


class CommandRegistry:
    """Command instances keyed by their CLI verb."""

    def __init__(self, settings: Optional[Settings] = None):
        self.commands: Dict[str, PipelineCommand] = {}
        for command_class in COMMAND_CLASSES:
            command = command_class(settings)
            self.commands[command.name] = command
            logger.debug("Registered command", command=command.name)

    def __contains__(self, name: str) -> bool:
        return name in self.commands

    def get(self, name: str) -> PipelineCommand:
        if name not in self.commands:
            raise KeyError(f"Unknown command: {name}")
        return self.commands[name]

    def names(self) -> List[str]:
        return list(self.commands)

    def schemas(self) -> List[Dict]:
        return [command.get_schema() for command in self.commands.values()]
