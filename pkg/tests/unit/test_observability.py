"""
Unit tests for stage timing, run ids and the metrics textfile.
"""
import pytest

from src.utils.observability import (
    REGISTRY,
    new_run_id,
    run_id_var,
    track_command,
    track_stage,
    write_metrics,
)


def _stage_count(stage: str) -> float:
    return REGISTRY.get_sample_value("workbench_stage_duration_seconds_count", {"stage": stage}) or 0.0


class TestTrackStage:
    """Test cases for track_stage."""

    def test_records_timing(self):
        """Test that a completed stage lands in the timings dict and histogram."""
        timings = {}
        before = _stage_count("unit-ok")

        with track_stage("unit-ok", timings):
            pass
        with track_stage("unit-ok", timings):
            pass

        assert timings["unit-ok"] >= 0.0
        assert _stage_count("unit-ok") == before + 2

    def test_failure_is_not_timed(self):
        """Test that a failing stage re-raises and records nothing."""
        timings = {}
        before = _stage_count("unit-fail")

        with pytest.raises(RuntimeError):
            with track_stage("unit-fail", timings):
                raise RuntimeError("boom")

        assert "unit-fail" not in timings
        assert _stage_count("unit-fail") == before


class TestRunContext:
    """Test cases for run ids and command counters."""

    def test_new_run_id(self):
        """Test that each run id is fresh and bound to the context."""
        first, second = new_run_id(), new_run_id()
        assert first != second
        assert run_id_var.get() == second
        assert len(second) == 12

    def test_track_command(self):
        """Test the command outcome counter."""
        labels = {"command": "unit", "status": "error"}
        before = REGISTRY.get_sample_value("workbench_command_runs_total", labels) or 0.0
        track_command("unit", "error")
        assert REGISTRY.get_sample_value("workbench_command_runs_total", labels) == before + 1

    def test_write_metrics(self, tmp_path):
        """Test the Prometheus textfile dump."""
        track_command("unit-file")
        path = tmp_path / "nested" / "metrics.prom"

        write_metrics(path)

        text = path.read_text()
        assert "workbench_command_runs_total" in text
        assert 'command="unit-file"' in text
        assert "# TYPE workbench_stage_duration_seconds histogram" in text
