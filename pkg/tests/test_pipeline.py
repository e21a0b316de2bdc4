"""Detect -> root-cause -> fix loop: convergence, determinism, reporting."""

import json

import jsonschema
import pytest
from importlib import resources

from hileak.emulator import ExperimentSpec
from hileak.pipeline import (DESK_SCHEDULE, IterationRecord, PipelineResult,
                             _iteration_seed, report, run_loop)

SCHEMA = json.loads(resources.files("hileak")
                    .joinpath("data/report_schema.json").read_text())


@pytest.fixture(scope="module")
def toy2_run(model):
    import conftest
    from hileak.asm import parse_program
    program = parse_program(
        resources.files("hileak").joinpath("kernels/toy2.s").read_text())
    spec = ExperimentSpec(kernel=program, order=2, seed=7)
    return program, run_loop(spec, model, schedule=[20_000, 40_000],
                             threads=4)


class TestLoop:
    def test_toy2_converges_with_three_insertions(self, toy2, toy2_fixed,
                                                  toy2_run):
        program, result = toy2_run
        assert result.clean
        assert result.residual == []
        assert len(result.final_program) == len(toy2) + 3
        assert result.final_program == toy2_fixed

    def test_iteration_accounting(self, toy2_run):
        _, result = toy2_run
        first = result.records[0]
        assert first.leaks_found == first.leaks_fixed == 1
        assert first.leaks_remaining == 0
        assert sorted(first.actions) == ["MEMORY_WIPE@22", "PIPELINE_FLUSH@22"]
        last = result.records[-1]
        assert last.leaks_found == 0
        assert last.n_traces == 40_000

    def test_determinism(self, toy2, model, toy2_run):
        _, first = toy2_run
        spec = ExperimentSpec(kernel=toy2, order=2, seed=7)
        again = run_loop(spec, model, schedule=[20_000, 40_000], threads=1)
        assert again.final_program.emit() == first.final_program.emit()
        assert [r.leaks_found for r in again.records] == \
            [r.leaks_found for r in first.records]
        assert again.threshold == first.threshold

    def test_leak_free_kernel_single_pass(self, toy2_fixed, model):
        spec = ExperimentSpec(kernel=toy2_fixed, order=2, seed=3)
        result = run_loop(spec, model, schedule=[20_000])
        assert result.clean
        assert len(result.records) == 1
        assert result.records[0].actions == []
        assert result.final_program == toy2_fixed

    def test_early_stop_output_equals_input(self, toy2_fixed, model):
        spec = ExperimentSpec(kernel=toy2_fixed, order=2, seed=4)
        result = run_loop(spec, model, schedule=[10_000, 20_000])
        assert result.clean
        assert result.final_program is spec.kernel

    def test_residual_on_unfixable_kernel(self, model):
        from hileak.asm import parse_program
        program = parse_program(
            resources.files("hileak").joinpath("kernels/value_leak.s").read_text())
        spec = ExperimentSpec(kernel=program, order=2, seed=7)
        result = run_loop(spec, model, schedule=[20_000], threads=4)
        assert not result.clean
        assert result.residual
        assert all(c["method"] in ("MONTE_CARLO", "ELIMINATION", "UNRESOLVED")
                   for c in result.residual)

    def test_schedule_validation(self, toy2, model):
        spec = ExperimentSpec(kernel=toy2, order=2, seed=1)
        with pytest.raises(ValueError):
            run_loop(spec, model, schedule=[])
        with pytest.raises(ValueError):
            run_loop(spec, model, schedule=[100, 100])
        with pytest.raises(ValueError):
            run_loop(spec, model, schedule=[200, 100])

    def test_iteration_seeds_distinct(self):
        seeds = {_iteration_seed(7, i) for i in range(50)}
        assert len(seeds) == 50
        assert _iteration_seed(7, 3) == _iteration_seed(7, 3)
        assert _iteration_seed(7, 3) != _iteration_seed(8, 3)


class TestReport:
    def test_bundle_and_schema(self, toy2, toy2_run, tmp_path):
        program, result = toy2_run
        summary = report(result, tmp_path, program, "toy2")
        jsonschema.validate(summary, SCHEMA)
        for name in ("toy2_fixed.s", "heatmap_initial.csv", "heatmap_final.csv",
                     "heatmap_initial.pgm", "heatmap_final.pgm",
                     "overhead.txt", "summary.json"):
            assert (tmp_path / name).exists(), name
        on_disk = json.loads((tmp_path / "summary.json").read_text())
        jsonschema.validate(on_disk, SCHEMA)
        assert on_disk["clean"] is True
        assert on_disk["instructions_after"] == on_disk["instructions_before"] + 3
        assert on_disk["overhead"]["cycles_after"] > on_disk["overhead"]["cycles_before"]

    def test_empty_run_report_is_valid(self, toy2_fixed, model, tmp_path):
        spec = ExperimentSpec(kernel=toy2_fixed, order=2, seed=5)
        result = run_loop(spec, model, schedule=[10_000])
        summary = report(result, tmp_path, toy2_fixed, "clean_kernel")
        jsonschema.validate(summary, SCHEMA)
        assert summary["causes"] == []
        assert summary["overhead"]["increase_percent"] == 0.0

    def test_desk_schedule_is_increasing(self):
        assert list(DESK_SCHEDULE) == sorted(set(DESK_SCHEDULE))
        assert DESK_SCHEDULE[0] >= 1000
