
import numpy as np
import pytest

from mapdenoise import _core, mapsynth, noiselib


@pytest.fixture(params=sorted(_core.BACKENDS))
def kernels(request):
    """Each available kernel backend in turn."""
    return _core.BACKENDS[request.param]


@pytest.fixture
def use_backend(monkeypatch):
    """Swap the kernels used by diffengine/irfilter for the duration of a test."""
    def swap(name):
        impl = _core.BACKENDS[name]
        for fn in ("conv1d_forward", "conv1d_backward_input", "conv1d_backward_weight", "sosfilt"):
            monkeypatch.setattr(_core, fn, getattr(impl, fn))
    return swap


@pytest.fixture(scope="session")
def small_clean():
    return mapsynth.synth_dataset(n_patients=6, beats_per_patient=8, test_fraction=0.34, seed=3)


@pytest.fixture(scope="session")
def small_paired(small_clean):
    return noiselib.corrupt_dataset(small_clean, noiselib.default_plan(), seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---- end-to-end reference runs shared by the acceptance suite -------------

def _reference(tmp_path_factory, name, document=None):
    from mapdenoise.pipeline import PipelineConfig, run_pipeline

    import time

    cfg = PipelineConfig(document or {})
    start = time.perf_counter()
    result = run_pipeline(cfg, tmp_path_factory.mktemp(name))
    result["seconds"] = time.perf_counter() - start
    return result


@pytest.fixture(scope="session")
def reference_run(tmp_path_factory):
    """The default configuration, end to end."""
    return _reference(tmp_path_factory, "reference")


@pytest.fixture(scope="session")
def reference_rerun(tmp_path_factory):
    """A second, independent run of the default configuration."""
    return _reference(tmp_path_factory, "reference_again")


@pytest.fixture(scope="session")
def reference_run_no_ep(tmp_path_factory):
    """The default configuration with EP noise dropped from the corruption plan."""
    plan = [s.to_json() for s in noiselib.default_plan(include_ep=False)]
    return _reference(tmp_path_factory, "reference_no_ep", {"noise": {"plan": plan}})


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(config.acceptance_lines):
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance(request, capsys):
    """Record and print one pass/fail line for an acceptance criterion."""
    def report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.acceptance_lines.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return report
