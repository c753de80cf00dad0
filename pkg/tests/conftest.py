import warnings

import pytest

from evcgan import dsp
from evcgan.cli import run_extract
from evcgan.toy import make_toy_corpus
from evcgan.trainer import TrainingRunConfig

TINY_MODELS = {
    "generator": {"channels": 8, "hidden": 16, "heads": 2, "kernel": 5, "post_kernel": 5,
                  "gated_repeat": 1, "residual_repeat": 1, "norm": "layer", "input_skip": True},
    "discriminator": {"channels": [2, 4, 4], "strides": [[2, 2], [2, 2], [2, 2]]},
    "f0_discriminator": {"channels": [4, 8, 8]},
}


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """20-utterance toy corpus with its feature caches extracted once."""
    root = tmp_path_factory.mktemp("toy")
    manifest = make_toy_corpus(root / "wav", n_per_emotion=10, seed=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", dsp.BoundaryWarning)
        report = run_extract(manifest, root / "cache", workers=2)
    assert not report["errors"]
    return {"root": root, "manifest": manifest, "cache": root / "cache", "report": report}


@pytest.fixture
def tiny_config(toy_corpus, tmp_path):
    def make(**kw):
        base = dict(manifest=str(toy_corpus["manifest"]), cache_dir=str(toy_corpus["cache"]),
                    run_dir=str(tmp_path / "run"), max_length_s=1.0, epochs_per_block=2,
                    batch_size=1, steps_per_epoch=2, lr=2e-3, **TINY_MODELS)
        base.update(kw)
        return TrainingRunConfig.from_dict(base)
    return make


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(acceptance_log.LINES):
            terminalreporter.write_line(acceptance_log.LINES[n])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    name = item.name
    if report.when == "call" and report.failed and name.startswith("test_criterion_"):
        import acceptance_log

        number = int(name.split("_")[2])
        if number not in acceptance_log.LINES:
            acceptance_log.record(number, False, f"raised {call.excinfo.typename}: {call.excinfo.value}")
