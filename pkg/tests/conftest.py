import pytest

from multiacct.graphcore import write_activities
from multiacct.pipeline import PipelineConfig
from multiacct.synth import SynthConfig, generate_activity_log

SMALL = SynthConfig(n_users=40, activities_per_user=120, n_pages=200, n_topics=6,
                    n_communities=2, seed=1)

FAST_EMBED = {"embed.d": 16, "embed.num_walks": 4, "embed.walk_length": 20, "embed.window": 5}


@pytest.fixture(scope="session")
def small_log(tmp_path_factory):
    """User-level log: 40 users, about 120 activities each."""
    path = tmp_path_factory.mktemp("data") / "log.csv"
    write_activities(generate_activity_log(SMALL), path, with_user=True)
    return path


@pytest.fixture
def small_config(small_log, tmp_path):
    def make(method="semi-embed", **changes):
        cfg = PipelineConfig(inputs=[str(small_log)], method=method, output=str(tmp_path / "out"))
        base = {"simulate.s": 4, "cluster.c": 2, **FAST_EMBED}
        base.update(changes)
        return cfg.replace(**base)

    return make


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
