import os

import pytest
from hypothesis import settings

from ruglab.market_data import assemble_histories, filter_corpus, split_by_source
from ruglab.synth import SynthConfig, generate

settings.register_profile("default", max_examples=60, deadline=None)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def small_corpus():
    return generate(SynthConfig(n_tokens=240, seed=11))


@pytest.fixture(scope="session")
def small_histories(small_corpus):
    c = small_corpus
    return filter_corpus(assemble_histories(c.trades, c.pools, c.metas))


@pytest.fixture(scope="session")
def small_by_source(small_histories):
    return split_by_source(small_histories)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory, small_corpus):
    return small_corpus.write(tmp_path_factory.mktemp("corpus"))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
