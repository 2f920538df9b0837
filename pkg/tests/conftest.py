import pytest

from xqlparse.corpus import load_dataset
from xqlparse.embeddings import MockEmbeddingProvider
from xqlparse.evaluation import resolve_dataset
from xqlparse.query_language import load_bundled_registry
from xqlparse.tokenizer import MockTokenizer

_criteria: dict[int, list[tuple[str, str]]] = {}


@pytest.fixture(scope="session")
def coxql():
    return load_bundled_registry("coxql")


@pytest.fixture(scope="session")
def compass():
    return load_bundled_registry("compass")


@pytest.fixture(scope="session")
def tok(coxql):
    return MockTokenizer.for_registry(coxql)


@pytest.fixture(scope="session")
def mock_provider():
    return MockEmbeddingProvider()


@pytest.fixture(scope="session")
def demo_coxql(coxql):
    return load_dataset(resolve_dataset("demo"), "coxql", coxql)


@pytest.fixture(scope="session")
def demo_compass(compass):
    return load_dataset(resolve_dataset("demo"), "compass", compass)


def pytest_runtest_logreport(report):
    marker = report.keywords.get("criterion") if hasattr(report, "keywords") else None
    if marker is None:
        return
    num = getattr(report, "_criterion", None)
    if num is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
        _criteria.setdefault(num, []).append((report.nodeid.split("::")[-1], outcome))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        rep._criterion = mark.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        results = _criteria[num]
        outcomes = {o for _, o in results}
        status = "FAIL" if "FAIL" in outcomes else ("PASS" if "PASS" in outcomes else "SKIP")
        names = ", ".join(n for n, _ in results)
        terminalreporter.write_line(f"criterion {num:>2}: {status}  ({names})")
