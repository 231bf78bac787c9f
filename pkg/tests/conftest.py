import pytest

from tarnn.cli import main


@pytest.fixture
def run_cli(monkeypatch, tmp_path):
    """Run the CLI in-process from inside ``tmp_path``; returns the exit code."""
    monkeypatch.chdir(tmp_path)

    def run(*argv):
        return main([str(a) for a in argv])

    return run


@pytest.fixture
def small_run(run_cli, tmp_path):
    """A generated dataset plus one trained TA-RNN (m=3), shared by the CLI tests."""
    assert run_cli("generate", "--patients", 120, "--seed", 3, "--preset", "separable", "--out", "data.jsonl") == 0
    assert run_cli("train", "--data", "data.jsonl", "--m", 3, "--n", 1, "--epochs", 5, "--batch-size", 16,
                   "--hidden", 4, "--mlp-hidden", 4, "--out-dir", "run") == 0
    return tmp_path


ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: call with (ok, detail) then assert on ok."""
    name = request.node.name.removeprefix("test_")

    def record(ok: bool, detail: str) -> bool:
        ACCEPTANCE[name] = (bool(ok), detail)
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
