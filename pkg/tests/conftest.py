import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ROOT = Path(__file__).resolve().parents[1]
SPECS = ROOT / "specs"
FIXTURES = Path(__file__).parent / "fixtures"

# (criterion id, title, passed, detail) recorded by the acceptance suite
ACCEPTANCE: list[tuple[str, str, bool, str]] = []


def record(cid: str, title: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE.append((cid, title, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid, title, ok, detail in sorted(ACCEPTANCE, key=lambda r: int(r[0].lstrip("AC"))):
        line = f"{'PASS' if ok else 'FAIL'} {cid} {title}"
        if detail:
            line += f" | {detail}"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_design():
    from lclogit.design import DesignConfig, generate_design

    return generate_design(DesignConfig())


@pytest.fixture(scope="session")
def reference_spec():
    from lclogit.model_spec import fold_redundant_terms, load_spec

    return fold_redundant_terms(load_spec(SPECS / "table4.spec"))


@pytest.fixture(scope="session")
def shiraz_generators():
    from lclogit.simulate import load_covariate_generators

    return load_covariate_generators(SPECS / "shiraz_covariates.spec")
