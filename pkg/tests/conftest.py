import os

import pytest
from hypothesis import HealthCheck, settings

from jsporacle.instances import parse_standard

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=400, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

TINY_TEXT = "2 2\n0 3 1 2\n1 2 0 4\n"


@pytest.fixture
def tiny():
    """J1: (M1,3)->(M2,2); J2: (M2,2)->(M1,4). Optimum 7."""
    return parse_standard(TINY_TEXT, id="tiny2x2")


@pytest.fixture
def tiny_opt_perms(tiny):
    j = tiny.op_index
    return [[j((0, 0)), j((1, 1))], [j((1, 0)), j((0, 1))]]


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Three labelled 5x5 instances: (samples, instances, dataset path)."""
    from jsporacle.instances import GenSpec, generate
    from jsporacle.labeling import build_dataset, load_dataset

    path = tmp_path_factory.mktemp("small") / "d.jsonl"
    build_dataset([generate(GenSpec(5, 5, seed=k)) for k in range(3)], path, per_machine_random=8, seed=0)
    samples, insts = load_dataset(path)
    return samples, insts, path


VERDICTS: dict[int, str] = {}


def record_verdict(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[k])
