import pytest
from hypothesis import HealthCheck, settings

from migplan import io
from migplan.fixtures import day_services, fixture_profiles, data_path, linear_test_profile, night_services
from migplan.model import ServiceSpec, Workload

settings.register_profile("ci", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=60)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def profiles():
    return fixture_profiles()


@pytest.fixture(scope="session")
def day(profiles):
    return Workload(day_services(), profiles)


@pytest.fixture(scope="session")
def night(profiles):
    return Workload(night_services(), profiles)


@pytest.fixture(scope="session")
def mixed24(profiles):
    return Workload(io.slos_from(io.read(data_path("mixed24_slos.json"), "slos")), profiles)


@pytest.fixture
def toy():
    """One service on the linear toy profile (50/80/105/120/140 rps)."""
    def make(rps, latency=100.0, n=1):
        p = {"toy": linear_test_profile()}
        return Workload([ServiceSpec(f"svc-{k}", "toy", rps, latency) for k in range(n)], p)
    return make


def random_workload(rng, n, profiles, dist="lognormal"):
    from migplan.bench import gen_workload

    names = sorted(profiles)
    models = [names[int(k)] for k in rng.choice(len(names), size=min(3, len(names)), replace=False)]
    params = {"mu_log": 7.6, "sigma_log": 0.7} if dist == "lognormal" else {"mu": 2500.0, "sigma": 1200.0}
    spec = gen_workload(n, dist, params, models=models, seed=int(rng.integers(1 << 30)))
    return spec.workload(profiles)


def random_pair(rng, n, profiles, dist="lognormal"):
    """Two workloads over the same services and models with independent demands."""
    from dataclasses import replace

    a = random_workload(rng, n, profiles, dist)
    b = random_workload(rng, n, profiles, dist)
    models = {s.service_id: s.model_name for s in a.services}
    return a, Workload([replace(s, model_name=models[s.service_id]) for s in b.services], profiles)


_VERDICTS: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""
    def record(label, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {label}" + (f"  ({detail})" if detail else "")
        _VERDICTS.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
