import numpy as np
import pytest

from regfreq import pipeline
from regfreq.synth import RegionSpec, SynthSpec, generate_sites

# Three regions sharing kappa, distinct shapes, site-varying scale; JJA only.
HOMOGENEOUS_REGIONS = [
    RegionSpec(kappa=0.8, xi=0.05, sigma=(2.0, 8.0), n_sites=50),
    RegionSpec(kappa=0.8, xi=0.2, sigma=(2.0, 8.0), n_sites=50),
    RegionSpec(kappa=0.8, xi=0.4, sigma=(2.0, 8.0), n_sites=50),
]


def homogeneous_spec(seed: int = 1, regions=HOMOGENEOUS_REGIONS, years: int = 40) -> SynthSpec:
    return SynthSpec(regions=list(regions), years=years, seasons=["JJA"], seed=seed)


@pytest.fixture(scope="session")
def homogeneous_run():
    """Clustered and fitted synthetic homogeneous grid shared by the end-to-end checks."""
    spec = homogeneous_spec()
    sites, truth = generate_sites(spec)
    samples = pipeline.wet_samples(sites, "JJA")
    field, part = pipeline.cluster_season(samples, "JJA", 3)
    fit = pipeline.fit_season(samples, part.assignment, "JJA")
    return {"spec": spec, "sites": sites, "truth": truth, "samples": samples,
            "field": field, "partition": part, "fit": fit}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
