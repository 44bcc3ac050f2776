import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from demoreplay.kinematics import default_robot

settings.register_profile(
    "repo", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")

ACCEPTANCE = []


def record(criterion, ok, detail):
    """Log one acceptance line; the summary is printed at the end of the run."""
    ACCEPTANCE.append((criterion, bool(ok), detail))
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}")


@pytest.fixture(scope="session")
def robot():
    return default_robot()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def paced_spec(rate=100.0, seed=0, trial_jitter=0.5):
    from demoreplay.synth import SynthSpec, demo_waypoints

    return SynthSpec(
        demo_waypoints(duration=25.0), noise_sigma_pos=2e-4, rate=rate, n_trials=4,
        trial_jitter=trial_jitter, seed=seed, trial_sigma_pos=5e-3, trial_sigma_rot=1e-2,
        trial_sigma_aperture=2.5e-3,
    )


@pytest.fixture(scope="session")
def paced_fit():
    """Four paced 25 s trials at 100 Hz and their 16-component mixture."""
    from demoreplay.demo_stats import build_dataset, em_fit
    from demoreplay.synth import gen_paced_trials

    spec = paced_spec()
    trials = gen_paced_trials(spec)
    mixture, history = em_fit(build_dataset(trials), 16, seed=0, return_history=True)
    return spec, trials, mixture, history
