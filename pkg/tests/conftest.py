import numpy as np
import pytest

from nvsurv.synth import ObjectSpec, SceneConfig, synthesize_scene


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def car_scene():
    """One car crossing left to right at 100 px/s, no noise."""
    cfg = SceneConfig(
        duration=1_000_000,
        objects=(ObjectSpec("car", 44, 19, 100.0, 0, 80, start_x=20),),
        edge_event_rate=200.0,
        noise_rate=0.0,
        rng_seed=5,
    )
    return cfg, synthesize_scene(cfg)


@pytest.fixture(scope="session")
def small_scenes():
    """Three short scenes with two tracks of every class each."""
    from nvsurv.synth import ScenePlan, plan_scene

    plan = ScenePlan(tracks_per_class={"car": 2, "bus": 2, "truck_van": 2, "bike": 2},
                     noise_rate=0.5)
    return [synthesize_scene(plan_scene(plan, seed=50 + i, track_id_start=100 * i))
            for i in range(3)]


_CRITERIA = []


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    detail = dict(item.user_properties).get("detail", "")
    ok = call.excinfo is None
    if not ok:
        error = call.excinfo.exconly().splitlines()[0][:200]
        detail = f"{detail} | {error}" if detail else error
    _CRITERIA.append((marker.args[0], ok, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
