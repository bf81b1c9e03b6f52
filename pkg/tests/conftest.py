from __future__ import annotations

import pytest

from uefiforensics.forge import ForgedScenario, build_scenario, scenario_by_name


@pytest.fixture(scope="session")
def forged():
    """Builtin scenarios built once per session: forged('efiguard')."""
    cache: dict[tuple[str, int], ForgedScenario] = {}

    def get(name: str, seed: int = 0) -> ForgedScenario:
        key = (name, seed)
        if key not in cache:
            cache[key] = build_scenario(scenario_by_name(name), seed=seed)
        return cache[key]

    return get
