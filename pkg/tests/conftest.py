import datetime as dt

import pytest

from nutriloop.agents import load_default_catalog, load_default_policy_table
from nutriloop.backends import MockVisionFixture, load_default_meal_fixture
from nutriloop.dri import build_default_reference
from nutriloop.nutrients import NutrientVector, load_default_schema
from nutriloop.records import MealHabit, UserProfile
from nutriloop.store import FileStateStore


@pytest.fixture(scope="session")
def schema():
    return load_default_schema()


@pytest.fixture(scope="session")
def reference():
    return build_default_reference()


@pytest.fixture(scope="session")
def catalog():
    return load_default_catalog()


@pytest.fixture(scope="session")
def policy_table():
    return load_default_policy_table()


@pytest.fixture(scope="session")
def meal_fixture() -> MockVisionFixture:
    return load_default_meal_fixture()


@pytest.fixture
def profile():
    return UserProfile(
        user_id="u1",
        sex="female",
        life_stage="19-30 y",
        cuisine_frequencies={"british": 0.6, "chinese": 0.3, "american": 0.1},
        allergies=set(),
        meal_habits=[
            MealHabit("breakfast", 0.25),
            MealHabit("lunch", 0.4),
            MealHabit("dinner", 0.35),
        ],
    )


@pytest.fixture
def store(tmp_path, schema, reference):
    s = FileStateStore(tmp_path / "store", schema, reference)
    yield s
    s.close()


@pytest.fixture
def today():
    return dt.date(2025, 6, 2)


def nv(schema, **amounts):
    return NutrientVector.from_dict(schema, amounts)
