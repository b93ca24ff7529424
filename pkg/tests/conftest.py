from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from attrisk.cedata import CE_COLUMNS, PLANS, ce_plan, make_ce_like
from attrisk.schema import ColumnSchema, Dataset, ModelSpec, SynthesisPlan, validate_plan, write_dataset


def reference_instance(seed: int = 20240611):
    """Frozen 20-record table with one conjugate normal step ``y ~ x``."""
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, 1.0, size=20)
    y = 1.0 + 0.8 * x + rng.normal(0.0, 0.5, size=20)
    cols = (ColumnSchema("x", "continuous"), ColumnSchema("y", "continuous"))
    data = Dataset(cols, {"x": x, "y": y})
    plan = validate_plan(SynthesisPlan((ModelSpec("y", ("x",), "normal"),)), data)
    return data, plan


def write_plan_file(path, columns, steps) -> None:
    doc = {"columns": [c.to_json() for c in columns], "steps": [s.to_json() for s in steps]}
    path.write_text(json.dumps(doc, indent=2), encoding="utf-8")


@pytest.fixture(scope="session")
def ce_small():
    return make_ce_like(200, seed=11)


@pytest.fixture
def ce_files(tmp_path):
    """CE-like data file plus one plan file per archetype."""
    data = make_ce_like(150, seed=5)
    write_dataset(data, tmp_path / "ce.csv")
    plans = {}
    for name, plan in PLANS.items():
        p = tmp_path / f"{name}.json"
        write_plan_file(p, CE_COLUMNS, plan.steps)
        plans[name] = p
    return tmp_path / "ce.csv", plans


@pytest.fixture(scope="session")
def two_cont(ce_small):
    return ce_small, ce_plan("two-continuous", ce_small)


DATA_DIR = Path(__file__).parent / "data"


def load_reference():
    """The frozen reference instance: confidential table, one synthetic table, plan."""
    from attrisk.schema import load_dataset, read_plan

    columns, raw = read_plan(DATA_DIR / "reference_plan.json")
    conf = load_dataset(DATA_DIR / "reference_confidential.csv", columns)
    syn = load_dataset(DATA_DIR / "reference_synthetic.csv", columns, tag="synthetic:1")
    return conf, syn, validate_plan(raw, conf)


@pytest.fixture(scope="session")
def reference():
    return load_reference()
