import os
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from idsxai.data import encode_and_scale, load_csv
from idsxai.schema import CATEGORICAL, FeatureSchema, FeatureSpec

UNSW_DIR = os.environ.get("IDSXAI_UNSW_DIR")

# criterion id -> (title, outcome)
_ACCEPTANCE: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    prev = _ACCEPTANCE.get(n, (title, None, ""))
    if rep.when == "call" or (rep.when == "setup" and rep.skipped) or rep.failed:
        if rep.skipped:
            reason = rep.longrepr[2] if isinstance(rep.longrepr, tuple) else str(rep.longrepr)
            state, detail = "SKIP", reason
        else:
            state, detail = ("PASS", "") if rep.passed else ("FAIL", rep.nodeid)
        # a criterion with several tests fails if any fails
        if prev[1] == "FAIL":
            return
        if prev[1] == "PASS" and state == "SKIP":
            return
        _ACCEPTANCE[n] = (title, state, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, state, detail = _ACCEPTANCE[n]
        line = f"criterion {n:>2} {state:<4} {title}"
        if state == "SKIP":
            line += f"  [{detail}]"
        tr.write_line(line)


@pytest.fixture(scope="session")
def unsw_dir():
    if not UNSW_DIR:
        pytest.skip("UNSW-NB15 CSVs not available (set IDSXAI_UNSW_DIR)")
    d = Path(UNSW_DIR)
    if not (d / "UNSW_NB15_training-set.csv").exists():
        pytest.skip(f"UNSW_NB15_training-set.csv not found in {d}")
    return d


@pytest.fixture
def small_schema():
    return FeatureSchema(
        (
            FeatureSpec("dur"),
            FeatureSpec("proto", CATEGORICAL, ("tcp", "udp")),
            FeatureSpec("sbytes"),
        ),
        label_column="label",
    )


def write_rows(path, header, rows):
    lines = [",".join(header)] + [",".join(str(c) for c in r) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def small_dataset(tmp_path, small_schema):
    rng = np.random.default_rng(3)
    n = 60
    rows = []
    for i in range(n):
        y = int(i % 3 == 0)
        rows.append((round(rng.normal(5 * y, 1), 4), "tcp" if rng.random() < 0.7 else "udp",
                     round(rng.normal(100, 10), 3), y))
    path = write_rows(tmp_path / "small.csv", ["dur", "proto", "sbytes", "label"], rows)
    return encode_and_scale(load_csv(path, small_schema))


@pytest.fixture(scope="session")
def synth_files(tmp_path_factory):
    from idsxai import synthetic

    d = tmp_path_factory.mktemp("synth")
    synthetic.write_csv(d / "train.csv", 1200, seed=11)
    synthetic.write_csv(d / "test.csv", 400, seed=12)
    return d / "train.csv", d / "test.csv"


def frame_of(table):
    return pd.DataFrame(table.frame)
