"""Shared acceptance fixtures: one desk-scale experiment per session.

The full pipeline is deterministic for a fixed config, so the built lab can
be cached across sessions by setting NSLAB_ACCEPTANCE_CACHE to a directory;
without it everything lands in pytest's session tmp dir (roughly ten minutes
of training on two cores).
"""

import hashlib
import os
import time
from pathlib import Path

import pytest

from nslab.cli import main

ELLIPSOID_INI = """\
[experiment]
seed = 42
jobs = 2
"""

NOISE_INI = """\
[experiment]
seed = 42
dataset = mnist_rotation
jobs = 2

[dataset]
templates = 16
angles_per_template = 25
val_angles_per_template = 5
"""


def _run_pipeline(ini_path: Path, out: Path, commands) -> dict:
    timings = {}
    for command in commands:
        t0 = time.time()
        code = main([command, "--config", str(ini_path), "--out", str(out)])
        timings[command] = time.time() - t0
        assert code == 0, f"{command} failed with exit code {code}"
    return timings


def _build_lab(root: Path) -> dict:
    root.mkdir(parents=True, exist_ok=True)
    ell_ini = root / "ellipsoid.ini"
    ell_ini.write_text(ELLIPSOID_INI)
    noise_ini = root / "noise.ini"
    noise_ini.write_text(NOISE_INI)
    lab = {
        "ellipsoid_out": root / "ellipsoid",
        "noise_out": root / "noise",
        "ellipsoid_ini": ell_ini,
        "noise_ini": noise_ini,
    }
    timings = {}
    timings["ellipsoid"] = _run_pipeline(
        ell_ini, lab["ellipsoid_out"],
        ("gen-data", "train", "analyze", "fit-channels", "report"),
    )
    timings["noise"] = _run_pipeline(
        noise_ini, lab["noise_out"], ("gen-data", "train", "analyze")
    )
    lab["timings"] = timings
    return lab


def _lab_tag() -> str:
    return hashlib.sha256((ELLIPSOID_INI + NOISE_INI).encode()).hexdigest()[:16]


@pytest.fixture(scope="session")
def lab(tmp_path_factory):
    cache = os.environ.get("NSLAB_ACCEPTANCE_CACHE")
    if cache:
        root = Path(cache) / _lab_tag()
        marker = root / "COMPLETE"
        if marker.exists():
            lab = {
                "ellipsoid_out": root / "ellipsoid",
                "noise_out": root / "noise",
                "ellipsoid_ini": root / "ellipsoid.ini",
                "noise_ini": root / "noise.ini",
                "timings": None,  # cached build: stage timings not re-measured
            }
            return lab
        lab = _build_lab(root)
        marker.write_text("ok\n")
        return lab
    return _build_lab(tmp_path_factory.mktemp("lab"))
