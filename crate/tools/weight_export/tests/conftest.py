import os
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

REPO = Path(__file__).resolve().parents[3]


def _has_tensorflow() -> bool:
    try:
        import tensorflow  # noqa: F401
    except Exception:
        return False
    return True


requires_tf = pytest.mark.skipif(not _has_tensorflow(), reason="tensorflow not installed")


@pytest.fixture(scope="session")
def zoo_model():
    if not _has_tensorflow():
        pytest.skip("tensorflow not installed")
    from leaflite_export.export import build_zoo_model

    return build_zoo_model("random", 3)


@pytest.fixture(scope="session")
def engine_binary():
    """Path to the leaflite CLI, built on demand; skips when cargo is absent."""
    env = os.environ.get("LEAFLITE_BIN")
    if env:
        return Path(env)
    for profile in ("release", "debug"):
        candidate = REPO / "target" / profile / "leaflite"
        if candidate.exists():
            return candidate
    if shutil.which("cargo") is None:
        pytest.skip("no engine binary and no cargo")
    subprocess.run(["cargo", "build", "--release", "-q", "-p", "leaflite"], cwd=REPO, check=True)
    return REPO / "target" / "release" / "leaflite"
