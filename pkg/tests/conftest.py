import json
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from droplens.ingest import pgm_bytes


def write_frame_dir(path, frames, manifest=None, fmt="pgm", start=1, digits=6):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if manifest is not False:
        doc = {"trial_id": "t1"} if manifest is None else manifest
        (path / "manifest.json").write_text(json.dumps(doc), encoding="utf-8")
    for i, frame in enumerate(frames):
        name = path / f"frame_{start + i:0{digits}d}.{fmt}"
        frame = np.asarray(frame, dtype=np.uint8)
        if fmt == "pgm":
            name.write_bytes(pgm_bytes(frame))
        else:
            Image.fromarray(frame, mode="L").save(name)
    return path


@pytest.fixture
def frame_dir(tmp_path):
    def make(frames, manifest=None, fmt="pgm", name="stack", **kwargs):
        return write_frame_dir(tmp_path / name, frames, manifest, fmt, **kwargs)

    return make


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("tests.test_acceptance")
    verdicts = getattr(module, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(verdicts):
        terminalreporter.write_line(verdicts[number])
