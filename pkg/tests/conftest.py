from __future__ import annotations

import json

import pytest

from semfuse.synth import SceneSpec, generate, write_scene

from scenes import PLANTED, planted_scene


@pytest.fixture(scope="session")
def noiseless_scene():
    return planted_scene()


@pytest.fixture(scope="session")
def scene_dir(tmp_path_factory):
    """A small written scene with two frames; treat as read-only."""
    out = tmp_path_factory.mktemp("scene")
    write_scene(generate(SceneSpec(pedestrians=PLANTED, n_frames=2, seed=3)), out)
    return out


@pytest.fixture
def config_path(scene_dir, tmp_path):
    """Config for ``scene_dir`` writing its outputs into a fresh directory."""
    cfg = json.loads((scene_dir / "config.json").read_text())
    for key in ("rig", "labels", "detections", "ground_truth"):
        cfg[key] = str(scene_dir / cfg[key])
    cfg["output_dir"] = str(tmp_path / "out")
    p = tmp_path / "config.json"
    p.write_text(json.dumps(cfg))
    return p


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one acceptance line; they are repeated in the terminal summary."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        lines.append(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
