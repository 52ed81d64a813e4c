import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lineaments import synth  # noqa: E402
from lineaments.raster import write_ascii_grid, write_lineaments, write_multiband, write_points  # noqa: E402


def small_scene_spec():
    """A 256x256 scene with a north-south stream and four faults."""
    L = synth.LineSpec
    return synth.SceneSpec(width=256, height=256, lines=(L(70, 60, 104, 120, 0.12), L(190, 200, 106, 100, -0.11),
                                                         L(60, 180, 20, 90, 0.12), L(200, 70, 150, 80, 0.10)),
                           stream=(130.0, 10.0, 200.0), n_occurrences=20)


def write_scene(sc, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    write_multiband(sc.raster, out / "scene")
    write_ascii_grid(sc.dem, out / "dem.asc")
    write_points(sc.occurrences, out / "occurrences.csv")
    write_lineaments(sc.truth, out / "truth.geojson")
    return {"raster": str(out / "scene.bsq"), "dem": str(out / "dem.asc"),
            "occurrences": str(out / "occurrences.csv"), "truth": str(out / "truth.geojson")}


@pytest.fixture(scope="session")
def small_scene(tmp_path_factory):
    sc = synth.make_synthetic(small_scene_spec(), seed=0)
    return write_scene(sc, tmp_path_factory.mktemp("small_scene"))


_CRITERIA: dict = {}


def record_criterion(n: int, ok: bool, detail: str) -> None:
    _CRITERIA[n] = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[n])
    terminalreporter.write_line("criterion 10: full-data run, documented in README.md (not automated)")
