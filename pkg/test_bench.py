import pytest

from services.bench_service import BENCH_SIZE, REFERENCE_FPS, bench, format_table, synthetic_frames
from utils.errors import UsageError


def test_synthetic_frames_are_deterministic(settings):
    first, second = synthetic_frames(2, settings), synthetic_frames(2, settings)
    assert first[0].shape == (BENCH_SIZE, BENCH_SIZE)
    assert first == second
    assert first[0].mask.any()


def test_bench_rows_and_reference_labels(settings):
    rows = bench("inpaint", 2, settings, workers=2)
    measured = [r for r in rows if not r.reference]
    assert [r.workers for r in measured] == [1, 2]
    assert all(r.fps > 0 for r in measured)
    references = [r for r in rows if r.reference]
    assert len(references) == len(REFERENCE_FPS)
    assert all("non-binding" in r.label for r in references)
    table = format_table(rows)
    assert table.splitlines()[0].split() == ["stage", "workers", "fps"]
    assert len(table.splitlines()) == len(rows) + 1


@pytest.mark.parametrize("stage, count", [("inpaint", 0), ("teleport", 1)])
def test_bench_rejects_bad_input(settings, stage, count):
    with pytest.raises(UsageError):
        bench(stage, count, settings)
