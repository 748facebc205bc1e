import threading

import pytest

from workers.frame_pool import configure_pool, run_guarded, run_parallel


@pytest.mark.parametrize("backend", ["sequential", "threading"])
def test_results_keep_input_order(backend):
    assert run_parallel(lambda x: x * x, range(20), workers=3, backend=backend) == [x * x for x in range(20)]


def test_threading_backend_uses_workers():
    seen = set()

    def record(x):
        seen.add(threading.get_ident())
        return x

    run_parallel(record, range(8), workers=2, backend="threading")
    assert seen


def test_worker_exception_propagates():
    def explode(x):
        raise RuntimeError(f"unit {x}")

    with pytest.raises(RuntimeError):
        run_parallel(explode, [1, 2], workers=2, backend="threading")


def test_run_guarded_returns_the_exception():
    result = run_guarded(lambda x: 1 / x, 0)
    assert isinstance(result, ZeroDivisionError)
    assert run_guarded(lambda x: x + 1, 1) == 2


def test_configured_defaults_apply():
    calls = []
    configure_pool(workers=1, backend="threading")
    assert run_parallel(lambda x: calls.append(x) or x, [3, 1, 2]) == [3, 1, 2]
    assert calls == [3, 1, 2]


def test_empty_input():
    assert run_parallel(lambda x: x, [], workers=4, backend="threading") == []
