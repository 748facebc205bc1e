"""Bounded worker pool over frame and trajectory units."""

from typing import Any, Callable, Iterable, List, Optional, Sequence, TypeVar

from joblib import Parallel, delayed

from config import get_settings
from utils.logging import get_logger

logger = get_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")

_pool_defaults: dict = {}


def configure_pool(workers: Optional[int] = None, backend: Optional[str] = None) -> None:
    """Set process-wide defaults used when callers do not pass them."""

    _pool_defaults.clear()
    if workers is not None:
        _pool_defaults["workers"] = workers
    if backend is not None:
        _pool_defaults["backend"] = backend
    logger.debug("Pool configured", extra=dict(_pool_defaults))


def run_parallel(
    fn: Callable[[T], R],
    items: Iterable[T],
    workers: Optional[int] = None,
    backend: Optional[str] = None,
) -> List[R]:
    """Apply ``fn`` to every item; results come back in input order.

    Outputs never depend on ``workers`` or ``backend``: every unit draws its
    randomness from its own seed path.
    """

    units: Sequence[T] = list(items)
    workers = workers or _pool_defaults.get("workers")
    backend = backend or _pool_defaults.get("backend")
    if workers is None or backend is None:
        settings = get_settings()
        workers = workers or settings.workers
        backend = backend or settings.parallel_backend

    if workers <= 1 or backend == "sequential" or len(units) <= 1:
        return [fn(unit) for unit in units]

    logger.debug("Dispatching units", extra={"units": len(units), "workers": workers, "backend": backend})
    try:
        return list(Parallel(n_jobs=workers, backend=backend)(delayed(fn)(unit) for unit in units))
    except Exception as exc:
        logger.exception("Worker pool failed", extra={"backend": backend, "workers": workers}, exc_info=exc)
        raise


def run_guarded(fn: Callable[[T], R], unit: T) -> Any:
    """Call ``fn``, returning any exception instead of raising it."""

    try:
        return fn(unit)
    except Exception as exc:  # noqa: BLE001
        return exc
