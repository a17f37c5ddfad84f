"""
Executor de tarefas independentes (mercados, lotes de usuários)
"""
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

import structlog

logger = structlog.get_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class StageExecutor:
    """
    Pool de threads com ordem de resultados estável

    Com `threads == 1` as tarefas rodam em linha, na ordem de entrada. Os
    resultados sempre voltam na ordem das entradas, independente do
    escalonamento.
    """

    def __init__(self, threads: int = 1):
        self.threads = max(1, int(threads))

    def map(self, fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
        items = list(items)
        if self.threads == 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, items))

    def __repr__(self) -> str:
        return f"StageExecutor(threads={self.threads})"

