import dataclasses
import itertools
from typing import Any, Iterable, Iterator, List

import pandas as pd

from cbrlab.settings import Settings


def chunk_generator(iterable: Iterable, batch_size: int = 1000) -> Iterator[List[Any]]:
    """Yield chunks of an iterable.

    Parameters
    ----------
    iterable : Iterable
        The iterable to chunk.
    batch_size : int, optional
        The size of each chunk. Defaults to 1000.

    Returns
    -------
    Iterator[List[Any]]
        An iterator that yields chunks of the iterable.
    """
    itr = iter(iterable)
    while True:
        chunk_it = itertools.islice(itr, batch_size)
        try:
            first_el = next(chunk_it)
        except StopIteration:
            return
        yield list(itertools.chain((first_el,), chunk_it))


@dataclasses.dataclass(repr=True)
class ChunkedRows:
    """A stream of row dictionaries (trajectory steps, reservoir states)
    that yields chunks of rows.

    Args:
        data: An iterable of row dictionaries.
        chunk_size: The size of each chunk.

    """

    data: Iterable[Any]
    chunk_size: int = Settings.CHUNK_SIZE

    def __post_init__(self) -> None:
        self.data = chunk_generator(self.data, self.chunk_size)

    def __iter__(self) -> Iterator[Any]:
        for chunk in self.data:
            yield chunk

    def iter_as_df(self) -> Iterator[pd.DataFrame]:
        """Iterate as dataframes"""
        for chunk in self.data:
            yield pd.DataFrame(chunk)
