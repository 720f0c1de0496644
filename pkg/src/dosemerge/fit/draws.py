"""Container for joint posterior draws of population parameters."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DomainError, MappingError, SamplingError


@dataclass(frozen=True)
class PosteriorDraws:
    """Draws indexed ``(chain, iteration, parameter)`` on the natural scale.

    ``rhat`` holds the split-chain diagnostic of every sampled parameter;
    pinned parameters appear as constant columns without an ``rhat`` entry.
    """

    names: tuple
    draws: np.ndarray
    rhat: dict = field(default_factory=dict)
    acceptance: dict = field(default_factory=dict)
    species: str = ""

    def __post_init__(self):
        d = np.asarray(self.draws, dtype=float)
        if d.ndim != 3 or d.shape[2] != len(self.names):
            raise DomainError("draws must have shape (chains, iterations, parameters)")
        d = d.copy()
        d.setflags(write=False)
        object.__setattr__(self, "draws", d)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_iter(self) -> int:
        return self.draws.shape[1]

    @property
    def n_draws(self) -> int:
        return self.n_chains * self.n_iter

    def __contains__(self, name) -> bool:
        return name in self.names

    def column(self, name) -> np.ndarray:
        """All draws of one parameter, chains concatenated in order."""
        try:
            j = self.names.index(name)
        except ValueError:
            raise MappingError(f"parameter {name!r} not in draws {self.names}") from None
        return self.draws[:, :, j].reshape(-1)

    def table(self) -> np.ndarray:
        """``(n_draws, n_params)`` matrix, chains concatenated."""
        return self.draws.reshape(-1, len(self.names))

    def mean(self, name) -> float:
        return float(self.column(name).mean())

    def sd(self, name) -> float:
        return float(self.column(name).std(ddof=1))

    def summary(self) -> dict:
        return {n: {"mean": self.mean(n), "sd": self.sd(n), "rhat": self.rhat.get(n)}
                for n in self.names}

    def subsample(self, n: int) -> dict:
        """``n`` joint draws chosen by uniform deterministic thinning.

        Indices ``floor(i * N / n)`` into the concatenated chains; these are
        distinct whenever ``n <= N``.
        """
        total = self.n_draws
        if n < 1:
            raise SamplingError("need at least one draw")
        if n > total:
            raise SamplingError(f"requested {n} draws but only {total} are available")
        idx = (np.arange(n) * total) // n
        tab = self.table()[idx]
        return {name: tab[:, j].copy() for j, name in enumerate(self.names)}

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("chain", "iteration") + self.names)
        for c in range(self.n_chains):
            for i in range(self.n_iter):
                w.writerow([c, i] + [repr(float(v)) for v in self.draws[c, i]])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source, species: str = "") -> "PosteriorDraws":
        text = source if isinstance(source, str) and "\n" in source else Path(source).read_text()
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        names = tuple(header[2:])
        chains = sorted({int(r[0]) for r in body})
        per = [[list(map(float, r[2:])) for r in body if int(r[0]) == c] for c in chains]
        if len({len(p) for p in per}) != 1:
            raise DomainError("chains have unequal lengths")
        return cls(names, np.asarray(per), species=species)

    @classmethod
    def from_samples(cls, samples: dict, species: str = "") -> "PosteriorDraws":
        """Wrap independent draws (e.g. a normal approximation) as one chain."""
        names = tuple(samples)
        mat = np.column_stack([np.asarray(samples[n], dtype=float) for n in names])
        return cls(names, mat[None, :, :], species=species)
