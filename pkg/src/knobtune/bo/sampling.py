"""Encoding of configurations and candidate generation for both stages."""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from ..space import ExtDim, SearchSpace, decode, default_config, encode, extended_dims


def stratified_indices(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` indices into ``range(k)``, each index used at most ``ceil(n/k)`` times.

    With ``n <= k`` every draw falls in its own stratum of consecutive
    indices; with ``n == k`` the result is a permutation.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if k < 1:
        raise ValueError("dimension has no candidate values")
    reps, extra = divmod(n, k)
    picks = [np.repeat(np.arange(k), reps)]
    if extra:
        edges = (np.arange(extra + 1) * k) // extra
        picks.append(np.array([rng.integers(edges[j], edges[j + 1]) for j in range(extra)]))
    out = np.concatenate(picks)
    rng.shuffle(out)
    return out


class Encoder:
    """Maps extended configurations to raw value rows and normalized feature rows.

    Raw rows hold natural values (categorical dims hold choice indices) so a
    row can be turned back into a configuration without rounding drift.
    """

    def __init__(self, space: SearchSpace):
        self.space = space.with_granularity("full")
        self.dims: list[ExtDim] = extended_dims(self.space)
        self.index = {d.name: i for i, d in enumerate(self.dims)}
        self.cat_mask = np.array([d.kind == "categorical" for d in self.dims], dtype=bool)
        self.low = np.array([0.0 if d.kind == "categorical" else float(d.low) for d in self.dims])
        span = np.array([0.0 if d.kind == "categorical" else float(d.high) - float(d.low) for d in self.dims])
        self.span = np.where(span > 0, span, 1.0)

    @property
    def width(self) -> int:
        return len(self.dims)

    def raw_from_ext(self, ext: Mapping) -> np.ndarray:
        row = np.empty(self.width)
        for i, d in enumerate(self.dims):
            v = ext[d.name]
            if d.kind == "categorical":
                row[i] = d.choices.index(v) if v in d.choices else -1.0
            else:
                row[i] = float(v)
        return row

    def raw_from_physical(self, config: Mapping) -> np.ndarray:
        return self.raw_from_ext(encode(config, self.space))

    def ext_from_raw(self, row) -> dict:
        out = {}
        for i, d in enumerate(self.dims):
            v = row[i]
            if d.kind == "categorical":
                out[d.name] = d.choices[int(v)]
            elif d.kind == "integer":
                out[d.name] = int(round(v))
            else:
                out[d.name] = float(v)
        return out

    def physical_from_raw(self, row) -> dict:
        return decode(self.ext_from_raw(row), self.space)

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        raw = np.atleast_2d(raw)
        out = (raw - self.low) / self.span
        out[:, self.cat_mask] = raw[:, self.cat_mask]
        return out


class TinySampler:
    """Candidates drawn from the tiny space; knobs outside it stay at their default."""

    def __init__(self, tiny: SearchSpace, encoder: Encoder):
        self.tiny = tiny
        self.encoder = encoder
        defaults = default_config(encoder.space)
        base = encoder.raw_from_physical(defaults)
        self.base = base
        self.tables: list[tuple[list[int], np.ndarray, tuple]] = []
        for view in tiny.dims:
            cols = [i for i, d in enumerate(encoder.dims) if d.source == view.knob_name]
            rows = []
            for value in view.tiny_values:
                cfg = dict(defaults)
                cfg[view.knob_name] = value
                rows.append(encoder.raw_from_physical(cfg)[cols])
            self.tables.append((cols, np.array(rows), view.tiny_values))

    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        out = np.tile(self.base, (m, 1))
        for cols, table, _ in self.tables:
            pick = rng.integers(0, len(table), m)
            out[:, cols] = table[pick]
        return out

    def lhs(self, rng: np.random.Generator, n: int) -> np.ndarray:
        out = np.tile(self.base, (n, 1))
        for cols, table, _ in self.tables:
            out[:, cols] = table[stratified_indices(n, len(table), rng)]
        return out

    def neighbors(self, incumbent: np.ndarray, rng: np.random.Generator, limit: int) -> np.ndarray:
        """One-exchange neighbours: change one knob to another of its tiny values."""
        rows = []
        for cols, table, _ in self.tables:
            current = incumbent[cols]
            for r in table:
                if not np.array_equal(r, current):
                    nb = incumbent.copy()
                    nb[cols] = r
                    rows.append(nb)
        if not rows:
            return np.empty((0, len(incumbent)))
        rows = np.array(rows)
        if len(rows) > limit:
            rows = rows[np.sort(rng.choice(len(rows), size=limit, replace=False))]
        return rows

    def contains(self, raw_row: np.ndarray) -> bool:
        for cols, table, _ in self.tables:
            if not any(np.array_equal(raw_row[cols], r) for r in table):
                return False
        return True


class FullSampler:
    """Uniform candidates over the extended full space."""

    def __init__(self, encoder: Encoder):
        self.encoder = encoder

    def _column(self, d: ExtDim, rng: np.random.Generator, m: int) -> np.ndarray:
        if d.kind == "categorical":
            return rng.integers(0, len(d.choices), m).astype(float)
        if d.kind == "integer":
            return rng.integers(int(d.low), int(d.high) + 1, m).astype(float)
        return rng.uniform(float(d.low), float(d.high), m)

    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        return np.column_stack([self._column(d, rng, m) for d in self.encoder.dims])

    def lhs(self, rng: np.random.Generator, n: int) -> np.ndarray:
        cols = []
        for d in self.encoder.dims:
            if d.kind == "categorical":
                cols.append(stratified_indices(n, len(d.choices), rng).astype(float))
                continue
            u = (rng.permutation(n) + rng.uniform(size=n)) / n
            v = float(d.low) + u * (float(d.high) - float(d.low))
            if d.kind == "integer":
                v = np.clip(np.floor(v), d.low, d.high)
            cols.append(v)
        return np.column_stack(cols)

    def neighbors(self, incumbent: np.ndarray, rng: np.random.Generator, limit: int,
                  scale: float = 0.2) -> np.ndarray:
        dims = self.encoder.dims
        if limit <= 0 or not dims:
            return np.empty((0, len(incumbent)))
        rows = np.tile(incumbent, (limit, 1))
        which = rng.integers(0, len(dims), limit)
        # step sizes spread log-uniformly up to ``scale`` so the search can both jump and refine
        noise = rng.normal(0.0, 1.0, limit) * scale * np.exp(rng.uniform(np.log(0.02), 0.0, limit))
        for r in range(limit):
            j = which[r]
            d = dims[j]
            if d.kind == "categorical":
                if len(d.choices) < 2:
                    continue
                cur = int(incumbent[j])
                alt = int(rng.integers(0, len(d.choices) - 1))
                rows[r, j] = alt + (alt >= cur)
            else:
                lo, hi = float(d.low), float(d.high)
                x = (incumbent[j] - lo) / (hi - lo) if hi > lo else 0.0
                x = min(max(x + noise[r], 0.0), 1.0)
                v = lo + x * (hi - lo)
                rows[r, j] = min(max(math.floor(v + 0.5), lo), hi) if d.kind == "integer" else v
        return rows

    def contains(self, raw_row: np.ndarray) -> bool:
        for i, d in enumerate(self.encoder.dims):
            v = raw_row[i]
            if d.kind == "categorical":
                if not 0 <= v < len(d.choices):
                    return False
            elif not float(d.low) <= v <= float(d.high):
                return False
        return True


def lhs_sample(space: SearchSpace, n: int, seed: int) -> list[dict]:
    """Latin hypercube design over ``space``, returned as physical configurations.

    For a tiny space each dimension draws from its sorted candidate list with
    per-value occupancy bounded by ``ceil(n / len(values))``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if space.granularity == "tiny":
        for v in space.dims:
            if not v.tiny_values:
                raise ValueError(f"{v.knob_name} has no candidate values")
        columns = {v.knob_name: [v.tiny_values[i] for i in stratified_indices(n, len(v.tiny_values), rng)]
                   for v in space.dims}
        return [{name: columns[name][j] for name in space.names} for j in range(n)]
    enc = Encoder(space)
    raw = FullSampler(enc).lhs(rng, n)
    return [enc.physical_from_raw(r) for r in raw]
