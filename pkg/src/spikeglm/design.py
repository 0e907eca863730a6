"""Lagged regressor assembly for spike-train models.

Every likelihood evaluation in this package consumes a fixed design: for
each usable time bin, the vector of preceding stimulus values and the
vector of preceding spike counts, both ordered oldest-first. Bins without
a full lag history (the burn-in region) are excluded rather than padded.
"""

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, DimensionMismatchError


def _frozen_array(values, dtype):
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SpikeTrain:
    """Binned spike counts at a fixed bin width.

    Parameters
    ----------
    counts : array-like of int
        Spikes per bin; nonnegative. At fine bin widths these are
        effectively binary.
    delta : float
        Bin width in seconds, strictly positive.
    """

    counts: np.ndarray
    delta: float

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or counts.size < 1:
            raise DataFormatError("spike counts must be a nonempty 1-D sequence")
        if not np.issubdtype(counts.dtype, np.integer):
            rounded = np.rint(counts)
            if not np.allclose(counts, rounded):
                raise DataFormatError("spike counts must be integers")
            counts = rounded
        counts = counts.astype(np.int64)
        if (counts < 0).any():
            raise DataFormatError("spike counts must be nonnegative")
        if not (np.isfinite(self.delta) and self.delta > 0):
            raise DataFormatError("bin width delta must be a positive finite scalar")
        object.__setattr__(self, "counts", _frozen_array(counts, np.int64))
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def num_bins(self):
        return self.counts.size

    @property
    def total_spikes(self):
        return int(self.counts.sum())


@dataclass(frozen=True)
class Stimulus:
    """Real-valued stimulus time series, one row per spatial location.

    A 1-D input is promoted to a single location. ``values`` has shape
    ``(num_locations, num_bins)`` and must be finite throughout.
    """

    values: np.ndarray
    delta: float

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DataFormatError("stimulus must be a (locations x bins) array")
        if not np.isfinite(values).all():
            raise DataFormatError("stimulus values must be finite")
        if not (np.isfinite(self.delta) and self.delta > 0):
            raise DataFormatError("bin width delta must be a positive finite scalar")
        object.__setattr__(self, "values", _frozen_array(values, float))
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def num_locations(self):
        return self.values.shape[0]

    @property
    def num_bins(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class LagConfig:
    """Lag depths: how many preceding bins of stimulus and spike history feed each bin."""

    stim_lags: int
    history_lags: int

    def __post_init__(self):
        if int(self.stim_lags) < 1 or int(self.history_lags) < 1:
            raise DataFormatError("lag depths must be >= 1")
        object.__setattr__(self, "stim_lags", int(self.stim_lags))
        object.__setattr__(self, "history_lags", int(self.history_lags))


@dataclass(frozen=True)
class DesignRow:
    """Regressors for one bin: lagged stimulus, lagged spike history, observed count.

    ``stim`` and ``history`` hold values strictly preceding ``bin_index``,
    oldest first; ``observed`` is the count at ``bin_index`` itself.
    """

    stim: np.ndarray
    history: np.ndarray
    bin_index: int
    observed: int


@dataclass(frozen=True)
class SpatioTemporalRow:
    """DesignRow variant for multi-location stimuli.

    ``stim_block`` has shape (num_locations, stim_lags); row i is the lag
    vector at location i, oldest first.
    """

    stim_block: np.ndarray
    history: np.ndarray
    bin_index: int
    observed: int


def build_lag_vector(series, tau, t):
    """Return the ``tau`` values preceding bin ``t``, oldest first.

    Parameters
    ----------
    series : sequence of float
    tau : int
        Lag depth, >= 1.
    t : int
        Bin index; the returned window covers ``[t - tau, t)``.

    Raises
    ------
    IndexError
        If ``t < tau`` or ``t > len(series)``; callers must trim the
        burn-in region instead of padding.
    """
    series = np.asarray(series)
    tau = int(tau)
    t = int(t)
    if tau < 1:
        raise ValueError("lag depth tau must be >= 1")
    if t < tau or t > series.shape[-1]:
        raise IndexError(
            f"bin {t} has no full lag window of depth {tau} "
            f"in a series of length {series.shape[-1]}"
        )
    return series[..., t - tau:t].copy()


class Design(Sequence):
    """Materialized design: one row of fixed regressors per usable bin.

    Stores the stimulus block as a flat float matrix of shape
    ``(rows, num_locations * stim_lags)`` (row-major over locations) and
    the history block as ``(rows, history_dim)``. Iteration yields
    :class:`DesignRow` for single-location designs and
    :class:`SpatioTemporalRow` otherwise. Instances are immutable.
    """

    def __init__(self, stim_lags_block, history_block, observed, bin_indices, delta,
                 num_locations=None):
        stim = np.array(stim_lags_block, dtype=float)
        if stim.ndim == 2:
            locs = 1 if num_locations is None else int(num_locations)
            width = stim.shape[1]
        elif stim.ndim == 3:
            locs = stim.shape[1]
            width = stim.shape[1] * stim.shape[2]
            stim = stim.reshape(stim.shape[0], width)
        else:
            raise DimensionMismatchError("stimulus block must be 2-D or 3-D")
        if locs < 1 or (width and width % locs != 0):
            raise DimensionMismatchError(
                f"stimulus block width {width} is not divisible into {locs} locations"
            )
        history = np.array(history_block, dtype=float)
        if history.ndim != 2:
            raise DimensionMismatchError("history block must be 2-D")
        observed = np.asarray(observed, dtype=np.int64)
        bin_indices = np.asarray(bin_indices, dtype=np.int64)
        n = stim.shape[0]
        if not (history.shape[0] == observed.shape[0] == bin_indices.shape[0] == n):
            raise DimensionMismatchError("design blocks disagree on the number of rows")
        if (observed < 0).any():
            raise DataFormatError("observed counts must be nonnegative")
        if n and not (np.isfinite(stim).all() and np.isfinite(history).all()):
            raise DataFormatError("design regressors must be finite")
        self._stim = _frozen_array(stim, float)
        self._history = _frozen_array(history, float)
        self._observed = _frozen_array(observed, np.int64)
        self._bin_indices = _frozen_array(bin_indices, np.int64)
        self._delta = float(delta)
        self._num_locations = locs

    @classmethod
    def from_rows(cls, rows, delta):
        """Build a design from an explicit sequence of rows."""
        rows = list(rows)
        if not rows:
            return cls(np.zeros((0, 0)), np.zeros((0, 0)), [], [], delta)
        first = rows[0]
        if isinstance(first, SpatioTemporalRow):
            stim = np.stack([np.asarray(r.stim_block, dtype=float) for r in rows])
        else:
            stim = np.stack([np.asarray(r.stim, dtype=float) for r in rows])
        history = np.stack([np.asarray(r.history, dtype=float) for r in rows])
        observed = [r.observed for r in rows]
        bins = [r.bin_index for r in rows]
        return cls(stim, history, observed, bins, delta)

    # -- array views used by the likelihood machinery ---------------------

    @property
    def stim_flat(self):
        """(rows, num_locations * stim_lags) float matrix, read-only."""
        return self._stim

    @property
    def stim_blocks(self):
        """(rows, num_locations, stim_lags) view of the stimulus block."""
        n, width = self._stim.shape
        if self._num_locations == 0:
            return self._stim.reshape(n, 1, 0)
        return self._stim.reshape(n, self._num_locations, width // self._num_locations)

    @property
    def history(self):
        return self._history

    @property
    def observed(self):
        return self._observed

    @property
    def bin_indices(self):
        return self._bin_indices

    @property
    def delta(self):
        return self._delta

    @property
    def num_locations(self):
        return self._num_locations

    @property
    def stim_dim(self):
        return self._stim.shape[1]

    @property
    def history_dim(self):
        return self._history.shape[1]

    @property
    def total_spikes(self):
        return int(self._observed.sum())

    # -- sequence protocol -------------------------------------------------

    def __len__(self):
        return self._stim.shape[0]

    def __getitem__(self, index):
        if isinstance(index, slice):
            return [self[i] for i in range(*index.indices(len(self)))]
        history = self._history[index].astype(np.int64)
        history.flags.writeable = False
        if self._num_locations > 1:
            return SpatioTemporalRow(
                stim_block=self.stim_blocks[index],
                history=history,
                bin_index=int(self._bin_indices[index]),
                observed=int(self._observed[index]),
            )
        return DesignRow(
            stim=self._stim[index],
            history=history,
            bin_index=int(self._bin_indices[index]),
            observed=int(self._observed[index]),
        )


def _lag_matrix(series, tau, start, stop):
    # windows[m] = series[m : m + tau]; row for bin t is window starting at t - tau
    windows = np.lib.stride_tricks.sliding_window_view(series, tau, axis=-1)
    return windows[..., start - tau:stop - tau, :]


def assemble_design(stimulus, spikes, cfg):
    """Materialize the regressor rows for all bins with a full lag history.

    Rows cover bins ``t`` from ``max(stim_lags, history_lags)`` through the
    final bin; earlier bins lack a complete window and are excluded from
    every likelihood sum. For multi-location stimuli each row carries the
    full (locations x stim_lags) block.

    Parameters
    ----------
    stimulus : Stimulus
    spikes : SpikeTrain
    cfg : LagConfig

    Returns
    -------
    Design
        May be empty when no bin has a full history; fitting layers treat
        that as insufficient data.
    """
    if stimulus.num_bins != spikes.num_bins:
        raise DataFormatError(
            f"stimulus has {stimulus.num_bins} bins but spike train has {spikes.num_bins}"
        )
    if stimulus.delta != spikes.delta:
        raise DataFormatError(
            f"stimulus delta {stimulus.delta} does not match spike train delta {spikes.delta}"
        )
    num_bins = spikes.num_bins
    if cfg.stim_lags > num_bins or cfg.history_lags > num_bins:
        raise DataFormatError(
            f"lag depths ({cfg.stim_lags}, {cfg.history_lags}) exceed the "
            f"series length {num_bins}"
        )
    start = max(cfg.stim_lags, cfg.history_lags)
    if start >= num_bins:
        return Design(
            np.zeros((0, stimulus.num_locations, cfg.stim_lags)),
            np.zeros((0, cfg.history_lags)),
            [], [], spikes.delta,
        )
    stim_blocks = _lag_matrix(stimulus.values, cfg.stim_lags, start, num_bins)
    stim_blocks = np.ascontiguousarray(np.moveaxis(stim_blocks, 0, 1))
    history = _lag_matrix(spikes.counts.astype(float), cfg.history_lags, start, num_bins)
    bins = np.arange(start, num_bins)
    return Design(stim_blocks, history, spikes.counts[start:], bins, spikes.delta)
