"""Time-tag file IO and high-throughput coincidence histograms.

Binary tag format ("QTG1"): a little-endian 27-byte header
(magic, version u16, channel count u8, resolution ps/tick u32,
duration ticks u64, record count u64) followed by packed 9-byte records
(channel u8, timestamp u64 ticks), timestamp-sorted.

Histogram binning uses zero-centered bins on the integer picosecond grid:
lag Delta falls into bin index sign(Delta) * ((|Delta| + w//2) // w), which
is symmetric under Delta -> -Delta for every width w.  The price is that
for even w the central bin spans w-1 ticks instead of w; per-bin tick
widths are carried through normalization (uncorrelated input is exactly
flat) and re-binning is exact for odd grouping factors, where coarse and
fine bin edges nest.
"""

from __future__ import annotations

import csv
import json
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .trajectories import TagStream

__all__ = [
    "TagFileError",
    "BadMagicError",
    "UnsupportedVersionError",
    "UnsortedRecordsError",
    "TruncatedFileError",
    "EmptyChannelError",
    "HistogramResult",
    "HistogramResult2",
    "read_tags",
    "write_tags",
    "correlate2",
    "correlate3",
    "benchmark_throughput",
]

MAGIC = b"QTG1"
VERSION = 1
HEADER = struct.Struct("<4sHBIQQ")
RECORD_DTYPE = np.dtype([("channel", "u1"), ("timestamp", "<u8")])
assert RECORD_DTYPE.itemsize == 9

TAIL_QUENCH_MESSAGE = (
    "destructive interference quenched the tail; "
    "use intensity-product normalization"
)


class TagFileError(ValueError):
    """Malformed tag file."""


class BadMagicError(TagFileError):
    pass


class UnsupportedVersionError(TagFileError):
    pass


class UnsortedRecordsError(TagFileError):
    pass


class TruncatedFileError(TagFileError):
    pass


class EmptyChannelError(ValueError):
    """A requested correlation channel has no events."""


# --------------------------------------------------------------------------
# tag file IO


def write_tags(stream: TagStream, path) -> None:
    """Serialize a stream to the binary tag format (resolution from stream)."""
    res = int(stream.resolution_ps)
    if res < 1:
        raise ValueError("resolution must be at least 1 ps per tick")
    times = stream.timestamps_ps
    if res > 1 and np.any(times % res):
        raise ValueError("timestamps are not multiples of the tick resolution")
    if stream.duration_ps % res:
        raise ValueError("duration is not a multiple of the tick resolution")
    ids = stream.channel_ids()
    n_channels = int(ids.max()) + 1 if ids.size else 0
    header = HEADER.pack(
        MAGIC,
        VERSION,
        n_channels,
        res,
        stream.duration_ps // res,
        stream.n_records,
    )
    records = np.empty(stream.n_records, dtype=RECORD_DTYPE)
    records["channel"] = stream.channels
    records["timestamp"] = (times // res).astype(np.uint64)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(records.tobytes())


def read_tags(path) -> TagStream:
    """Parse a binary tag file; validates magic, order, and completeness."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < HEADER.size:
        raise TruncatedFileError(
            f"file is {len(blob)} bytes, smaller than the {HEADER.size}-byte header"
        )
    magic, version, n_channels, res, dur_ticks, n_records = HEADER.unpack_from(
        blob
    )
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}; expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(
            f"unsupported tag file version {version}"
        )
    expected = HEADER.size + n_records * RECORD_DTYPE.itemsize
    if len(blob) != expected:
        raise TruncatedFileError(
            f"expected {expected} bytes for {n_records} records, got {len(blob)}"
        )
    records = np.frombuffer(blob, dtype=RECORD_DTYPE, offset=HEADER.size)
    channels = records["channel"]
    ticks = records["timestamp"]
    if n_channels and channels.size and channels.max() >= n_channels:
        raise TagFileError(
            f"channel id {channels.max()} out of range "
            f"(header declares {n_channels} channels)"
        )
    if ticks.size and np.any(np.diff(ticks.astype(np.int64)) < 0):
        raise UnsortedRecordsError("records are not timestamp-sorted")
    return TagStream(
        channels=channels.copy(),
        timestamps_ps=(ticks.astype(np.int64) * res),
        duration_ps=int(dur_ticks) * res,
        resolution_ps=res,
    )


# --------------------------------------------------------------------------
# histogram geometry


def _bin_geometry(bin_width_ps: int, max_delay_ps: int):
    """(k_max, window, tick widths) for the zero-centered binning scheme."""
    w = int(bin_width_ps)
    m = int(max_delay_ps)
    if w < 1:
        raise ValueError("bin width must be at least 1 ps")
    if m < w:
        raise ValueError("max delay must be at least one bin width")
    if m % w:
        raise ValueError(
            f"bin width must divide the max delay (got {w} ps into {m} ps)"
        )
    k_max = m // w
    window = k_max * w + (w - 1) - w // 2
    widths = np.full(2 * k_max + 1, w, dtype=np.int64)
    widths[k_max] = w - 1 if w % 2 == 0 else w
    return k_max, window, widths


@njit(cache=True, nogil=True)
def _pair_hist(ta, tb, i_offset, same, half, width, k_max, window):
    """All-pairs lag histogram of tb around each ta event (two pointers)."""
    counts = np.zeros(2 * k_max + 1, dtype=np.int64)
    nb = tb.shape[0]
    lo = 0
    for i in range(ta.shape[0]):
        t = ta[i]
        while lo < nb and tb[lo] < t - window:
            lo += 1
        j = lo
        while j < nb and tb[j] <= t + window:
            if not (same and j == i + i_offset):
                d = tb[j] - t
                if d >= 0:
                    idx = (d + half) // width
                else:
                    idx = -((half - d) // width)
                counts[idx + k_max] += 1
            j += 1
    return counts


@njit(cache=True, nogil=True)
def _triple_hist(
    ta, tb, tc, i_offset, ab_same, ac_same, bc_same,
    half, width, k_max, window,
):
    """Nested-window 2-D lag histogram over (tb - ta, tc - ta)."""
    n = 2 * k_max + 1
    counts = np.zeros((n, n), dtype=np.int64)
    nb = tb.shape[0]
    nc = tc.shape[0]
    lob = 0
    loc = 0
    for i in range(ta.shape[0]):
        t = ta[i]
        while lob < nb and tb[lob] < t - window:
            lob += 1
        while loc < nc and tc[loc] < t - window:
            loc += 1
        j = lob
        while j < nb and tb[j] <= t + window:
            if not (ab_same and j == i + i_offset):
                db = tb[j] - t
                if db >= 0:
                    idx_b = (db + half) // width
                else:
                    idx_b = -((half - db) // width)
                k = loc
                while k < nc and tc[k] <= t + window:
                    if not (
                        (ac_same and k == i + i_offset)
                        or (bc_same and k == j)
                    ):
                        dc = tc[k] - t
                        if dc >= 0:
                            idx_c = (dc + half) // width
                        else:
                            idx_c = -((half - dc) // width)
                        counts[idx_b + k_max, idx_c + k_max] += 1
                    k += 1
            j += 1
    return counts


# --------------------------------------------------------------------------
# results


def _stream_stats(stream: TagStream, ids):
    totals = stream.counts()
    rates = stream.rates_per_ns()
    return (
        {int(i): totals.get(int(i), 0) for i in ids},
        {int(i): rates.get(int(i), 0.0) for i in ids},
    )


def _effective_duration(duration_ps: int, max_delay_ps: int) -> int:
    eff = duration_ps - 2 * max_delay_ps
    if eff <= 0:
        raise ValueError(
            "max delay is too large for the stream duration "
            f"({max_delay_ps} ps window vs {duration_ps} ps of data)"
        )
    return eff


@dataclass
class HistogramResult:
    """1-D coincidence histogram on zero-centered lag bins.

    ``density`` is the expected count per tick under the chosen
    normalization (None for mode "none"); normalized values are
    counts / (density * tick width).
    """

    lag_centers_ps: np.ndarray
    tick_widths: np.ndarray
    counts: np.ndarray  # uint64
    mode: str
    density: float | None
    channels: tuple[int, ...]
    per_channel_totals: dict[int, int]
    per_channel_rates_ns: dict[int, float]
    duration_ps: int
    bin_width_ps: int
    max_delay_ps: int
    meta: dict = field(default_factory=dict)

    @property
    def edges_ps(self) -> np.ndarray:
        # bins tile the covered ticks contiguously and symmetrically, so
        # the edges follow from the cumulative tick widths alone
        total = int(self.tick_widths.sum())
        lows = -(total - 1) // 2 + np.concatenate(
            [[0], np.cumsum(self.tick_widths[:-1])]
        )
        return np.append(lows, lows[-1] + self.tick_widths[-1]) - 0.5

    @property
    def normalized(self) -> np.ndarray:
        if self.density is None:
            raise ValueError("histogram is unnormalized (mode 'none')")
        return self.counts.astype(float) / (self.density * self.tick_widths)

    @property
    def accidental_estimate(self) -> np.ndarray:
        if self.density is None:
            raise ValueError("histogram is unnormalized (mode 'none')")
        return self.density * self.tick_widths

    def rebin(self, factor: int) -> "HistogramResult":
        """Merge ``factor`` adjacent bins around zero lag (odd factor).

        Odd factors keep the bins centered on zero, and the merged edges
        nest exactly into the fine ones, so every retained coarse bin is
        bin-for-bin identical to recomputing the histogram at the coarse
        width.  Even factors would put a bin boundary on the negation axis
        and are rejected.  The outermost fine bins that only partially fill
        a coarse bin are dropped (``max_delay_ps`` shrinks accordingly).
        """
        factor = int(factor)
        if factor == 1:
            return self
        if factor < 1 or factor % 2 == 0:
            raise ValueError(
                "re-binning factor must be odd so the merged bins stay "
                "centered on zero lag"
            )
        k_max = self.lag_centers_ps.size // 2
        half = (factor - 1) // 2
        k_new = (k_max - half) // factor
        if k_new < 1:
            raise ValueError(
                f"re-binning by {factor} leaves no complete coarse bin "
                f"(histogram reaches lag index {k_max})"
            )
        start = k_max - k_new * factor - half
        sl = slice(start, start + factor * (2 * k_new + 1))

        def group(arr):
            return arr[sl].reshape(2 * k_new + 1, factor).sum(axis=1)

        return HistogramResult(
            lag_centers_ps=self.lag_centers_ps[sl][half::factor].copy(),
            tick_widths=group(self.tick_widths),
            counts=group(self.counts.astype(np.int64)).astype(np.uint64),
            mode=self.mode,
            density=self.density,
            channels=self.channels,
            per_channel_totals=self.per_channel_totals,
            per_channel_rates_ns=self.per_channel_rates_ns,
            duration_ps=self.duration_ps,
            bin_width_ps=self.bin_width_ps * factor,
            max_delay_ps=k_new * self.bin_width_ps * factor,
            meta=dict(self.meta),
        )

    def to_csv(self, path):
        have_norm = self.density is not None
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["lag_ps", "tick_width", "counts"]
            if have_norm:
                header += ["normalized", "accidental_estimate"]
            writer.writerow(header)
            norm = self.normalized if have_norm else None
            acc = self.accidental_estimate if have_norm else None
            for k in range(self.counts.size):
                row = [
                    int(self.lag_centers_ps[k]),
                    int(self.tick_widths[k]),
                    int(self.counts[k]),
                ]
                if have_norm:
                    row += [f"{norm[k]:.15g}", f"{acc[k]:.15g}"]
                writer.writerow(row)

    def envelope(self) -> dict:
        out = {
            "kind": "histogram2",
            "channels": list(self.channels),
            "mode": self.mode,
            "density_per_tick": self.density,
            "bin_width_ps": self.bin_width_ps,
            "max_delay_ps": self.max_delay_ps,
            "duration_ps": self.duration_ps,
            "lag_centers_ps": self.lag_centers_ps.tolist(),
            "tick_widths": self.tick_widths.tolist(),
            "counts": [int(c) for c in self.counts],
            "per_channel_totals": {
                str(k): v for k, v in self.per_channel_totals.items()
            },
            "per_channel_rates_ns": {
                str(k): v for k, v in self.per_channel_rates_ns.items()
            },
        }
        out.update(self.meta)
        return out

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.envelope(), fh, indent=1)
            fh.write("\n")


@dataclass
class HistogramResult2:
    """2-D coincidence histogram over (lag_ab, lag_ac)."""

    lag_centers_ps: np.ndarray
    tick_widths: np.ndarray
    counts: np.ndarray  # (n, n) uint64
    mode: str
    density: float | None  # expected counts per tick^2
    channels: tuple[int, int, int]
    per_channel_totals: dict[int, int]
    per_channel_rates_ns: dict[int, float]
    duration_ps: int
    bin_width_ps: int
    max_delay_ps: int
    meta: dict = field(default_factory=dict)

    @property
    def normalized(self) -> np.ndarray:
        if self.density is None:
            raise ValueError("histogram is unnormalized (mode 'none')")
        area = np.outer(self.tick_widths, self.tick_widths).astype(float)
        return self.counts.astype(float) / (self.density * area)

    def to_csv(self, path):
        have_norm = self.density is not None
        norm = self.normalized if have_norm else None
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["lag_ab_ps", "lag_ac_ps", "counts"]
            if have_norm:
                header.append("normalized")
            writer.writerow(header)
            n = self.lag_centers_ps.size
            for i in range(n):
                for j in range(n):
                    row = [
                        int(self.lag_centers_ps[i]),
                        int(self.lag_centers_ps[j]),
                        int(self.counts[i, j]),
                    ]
                    if have_norm:
                        row.append(f"{norm[i, j]:.15g}")
                    writer.writerow(row)

    def envelope(self) -> dict:
        out = {
            "kind": "histogram3",
            "channels": list(self.channels),
            "mode": self.mode,
            "density_per_tick2": self.density,
            "bin_width_ps": self.bin_width_ps,
            "max_delay_ps": self.max_delay_ps,
            "duration_ps": self.duration_ps,
            "lag_centers_ps": self.lag_centers_ps.tolist(),
            "tick_widths": self.tick_widths.tolist(),
            "counts": [[int(c) for c in row] for row in self.counts],
        }
        out.update(self.meta)
        return out

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.envelope(), fh, indent=1)
            fh.write("\n")


# --------------------------------------------------------------------------
# correlators


def _require_events(stream: TagStream, ids):
    missing = [i for i in ids if stream.select(i).size == 0]
    if missing:
        raise EmptyChannelError(
            f"channel(s) {missing} have no events; per-channel counts: "
            f"{stream.counts()}"
        )


def _chunk_bounds(n: int, chunks: int):
    edges = np.linspace(0, n, chunks + 1).astype(np.int64)
    return [(int(edges[i]), int(edges[i + 1])) for i in range(chunks)]


def correlate2(
    stream: TagStream,
    ch_a: int,
    ch_b: int,
    bin_width_ps: int = 10,
    max_delay_ps: int = 10_000,
    normalization: str = "tail",
    chunks: int | None = None,
    workers: int = 1,
) -> HistogramResult:
    """Multi-stop lag histogram between two channels.

    Every pair within the window contributes (no start-stop bias); for
    autocorrelation (ch_a == ch_b) only the pairing of an event with itself
    is excluded.  Counts are exactly independent of ``chunks``/``workers``.
    """
    k_max, window, widths = _bin_geometry(bin_width_ps, max_delay_ps)
    _require_events(stream, {ch_a, ch_b})
    ta = stream.select(ch_a)
    tb = stream.select(ch_b)
    same = ch_a == ch_b

    if chunks is None:
        chunks = workers
    chunks = max(1, min(int(chunks), ta.size))
    bounds = _chunk_bounds(ta.size, chunks)

    def job(lo_hi):
        lo, hi = lo_hi
        return _pair_hist(
            ta[lo:hi], tb, np.int64(lo), same,
            np.int64(bin_width_ps // 2), np.int64(bin_width_ps),
            np.int64(k_max), np.int64(window),
        )

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, bounds))
    else:
        parts = [job(b) for b in bounds]
    counts = np.sum(parts, axis=0, dtype=np.int64)

    totals, rates = _stream_stats(stream, sorted({ch_a, ch_b}))
    duration = stream.duration_ps
    eff = _effective_duration(duration, max_delay_ps)
    if normalization == "uncorrelated":
        density = ta.size * (tb.size / duration) * (eff / duration)
    elif normalization == "tail":
        density = _tail_density_1d(counts, widths, k_max)
    elif normalization == "none":
        density = None
    else:
        raise ValueError(
            f"unknown normalization mode {normalization!r}; expected "
            "uncorrelated, tail, or none"
        )
    centers = np.arange(-k_max, k_max + 1, dtype=np.int64) * bin_width_ps
    return HistogramResult(
        lag_centers_ps=centers,
        tick_widths=widths,
        counts=counts.astype(np.uint64),
        mode=normalization,
        density=density,
        channels=(ch_a, ch_b),
        per_channel_totals=totals,
        per_channel_rates_ns=rates,
        duration_ps=duration,
        bin_width_ps=int(bin_width_ps),
        max_delay_ps=int(max_delay_ps),
    )


def _tail_density_1d(counts, widths, k_max) -> float:
    centers = np.abs(np.arange(-k_max, k_max + 1))
    window = centers >= 0.9 * k_max
    dens = counts[window] / widths[window]
    if dens.max(initial=0.0) < 1e-14:
        raise ValueError(TAIL_QUENCH_MESSAGE)
    return float(dens.mean())


def correlate3(
    stream: TagStream,
    ch_a: int,
    ch_b: int,
    ch_c: int,
    bin_width_ps: int = 100,
    max_delay_ps: int = 5_000,
    normalization: str = "tail",
    chunks: int | None = None,
    workers: int = 1,
) -> HistogramResult2:
    """Nested-window triple-coincidence histogram over (tb-ta, tc-ta)."""
    k_max, window, widths = _bin_geometry(bin_width_ps, max_delay_ps)
    _require_events(stream, {ch_a, ch_b, ch_c})
    ta = stream.select(ch_a)
    tb = stream.select(ch_b)
    tc = stream.select(ch_c)

    if chunks is None:
        chunks = workers
    chunks = max(1, min(int(chunks), ta.size))
    bounds = _chunk_bounds(ta.size, chunks)

    def job(lo_hi):
        lo, hi = lo_hi
        return _triple_hist(
            ta[lo:hi], tb, tc, np.int64(lo),
            ch_a == ch_b, ch_a == ch_c, ch_b == ch_c,
            np.int64(bin_width_ps // 2), np.int64(bin_width_ps),
            np.int64(k_max), np.int64(window),
        )

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, bounds))
    else:
        parts = [job(b) for b in bounds]
    counts = np.sum(parts, axis=0, dtype=np.int64)

    totals, rates = _stream_stats(stream, sorted({ch_a, ch_b, ch_c}))
    duration = stream.duration_ps
    eff = _effective_duration(duration, max_delay_ps)
    if normalization == "uncorrelated":
        density = (
            ta.size * (tb.size / duration) * (tc.size / duration)
            * (eff / duration)
        )
    elif normalization == "tail":
        centers = np.abs(np.arange(-k_max, k_max + 1))
        corner = centers >= 0.9 * k_max
        sel = np.ix_(corner, corner)
        area = np.outer(widths, widths)[sel]
        dens = counts[sel] / area
        if dens.max(initial=0.0) < 1e-14:
            raise ValueError(TAIL_QUENCH_MESSAGE)
        density = float(dens.mean())
    elif normalization == "none":
        density = None
    else:
        raise ValueError(
            f"unknown normalization mode {normalization!r}; expected "
            "uncorrelated, tail, or none"
        )
    centers = np.arange(-k_max, k_max + 1, dtype=np.int64) * bin_width_ps
    return HistogramResult2(
        lag_centers_ps=centers,
        tick_widths=widths,
        counts=counts.astype(np.uint64),
        mode=normalization,
        density=density,
        channels=(ch_a, ch_b, ch_c),
        per_channel_totals=totals,
        per_channel_rates_ns=rates,
        duration_ps=duration,
        bin_width_ps=int(bin_width_ps),
        max_delay_ps=int(max_delay_ps),
    )


# --------------------------------------------------------------------------
# performance reference


def make_poisson_stream(
    rate_per_ns: float, duration_ns: float, n_channels: int = 2, seed: int = 0
) -> TagStream:
    """Independent Poisson channels — benchmark and null-test input."""
    rng = np.random.default_rng(seed)
    duration_ps = int(duration_ns * 1000)
    chs = []
    ts = []
    for cid in range(n_channels):
        n = rng.poisson(rate_per_ns * duration_ns)
        t = rng.integers(0, duration_ps, n, dtype=np.int64)
        chs.append(np.full(n, cid, dtype=np.uint8))
        ts.append(t)
    channels = np.concatenate(chs)
    times = np.concatenate(ts)
    order = np.argsort(times, kind="stable")
    return TagStream(
        channels=channels[order],
        timestamps_ps=times[order],
        duration_ps=duration_ps,
    )


def benchmark_throughput(
    n_tags: int = 10_000_000,
    bin_width_ps: int = 10,
    max_delay_ps: int = 10_000,
    seed: int = 1234,
) -> dict:
    """Single-pass correlate2 throughput on a reference Poisson stream.

    Two channels, n_tags total records over 1 s of stream time; the kernel
    is warmed up on a small slice first so JIT compilation is not billed.
    Returns tags/second processed in a single pass on one core.
    """
    duration_ns = 1.0e9
    rate = n_tags / 2 / duration_ns
    stream = make_poisson_stream(rate, duration_ns, 2, seed)
    warm = TagStream(
        channels=stream.channels[:1000].copy(),
        timestamps_ps=stream.timestamps_ps[:1000].copy(),
        duration_ps=stream.duration_ps,
    )
    try:
        correlate2(warm, 0, 1, bin_width_ps, max_delay_ps, "none")
    except EmptyChannelError:
        pass
    start = time.perf_counter()
    correlate2(stream, 0, 1, bin_width_ps, max_delay_ps, "none")
    elapsed = time.perf_counter() - start
    return {
        "n_tags": stream.n_records,
        "elapsed_s": elapsed,
        "tags_per_s": stream.n_records / elapsed,
    }
