import hashlib
import struct

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from mixcorr.tagcorr import (
    BadMagicError,
    EmptyChannelError,
    HEADER,
    MAGIC,
    RECORD_DTYPE,
    TruncatedFileError,
    UnsortedRecordsError,
    UnsupportedVersionError,
    benchmark_throughput,
    correlate2,
    correlate3,
    make_poisson_stream,
    read_tags,
    write_tags,
    _bin_geometry,
)
from mixcorr.trajectories import TagStream


# --------------------------------------------------------------------------
# brute-force references


def brute_window(w, m):
    k = m // w
    return k, k * w + (w - 1) - w // 2


def brute_index(d, w):
    if d >= 0:
        return (d + w // 2) // w
    return -((w // 2 - d) // w)


def brute_pairs(ta, tb, same, w, m):
    """O(n^2) all-pairs lag histogram, written independently of the kernel."""
    k, window = brute_window(w, m)
    counts = np.zeros(2 * k + 1, dtype=np.int64)
    for i, t in enumerate(ta):
        for j, u in enumerate(tb):
            if same and i == j:
                continue
            d = int(u) - int(t)
            if abs(d) > window:
                continue
            counts[brute_index(d, w) + k] += 1
    return counts


def brute_triples(ta, tb, tc, same_ab, same_ac, same_bc, w, m):
    k, window = brute_window(w, m)
    n = 2 * k + 1
    counts = np.zeros((n, n), dtype=np.int64)
    for i, t in enumerate(ta):
        for j, u in enumerate(tb):
            if same_ab and i == j:
                continue
            db = int(u) - int(t)
            if abs(db) > window:
                continue
            for l, v in enumerate(tc):
                if (same_ac and i == l) or (same_bc and j == l):
                    continue
                dc = int(v) - int(t)
                if abs(dc) > window:
                    continue
                counts[brute_index(db, w) + k, brute_index(dc, w) + k] += 1
    return counts


def random_stream(rng, n_per_channel, duration_ps, n_channels=2):
    chs = []
    ts = []
    for cid in range(n_channels):
        chs.append(np.full(n_per_channel, cid, dtype=np.uint8))
        ts.append(rng.integers(0, duration_ps, n_per_channel, dtype=np.int64))
    channels = np.concatenate(chs)
    times = np.concatenate(ts)
    order = np.argsort(times, kind="stable")
    return TagStream(channels[order], times[order], duration_ps)


# --------------------------------------------------------------------------
# bin geometry


def test_bin_geometry_even_width():
    k, window, widths = _bin_geometry(10, 50)
    assert k == 5
    assert window == 5 * 10 + 9 - 5  # 54
    assert widths.tolist() == [10] * 5 + [9] + [10] * 5
    assert widths.sum() == 2 * window + 1


def test_bin_geometry_odd_width():
    k, window, widths = _bin_geometry(5, 25)
    assert k == 5
    assert window == 25 + 4 - 2  # 27
    assert set(widths.tolist()) == {5}
    assert widths.sum() == 2 * window + 1


def test_bin_geometry_rejects_nondivisor():
    with pytest.raises(ValueError, match="divide the max delay"):
        _bin_geometry(7, 50)


def test_bin_index_boundaries():
    # even width 10: center bin is |d| <= 4, bin 1 starts at d = 5
    assert brute_index(4, 10) == 0
    assert brute_index(5, 10) == 1
    assert brute_index(-4, 10) == 0
    assert brute_index(-5, 10) == -1
    # odd width 5: center bin is |d| <= 2
    assert brute_index(2, 5) == 0
    assert brute_index(3, 5) == 1
    assert brute_index(-3, 5) == -1


# --------------------------------------------------------------------------
# tag file IO


def test_roundtrip_empty(tmp_path):
    stream = TagStream(np.empty(0, np.uint8), np.empty(0, np.int64), 1000)
    path = tmp_path / "empty.qtg"
    write_tags(stream, path)
    back = read_tags(path)
    assert back.n_records == 0
    assert back.duration_ps == 1000


def test_roundtrip_small(tmp_path):
    stream = TagStream(
        np.array([0, 1, 0], np.uint8),
        np.array([10, 10, 977], np.int64),
        2000,
    )
    path = tmp_path / "small.qtg"
    write_tags(stream, path)
    back = read_tags(path)
    assert_array_equal(back.channels, stream.channels)
    assert_array_equal(back.timestamps_ps, stream.timestamps_ps)
    assert back.duration_ps == 2000
    assert back.resolution_ps == 1


def test_file_layout_is_frozen(tmp_path):
    stream = TagStream(
        np.array([2], np.uint8), np.array([0x0102030405], np.int64), 10**12
    )
    path = tmp_path / "layout.qtg"
    write_tags(stream, path)
    blob = path.read_bytes()
    assert blob[:4] == MAGIC
    assert len(blob) == HEADER.size + 9
    magic, version, n_ch, res, dur, n_rec = HEADER.unpack_from(blob)
    assert (version, n_ch, res, dur, n_rec) == (1, 3, 1, 10**12, 1)
    assert blob[HEADER.size] == 2  # channel byte first
    assert struct.unpack_from("<Q", blob, HEADER.size + 1)[0] == 0x0102030405


def test_roundtrip_checksum_large(tmp_path):
    stream = random_stream(np.random.default_rng(7), 5_000_000, 10**12)
    path = tmp_path / "big.qtg"
    write_tags(stream, path)
    digest_1 = hashlib.sha256(path.read_bytes()).hexdigest()
    back = read_tags(path)
    assert back.n_records == 10_000_000
    assert_array_equal(back.channels, stream.channels)
    assert_array_equal(back.timestamps_ps, stream.timestamps_ps)
    path2 = tmp_path / "big2.qtg"
    write_tags(back, path2)
    assert hashlib.sha256(path2.read_bytes()).hexdigest() == digest_1


def test_coarse_resolution_roundtrip(tmp_path):
    stream = TagStream(
        np.array([0, 1], np.uint8),
        np.array([4000, 12000], np.int64),
        20000,
        resolution_ps=4,
    )
    path = tmp_path / "coarse.qtg"
    write_tags(stream, path)
    back = read_tags(path)
    assert back.resolution_ps == 4
    assert_array_equal(back.timestamps_ps, [4000, 12000])
    assert back.duration_ps == 20000


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.qtg"
    path.write_bytes(b"NOPE" + bytes(HEADER.size - 4))
    with pytest.raises(BadMagicError, match="bad magic"):
        read_tags(path)


def test_bad_version(tmp_path):
    path = tmp_path / "ver.qtg"
    path.write_bytes(HEADER.pack(MAGIC, 9, 0, 1, 10, 0))
    with pytest.raises(UnsupportedVersionError):
        read_tags(path)


def test_truncated_header(tmp_path):
    path = tmp_path / "trunc.qtg"
    path.write_bytes(b"QTG1\x01")
    with pytest.raises(TruncatedFileError, match="header"):
        read_tags(path)


def test_truncated_payload(tmp_path):
    stream = TagStream(
        np.array([0, 0], np.uint8), np.array([1, 2], np.int64), 100
    )
    path = tmp_path / "cut.qtg"
    write_tags(stream, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-1])
    with pytest.raises(TruncatedFileError, match="expected"):
        read_tags(path)


def test_unsorted_records(tmp_path):
    records = np.array([(0, 50), (0, 20)], dtype=RECORD_DTYPE)
    path = tmp_path / "unsorted.qtg"
    path.write_bytes(HEADER.pack(MAGIC, 1, 1, 1, 100, 2) + records.tobytes())
    with pytest.raises(UnsortedRecordsError):
        read_tags(path)


def test_channel_out_of_range(tmp_path):
    records = np.array([(5, 10)], dtype=RECORD_DTYPE)
    path = tmp_path / "chan.qtg"
    path.write_bytes(HEADER.pack(MAGIC, 1, 2, 1, 100, 1) + records.tobytes())
    with pytest.raises(Exception, match="out of range"):
        read_tags(path)


def test_empty_channel_error_lists_counts():
    stream = TagStream(
        np.array([0, 0], np.uint8), np.array([1, 2], np.int64), 10**7
    )
    with pytest.raises(EmptyChannelError, match="per-channel counts"):
        correlate2(stream, 0, 1, 10, 100)


# --------------------------------------------------------------------------
# correlate2 against brute force


@pytest.mark.parametrize("bin_width", [1, 4, 7, 10])
def test_pair_hist_matches_brute_force(bin_width):
    rng = np.random.default_rng(42 + bin_width)
    stream = random_stream(rng, 400, 40_000)
    result = correlate2(
        stream, 0, 1, bin_width, 10 * bin_width, normalization="none"
    )
    expected = brute_pairs(
        stream.select(0), stream.select(1), False, bin_width, 10 * bin_width
    )
    assert_array_equal(result.counts.astype(np.int64), expected)


def test_autocorrelation_matches_brute_force():
    rng = np.random.default_rng(11)
    stream = random_stream(rng, 500, 30_000, n_channels=1)
    result = correlate2(stream, 0, 0, 6, 60, normalization="none")
    expected = brute_pairs(stream.select(0), stream.select(0), True, 6, 60)
    assert_array_equal(result.counts.astype(np.int64), expected)
    # symmetric by construction
    assert_array_equal(result.counts, result.counts[::-1])


def test_autocorrelation_excludes_only_self():
    # two distinct events sharing a timestamp still count as a pair
    stream = TagStream(
        np.zeros(3, np.uint8), np.array([100, 100, 400], np.int64), 1000
    )
    result = correlate2(stream, 0, 0, 10, 50, normalization="none")
    k = result.counts.size // 2
    assert result.counts[k] == 2  # the coincident pair, both orders


def test_reversal_symmetry_exact():
    rng = np.random.default_rng(3)
    stream = random_stream(rng, 800, 60_000)
    fwd = correlate2(stream, 0, 1, 10, 200, normalization="none")
    rev = correlate2(stream, 1, 0, 10, 200, normalization="none")
    assert_array_equal(fwd.counts, rev.counts[::-1])


@pytest.mark.parametrize("chunks,workers", [(2, 1), (7, 1), (5, 4), (16, 4)])
def test_chunked_equals_single_pass(chunks, workers):
    rng = np.random.default_rng(chunks * 10 + workers)
    stream = random_stream(rng, 2_000, 100_000)
    single = correlate2(stream, 0, 1, 10, 500, normalization="none")
    split = correlate2(
        stream, 0, 1, 10, 500, normalization="none",
        chunks=chunks, workers=workers,
    )
    assert_array_equal(single.counts, split.counts)


def test_chunked_autocorrelation_self_exclusion_survives_chunking():
    rng = np.random.default_rng(8)
    stream = random_stream(rng, 1_500, 80_000, n_channels=1)
    single = correlate2(stream, 0, 0, 10, 300, normalization="none")
    split = correlate2(
        stream, 0, 0, 10, 300, normalization="none", chunks=9, workers=3
    )
    assert_array_equal(single.counts, split.counts)


def test_periodic_comb_lands_in_one_bin():
    period = 1000
    offset = 37
    n = 500
    ta = np.arange(n, dtype=np.int64) * period + 100
    tb = ta + offset
    channels = np.concatenate([np.zeros(n, np.uint8), np.ones(n, np.uint8)])
    times = np.concatenate([ta, tb])
    order = np.argsort(times, kind="stable")
    stream = TagStream(channels[order], times[order], n * period + 1000)
    result = correlate2(stream, 0, 1, 10, 100, normalization="none")
    k = result.counts.size // 2
    expected_bin = k + brute_index(offset, 10)
    assert result.counts[expected_bin] == n
    assert result.counts.sum() == n


# --------------------------------------------------------------------------
# normalization


def test_poisson_uncorrelated_is_flat():
    stream = make_poisson_stream(0.2, 200_000.0, seed=5)
    result = correlate2(
        stream, 0, 1, 100, 10_000, normalization="uncorrelated"
    )
    norm = result.normalized
    expected = result.accidental_estimate
    sigma = 1.0 / np.sqrt(expected)
    assert expected.min() > 500  # enough statistics for a 5-sigma test
    assert np.all(np.abs(norm - 1.0) < 5 * sigma)
    # the narrower center bin must not show up after width normalization
    k = norm.size // 2
    assert abs(norm[k] - 1.0) < 5 * sigma[k]


def test_tail_matches_uncorrelated_for_poisson():
    stream = make_poisson_stream(0.3, 100_000.0, seed=17)
    unc = correlate2(stream, 0, 1, 50, 5_000, normalization="uncorrelated")
    tail = correlate2(stream, 0, 1, 50, 5_000, normalization="tail")
    assert tail.density == pytest.approx(unc.density, rel=0.05)


def test_tail_quench_raises():
    # all pairs at zero lag, nothing in the tail window
    n = 50
    ta = np.arange(n, dtype=np.int64) * 100_000 + 5_000
    channels = np.concatenate([np.zeros(n, np.uint8), np.ones(n, np.uint8)])
    times = np.concatenate([ta, ta])
    order = np.argsort(times, kind="stable")
    stream = TagStream(channels[order], times[order], int(ta[-1]) + 10_000)
    with pytest.raises(ValueError, match="quenched the tail"):
        correlate2(stream, 0, 1, 10, 1_000, normalization="tail")


def test_unknown_normalization_rejected():
    stream = make_poisson_stream(0.5, 1_000.0, seed=1)
    with pytest.raises(ValueError, match="unknown normalization"):
        correlate2(stream, 0, 1, 10, 100, normalization="bogus")


def test_max_delay_must_fit_duration():
    stream = TagStream(
        np.array([0, 1], np.uint8), np.array([5, 6], np.int64), 100
    )
    with pytest.raises(ValueError, match="too large"):
        correlate2(stream, 0, 1, 25, 50)


# --------------------------------------------------------------------------
# re-binning


def test_rebin_odd_factor_matches_direct():
    stream = make_poisson_stream(0.4, 50_000.0, seed=23)
    fine = correlate2(stream, 0, 1, 10, 3_000, normalization="none")
    merged = fine.rebin(3)
    # trimming partial edge bins makes the merged result identical to a
    # fresh coarse computation over the reduced window
    assert merged.max_delay_ps == 2_970
    direct = correlate2(stream, 0, 1, 30, 2_970, normalization="none")
    assert_array_equal(merged.counts, direct.counts)
    assert_array_equal(merged.tick_widths, direct.tick_widths)
    assert_array_equal(merged.lag_centers_ps, direct.lag_centers_ps)


def test_rebin_conserves_counts():
    stream = make_poisson_stream(0.4, 50_000.0, seed=29)
    fine = correlate2(stream, 0, 1, 10, 3_000, normalization="none")
    merged = fine.rebin(5)
    # every coarse bin is the exact sum of its five fine constituents
    k_fine = fine.counts.size // 2
    k_new = merged.counts.size // 2
    start = k_fine - 5 * k_new - 2
    groups = fine.counts[start : start + 5 * (2 * k_new + 1)]
    assert_array_equal(merged.counts, groups.reshape(-1, 5).sum(axis=1))
    assert merged.counts.sum() == groups.sum()


def test_rebin_even_factor_rejected():
    stream = make_poisson_stream(0.4, 10_000.0, seed=31)
    hist = correlate2(stream, 0, 1, 10, 1_000, normalization="none")
    with pytest.raises(ValueError, match="odd"):
        hist.rebin(2)


def test_rebin_factor_too_large_rejected():
    stream = make_poisson_stream(0.4, 10_000.0, seed=37)
    hist = correlate2(stream, 0, 1, 100, 300, normalization="none")
    with pytest.raises(ValueError, match="complete"):
        hist.rebin(9)  # only 3 bins per side available


def test_edges_are_contiguous_and_symmetric():
    stream = make_poisson_stream(0.4, 10_000.0, seed=41)
    hist = correlate2(stream, 0, 1, 10, 500, normalization="none")
    edges = hist.edges_ps
    assert edges.size == hist.counts.size + 1
    assert_array_equal(np.diff(edges), hist.tick_widths)
    np.testing.assert_allclose(edges, -edges[::-1])


# --------------------------------------------------------------------------
# correlate3


def test_triple_hist_matches_brute_force():
    rng = np.random.default_rng(55)
    stream = random_stream(rng, 150, 20_000, n_channels=3)
    result = correlate3(stream, 0, 1, 2, 50, 500, normalization="none")
    expected = brute_triples(
        stream.select(0), stream.select(1), stream.select(2),
        False, False, False, 50, 500,
    )
    assert_array_equal(result.counts.astype(np.int64), expected)


def test_triple_hist_same_channel_exclusions():
    rng = np.random.default_rng(56)
    stream = random_stream(rng, 200, 15_000, n_channels=2)
    result = correlate3(stream, 0, 1, 1, 40, 400, normalization="none")
    expected = brute_triples(
        stream.select(0), stream.select(1), stream.select(1),
        False, False, True, 40, 400,
    )
    assert_array_equal(result.counts.astype(np.int64), expected)


def test_triple_chunked_equals_single_pass():
    rng = np.random.default_rng(57)
    stream = random_stream(rng, 1_000, 50_000, n_channels=3)
    single = correlate3(stream, 0, 1, 2, 100, 1_000, normalization="none")
    split = correlate3(
        stream, 0, 1, 2, 100, 1_000, normalization="none",
        chunks=11, workers=4,
    )
    assert_array_equal(single.counts, split.counts)


def test_triple_axis_swap_transposes():
    rng = np.random.default_rng(58)
    stream = random_stream(rng, 500, 30_000, n_channels=3)
    ab = correlate3(stream, 0, 1, 2, 100, 1_000, normalization="none")
    ba = correlate3(stream, 0, 2, 1, 100, 1_000, normalization="none")
    assert_array_equal(ab.counts, ba.counts.T)


def test_triple_poisson_is_flat():
    stream = make_poisson_stream(0.5, 40_000.0, n_channels=3, seed=60)
    result = correlate3(
        stream, 0, 1, 2, 500, 2_500, normalization="uncorrelated"
    )
    norm = result.normalized
    area = np.outer(result.tick_widths, result.tick_widths)
    expected = result.density * area
    assert expected.min() > 300
    sigma = 1.0 / np.sqrt(expected)
    assert np.all(np.abs(norm - 1.0) < 5 * sigma)


def test_triple_comb_single_hot_cell():
    period = 2_000
    n = 300
    ta = np.arange(n, dtype=np.int64) * period + 500
    tb = ta + 130
    tc = ta - 70
    channels = np.concatenate(
        [np.zeros(n, np.uint8), np.ones(n, np.uint8), np.full(n, 2, np.uint8)]
    )
    times = np.concatenate([ta, tb, tc])
    order = np.argsort(times, kind="stable")
    stream = TagStream(channels[order], times[order], n * period + 1_000)
    result = correlate3(stream, 0, 1, 2, 100, 500, normalization="none")
    k = result.counts.size // 2 if result.counts.ndim == 1 else (
        result.lag_centers_ps.size // 2
    )
    i = k + brute_index(130, 100)
    j = k + brute_index(-70, 100)
    assert result.counts[i, j] == n
    assert result.counts.sum() == n


# --------------------------------------------------------------------------
# output formats and throughput


def test_csv_and_json_outputs(tmp_path):
    stream = make_poisson_stream(0.3, 20_000.0, seed=71)
    hist = correlate2(stream, 0, 1, 100, 2_000, normalization="uncorrelated")
    csv_path = tmp_path / "hist.csv"
    hist.to_csv(csv_path)
    rows = csv_path.read_text().strip().splitlines()
    assert rows[0] == "lag_ps,tick_width,counts,normalized,accidental_estimate"
    assert len(rows) == hist.counts.size + 1
    first = rows[1].split(",")
    assert int(first[0]) == hist.lag_centers_ps[0]
    assert int(first[2]) == hist.counts[0]

    json_path = tmp_path / "hist.json"
    hist.to_json(json_path)
    import json

    payload = json.loads(json_path.read_text())
    assert payload["kind"] == "histogram2"
    assert payload["counts"] == [int(c) for c in hist.counts]
    assert payload["density_per_tick"] == hist.density

    tri = correlate3(stream, 0, 1, 1, 200, 1_000, normalization="none")
    tri_csv = tmp_path / "tri.csv"
    tri.to_csv(tri_csv)
    tri_rows = tri_csv.read_text().strip().splitlines()
    assert tri_rows[0] == "lag_ab_ps,lag_ac_ps,counts"
    assert len(tri_rows) == tri.lag_centers_ps.size ** 2 + 1


def test_benchmark_smoke():
    report = benchmark_throughput(n_tags=200_000, seed=2)
    assert report["n_tags"] == pytest.approx(200_000, rel=0.05)
    assert report["tags_per_s"] > 0
