import math

import numpy as np
import pytest

from skycast.errors import DataError
from skycast.timeseries import (
    TimeSeriesTable,
    detect_gaps,
    format_timestamp,
    parse_csv,
    parse_timestamp,
    write_csv,
)


def make_table(n=10, cadence=60, t0=1_600_000_000, **cols):
    ts = t0 + cadence * np.arange(n, dtype=np.int64)
    if not cols:
        cols = {"ghi": np.linspace(0.0, 500.0, n)}
    return TimeSeriesTable(ts, {k: np.asarray(v, dtype=float) for k, v in cols.items()}, cadence)


class TestTimestampCodec:
    def test_zulu_suffix(self):
        # 2020-01-01T00:00:00Z is 1577836800; +152 days (Jan..May) +12h.
        assert parse_timestamp("2020-06-01T12:00:00Z") == 1577836800 + 152 * 86400 + 43200

    def test_explicit_offset(self):
        assert parse_timestamp("2020-06-01T05:00:00-07:00") == parse_timestamp(
            "2020-06-01T12:00:00Z"
        )

    def test_naive_is_utc(self):
        assert parse_timestamp("2020-06-01T12:00:00") == parse_timestamp(
            "2020-06-01T12:00:00Z"
        )

    def test_round_trip(self):
        for s in (0, 1, 1590998400, 2_000_000_000):
            assert parse_timestamp(format_timestamp(s)) == s


class TestTableInvariants:
    def test_irregular_grid_rejected(self):
        ts = np.array([0, 60, 180], dtype=np.int64)
        with pytest.raises(DataError, match="regular"):
            TimeSeriesTable(ts, {"x": np.zeros(3)}, 60)

    def test_wrong_column_length_rejected(self):
        ts = np.array([0, 60], dtype=np.int64)
        with pytest.raises(DataError, match="entries"):
            TimeSeriesTable(ts, {"x": np.zeros(3)}, 60)

    def test_index_of(self):
        t = make_table(n=5, cadence=60, t0=1000)
        assert t.index_of(1000) == 0
        assert t.index_of(1240) == 4
        with pytest.raises(DataError):
            t.index_of(1030)  # off-grid
        with pytest.raises(DataError):
            t.index_of(1300)  # past the end

    def test_with_columns_does_not_mutate(self):
        t = make_table(n=3)
        t2 = t.with_columns({"extra": np.ones(3)})
        assert "extra" in t2.columns and "extra" not in t.columns


class TestParseCsv:
    def test_three_row_identity(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(
            "timestamp,ghi,dni\n"
            "2020-06-01T12:00:00Z,450.5,800.0\n"
            "2020-06-01T12:01:00Z,451.0,801.5\n"
            "2020-06-01T12:02:00Z,452.25,799.0\n"
        )
        t = parse_csv(str(p))
        assert len(t) == 3
        assert t.cadence_s == 60
        assert t.timestamps[0] == parse_timestamp("2020-06-01T12:00:00Z")
        np.testing.assert_array_equal(t.columns["ghi"], [450.5, 451.0, 452.25])
        np.testing.assert_array_equal(t.columns["dni"], [800.0, 801.5, 799.0])

    def test_missing_minute_becomes_nan_row(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(
            "timestamp,ghi\n"
            "2020-06-01T12:00:00Z,450.0\n"
            "2020-06-01T12:02:00Z,452.0\n"
        )
        t = parse_csv(str(p))
        assert len(t) == 3
        assert math.isnan(t.columns["ghi"][1])

    def test_unsorted_rows_accepted(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(
            "timestamp,ghi\n"
            "2020-06-01T12:01:00Z,1.0\n"
            "2020-06-01T12:00:00Z,0.0\n"
        )
        t = parse_csv(str(p))
        np.testing.assert_array_equal(t.columns["ghi"], [0.0, 1.0])

    def test_duplicate_timestamp_rejected(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(
            "timestamp,ghi\n"
            "2020-06-01T12:00:00Z,1.0\n"
            "2020-06-01T12:00:00Z,2.0\n"
        )
        with pytest.raises(DataError, match="duplicate timestamp"):
            parse_csv(str(p))

    def test_malformed_timestamp_reports_line(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("timestamp,ghi\nnot-a-time,1.0\n")
        with pytest.raises(DataError, match=r":2:"):
            parse_csv(str(p))

    def test_non_numeric_value_reports_line(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(
            "timestamp,ghi\n"
            "2020-06-01T12:00:00Z,1.0\n"
            "2020-06-01T12:01:00Z,oops\n"
        )
        with pytest.raises(DataError, match=r":3:.*oops"):
            parse_csv(str(p))

    def test_empty_and_literal_nan_fields_are_missing(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(
            "timestamp,ghi,dhi\n"
            "2020-06-01T12:00:00Z,,NaN\n"
            "2020-06-01T12:01:00Z,5.0,6.0\n"
        )
        t = parse_csv(str(p))
        assert math.isnan(t.columns["ghi"][0]) and math.isnan(t.columns["dhi"][0])
        assert t.columns["ghi"][1] == 5.0

    def test_schema_renames_headers(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("timestamp,Global Horizontal [W/m^2]\n2020-06-01T12:00:00Z,3.0\n")
        t = parse_csv(str(p), schema={"Global Horizontal [W/m^2]": "ghi"})
        assert t.column_names == ["ghi"]

    def test_strict_schema_rejects_unknown_header(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("timestamp,ghi,mystery\n2020-06-01T12:00:00Z,3.0,4.0\n")
        with pytest.raises(DataError, match="mystery"):
            parse_csv(str(p), schema={"ghi": "ghi"}, strict=True)

    def test_no_timestamp_column_rejected(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("time,ghi\n2020-06-01T12:00:00Z,3.0\n")
        with pytest.raises(DataError, match="timestamp"):
            parse_csv(str(p))

    def test_off_grid_timestamp_rejected(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(
            "timestamp,ghi\n"
            "2020-06-01T12:00:00Z,1.0\n"
            "2020-06-01T12:00:30Z,2.0\n"
        )
        with pytest.raises(DataError):
            parse_csv(str(p))

    def test_matches_line_by_line_reference_parse(self, tmp_path):
        # Independent check: build the same table with plain text splitting.
        rng = np.random.default_rng(7)
        t0 = parse_timestamp("2021-03-01T00:00:00Z")
        lines = ["timestamp,a,b"]
        expect = {}
        for i in range(50):
            va, vb = (float(v) for v in rng.normal(size=2))
            ts = t0 + 60 * i
            lines.append(f"{format_timestamp(ts)},{va!r},{vb!r}")
            expect[ts] = (va, vb)
        p = tmp_path / "ref.csv"
        p.write_text("\n".join(lines) + "\n")

        t = parse_csv(str(p))
        for raw in lines[1:]:
            f = raw.split(",")
            i = t.index_of(parse_timestamp(f[0]))
            assert t.columns["a"][i] == float(f[1])
            assert t.columns["b"][i] == float(f[2])


class TestRoundTrip:
    def test_write_then_parse_is_identity(self, tmp_path):
        rng = np.random.default_rng(11)
        n = 200
        ghi = rng.uniform(0, 1000, n)
        ghi[rng.choice(n, 20, replace=False)] = np.nan
        t = make_table(n=n, ghi=ghi, temp=rng.normal(20, 5, n))
        p = tmp_path / "out.csv"
        write_csv(t, str(p))
        t2 = parse_csv(str(p))
        assert t2.cadence_s == t.cadence_s
        np.testing.assert_array_equal(t2.timestamps, t.timestamps)
        for name in t.column_names:
            np.testing.assert_array_equal(t2.columns[name], t.columns[name])


class TestDetectGaps:
    def test_no_gaps(self):
        t = make_table(n=10)
        r = detect_gaps(t, ["ghi"])
        assert r.intervals == []
        assert r.coverage_fraction == 1.0

    def test_single_interval_merging(self):
        ghi = np.ones(10)
        ghi[3:6] = np.nan
        t = make_table(n=10, t0=0, ghi=ghi)
        r = detect_gaps(t, ["ghi"])
        assert r.intervals == [(180, 300)]
        assert r.affected_columns == [["ghi"]]
        assert r.coverage_fraction == pytest.approx(0.7)

    def test_union_across_columns(self):
        a = np.ones(8)
        b = np.ones(8)
        a[2] = np.nan
        b[3] = np.nan
        t = make_table(n=8, t0=0, a=a, b=b)
        r = detect_gaps(t, ["a", "b"])
        assert r.intervals == [(120, 180)]
        assert r.affected_columns == [["a", "b"]]

    def test_only_required_columns_counted(self):
        a = np.ones(5)
        b = np.full(5, np.nan)
        t = make_table(n=5, a=a, b=b)
        assert detect_gaps(t, ["a"]).intervals == []

    def test_unknown_column_rejected(self):
        t = make_table(n=5)
        with pytest.raises(DataError, match="unknown column"):
            detect_gaps(t, ["nope"])

    def test_recovers_injected_gaps(self):
        # Property: punch random holes, the report must cover exactly them.
        rng = np.random.default_rng(3)
        for _ in range(20):
            n = 100
            x = rng.normal(size=n)
            holes = np.zeros(n, dtype=bool)
            holes[rng.choice(n, rng.integers(0, 30), replace=False)] = True
            x = np.where(holes, np.nan, x)
            t = make_table(n=n, t0=0, x=x)
            r = detect_gaps(t, ["x"])
            covered = np.zeros(n, dtype=bool)
            for a, b in r.intervals:
                covered[a // 60 : b // 60 + 1] = True
            np.testing.assert_array_equal(covered, holes)

    def test_overlap_query(self):
        ghi = np.ones(10)
        ghi[4] = np.nan
        t = make_table(n=10, t0=0, ghi=ghi)
        r = detect_gaps(t, ["ghi"])
        assert r.overlaps(240, 240)
        assert r.overlaps(200, 260)
        assert not r.overlaps(0, 180)
        assert not r.overlaps(300, 540)
