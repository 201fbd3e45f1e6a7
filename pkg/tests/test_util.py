"""Timestamp handling, atomic writes, and hashing."""

from __future__ import annotations

import hashlib
from datetime import datetime, timedelta, timezone

import pytest

from snoscope.util import atomic_write, format_rfc3339, parse_rfc3339, sha256_file


class TestParseRfc3339:
    def test_z_suffix_is_utc(self):
        stamp = parse_rfc3339("2021-03-01T12:30:45Z")
        assert stamp == datetime(2021, 3, 1, 12, 30, 45, tzinfo=timezone.utc)
        assert stamp.tzinfo == timezone.utc

    def test_numeric_offset_is_normalized_to_utc(self):
        stamp = parse_rfc3339("2021-03-01T12:30:45+02:00")
        assert stamp == datetime(2021, 3, 1, 10, 30, 45, tzinfo=timezone.utc)
        assert stamp.utcoffset() == timedelta(0)

    def test_fractional_seconds_survive(self):
        stamp = parse_rfc3339("2021-03-01T12:30:45.125Z")
        assert stamp.microsecond == 125000

    def test_naive_timestamp_rejected(self):
        with pytest.raises(ValueError):
            parse_rfc3339("2021-03-01T12:30:45")

    def test_garbage_rejected(self):
        with pytest.raises(ValueError):
            parse_rfc3339("yesterday")


class TestFormatRfc3339:
    def test_round_trip(self):
        for text in ("2021-03-01T12:30:45Z", "2021-12-31T23:59:59.000001Z"):
            assert format_rfc3339(parse_rfc3339(text)) == text

    def test_non_utc_input_rendered_as_utc(self):
        stamp = datetime(2021, 3, 1, 12, 0, 0, tzinfo=timezone(timedelta(hours=5)))
        assert format_rfc3339(stamp) == "2021-03-01T07:00:00Z"

    def test_whole_seconds_have_no_fraction(self):
        assert format_rfc3339(datetime(2021, 3, 1, tzinfo=timezone.utc)) == "2021-03-01T00:00:00Z"


class TestAtomicWrite:
    def test_writes_file(self, tmp_path):
        target = tmp_path / "out.txt"
        with atomic_write(target) as handle:
            handle.write("hello\n")
        assert target.read_text() == "hello\n"

    def test_failure_leaves_nothing(self, tmp_path):
        target = tmp_path / "out.txt"
        with pytest.raises(RuntimeError):
            with atomic_write(target) as handle:
                handle.write("partial")
                raise RuntimeError("boom")
        assert not target.exists()
        assert list(tmp_path.iterdir()) == []  # no stray temp files either

    def test_failure_preserves_previous_content(self, tmp_path):
        target = tmp_path / "out.txt"
        target.write_text("old\n")
        with pytest.raises(RuntimeError):
            with atomic_write(target) as handle:
                handle.write("new")
                raise RuntimeError("boom")
        assert target.read_text() == "old\n"

    def test_overwrites_existing(self, tmp_path):
        target = tmp_path / "out.txt"
        target.write_text("old\n")
        with atomic_write(target) as handle:
            handle.write("new\n")
        assert target.read_text() == "new\n"


class TestSha256File:
    def test_matches_hashlib(self, tmp_path):
        target = tmp_path / "blob.bin"
        payload = b"snoscope\n" * 1000
        target.write_bytes(payload)
        assert sha256_file(target) == hashlib.sha256(payload).hexdigest()
