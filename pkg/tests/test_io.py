import os

import pytest
from hypothesis import given, settings, strategies as st

from pgen.errors import IoError, NotFound, WriterClosed
from pgen.io import AsyncWriter, flush_barrier, open_line_reader, read_lines, submit_write


def _write(path, data: bytes):
    with open(path, "wb") as f:
        f.write(data)
    return str(path)


def test_reader_lines(tmp_path):
    p = _write(tmp_path / "f.txt", b"a\nb\nc\n")
    assert list(open_line_reader(p)) == ["a", "b", "c"]
    assert read_lines(_write(tmp_path / "e.txt", b"")) == []
    assert read_lines(_write(tmp_path / "crlf.txt", b"x\r\ny")) == ["x", "y"]
    assert read_lines("file://" + p) == ["a", "b", "c"]


def test_reader_missing_and_bad_utf8(tmp_path):
    with pytest.raises(NotFound):
        open_line_reader(str(tmp_path / "nope"))
    p = _write(tmp_path / "bad.txt", b"ok\n\xff\xfe\n")
    r = open_line_reader(p)
    assert r.readline() == "ok"
    with pytest.raises(IoError):
        r.readline()


def test_reader_reset(tmp_path):
    r = open_line_reader(_write(tmp_path / "f.txt", b"a\nb\n"))
    assert r.readline() == "a"
    r.reset()
    assert list(r) == ["a", "b"]


def test_writer_fifo(tmp_path):
    p = str(tmp_path / "o.bin")
    w = AsyncWriter(p)
    submit_write(w, b"a")
    submit_write(w, b"b")
    flush_barrier(w)
    assert w.queue_depth == 0
    with open(p, "rb") as f:
        assert f.read() == b"ab"
    flush_barrier(w)  # empty queue returns at once
    w.close()
    with pytest.raises(WriterClosed):
        w.submit(b"x")


def test_writer_many_payloads(tmp_path):
    p = str(tmp_path / "o.bin")
    with AsyncWriter(p) as w:
        for i in range(500):
            w.submit(b"%d\n" % i)
        w.flush_barrier()
        assert w.queue_depth == 0
    assert read_lines(p) == [str(i) for i in range(500)]


@pytest.mark.skipif(not os.path.exists("/dev/full"), reason="needs /dev/full")
def test_deferred_error_surfaces_at_barrier():
    w = AsyncWriter("/dev/full")
    w.submit(b"x" * 65536)  # submit itself does not fail
    with pytest.raises(IoError):
        w.flush_barrier()
    w.close()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.binary(max_size=64), max_size=20))
def test_async_equals_sync(tmp_path_factory, payloads):
    d = tmp_path_factory.mktemp("w")
    with AsyncWriter(str(d / "a")) as w:
        for p in payloads:
            w.submit(p)
    with open(d / "s", "wb") as f:
        for p in payloads:
            f.write(p)
    assert (d / "a").read_bytes() == (d / "s").read_bytes()


def test_reader_unaffected_by_writer(tmp_path):
    p = _write(tmp_path / "f.txt", b"a\nb\n")
    with AsyncWriter(str(tmp_path / "other")) as w:
        w.submit(b"zzz")
        assert read_lines(p) == ["a", "b"]
