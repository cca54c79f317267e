"""File-system access for datasets and checkpoints.

Only local paths are backed; ``_BACKENDS`` is the uri-scheme seam where a
remote store could be attached.
"""
from __future__ import annotations

import os
import queue
import threading
from typing import Callable, Iterator

from .errors import IoError, NotFound, PermissionDenied, WriterClosed


def _local_path(uri: str) -> str:
    return uri[len("file://"):] if uri.startswith("file://") else uri


def _scheme(uri: str) -> str:
    head, sep, _ = uri.partition("://")
    return head if sep else "file"


_BACKENDS: dict[str, Callable[[str], str]] = {"file": _local_path}


def resolve(uri: str) -> str:
    uri = os.fspath(uri)
    scheme = _scheme(uri)
    if scheme not in _BACKENDS:
        raise IoError(f"no io backend for scheme {scheme!r} ({uri})")
    return _BACKENDS[scheme](uri)


def _open(uri: str, mode: str):
    path = resolve(uri)
    try:
        return open(path, mode)
    except FileNotFoundError:
        raise NotFound(f"no such file: {uri}") from None
    except PermissionError:
        raise PermissionDenied(f"permission denied: {uri}") from None
    except IsADirectoryError:
        raise IoError(f"is a directory: {uri}") from None


class LineReader:
    """Reads a UTF-8 text file one line at a time.

    Lines are returned without their trailing newline. Invalid UTF-8 raises
    :class:`IoError` instead of being replaced.
    """

    def __init__(self, uri: str):
        self.uri = os.fspath(uri)
        self._fh = _open(self.uri, "rb")
        self.line_no = 0

    @property
    def position(self) -> int:
        return self._fh.tell()

    def readline(self) -> str | None:
        raw = self._fh.readline()
        if not raw:
            return None
        self.line_no += 1
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise IoError(f"{self.uri}:{self.line_no}: invalid UTF-8 ({e.reason})") from None
        if text.endswith("\n"):
            text = text[:-1]
            if text.endswith("\r"):
                text = text[:-1]
        return text

    def reset(self) -> None:
        self._fh.seek(0)
        self.line_no = 0

    def close(self) -> None:
        self._fh.close()

    def __iter__(self) -> Iterator[str]:
        while (line := self.readline()) is not None:
            yield line

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_line_reader(uri: str) -> LineReader:
    return LineReader(uri)


def read_lines(uri: str) -> list[str]:
    with open_line_reader(uri) as r:
        return list(r)


_STOP = object()


class AsyncWriter:
    """Writes byte payloads to one file from a background thread.

    ``submit`` only enqueues; payloads reach disk in submission order. A
    failed write is remembered and raised by the next :meth:`flush_barrier`.
    """

    def __init__(self, uri: str):
        self.uri = os.fspath(uri)
        self._fh = _open(self.uri, "wb")
        self._queue: queue.Queue = queue.Queue()
        self._error: BaseException | None = None
        self._closed = False
        self._worker = threading.Thread(target=self._run, name=f"AsyncWriter({self.uri})", daemon=True)
        self._worker.start()

    @property
    def queue_depth(self) -> int:
        return self._queue.unfinished_tasks

    def _run(self) -> None:
        while True:
            item = self._queue.get()
            try:
                if item is _STOP:
                    return
                if self._error is None:
                    self._fh.write(item)
                    self._fh.flush()
            except OSError as e:
                self._error = e
            finally:
                self._queue.task_done()

    def submit(self, payload: bytes) -> None:
        if self._closed:
            raise WriterClosed(f"writer for {self.uri} is closed")
        if isinstance(payload, str):
            payload = payload.encode("utf-8")
        self._queue.put(bytes(payload))

    def flush_barrier(self) -> None:
        if self._closed:
            raise WriterClosed(f"writer for {self.uri} is closed")
        self._queue.join()
        if self._error is None:
            try:
                os.fsync(self._fh.fileno())
            except OSError as e:
                if not _fsync_unsupported(e):
                    self._error = e
        if self._error is not None:
            err, self._error = self._error, None
            raise IoError(f"deferred write to {self.uri} failed: {err}") from err

    def close(self) -> None:
        if self._closed:
            return
        try:
            self.flush_barrier()
        finally:
            self._closed = True
            self._queue.put(_STOP)
            self._worker.join()
            try:
                self._fh.close()
            except OSError:
                pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _fsync_unsupported(e: OSError) -> bool:
    import errno

    return e.errno in (errno.EINVAL, errno.ENOTSUP, errno.EROFS)


def submit_write(writer: AsyncWriter, payload: bytes) -> None:
    writer.submit(payload)


def flush_barrier(writer: AsyncWriter) -> None:
    writer.flush_barrier()
