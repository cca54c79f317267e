"""Datasets: raw files in, ``dict`` samples out.

In-memory loaders return a list of samples. :class:`StreamingDataset` reads
one line at a time so memory does not grow with the corpus.
"""
from __future__ import annotations

import json
from typing import Any, Callable, Iterator, Sequence

from .errors import ConfigError, LengthMismatch, ParseError
from .io import open_line_reader, read_lines
from .registry import register

Sample = dict  # field name -> str | int | float | list[str]


class _End:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "End"

    def __bool__(self):
        return False


End = _End()


def _check_value(key: str, value: Any) -> None:
    if isinstance(value, bool) or value is None:
        raise ValueError(f"field {key!r}: unsupported value {value!r}")
    if isinstance(value, (str, int, float)):
        return
    if isinstance(value, list) and all(isinstance(v, str) for v in value):
        return
    raise ValueError(f"field {key!r}: values must be flat strings, numbers or string lists")


def json_parser(line: str) -> Sample:
    obj = json.loads(line)
    if not isinstance(obj, dict) or not obj:
        raise ValueError("expected a non-empty JSON object")
    for k, v in obj.items():
        _check_value(k, v)
    return obj


def text_parser(field: str = "text") -> Callable[[str], Sample]:
    def parse(line: str) -> Sample:
        return {field: line}

    return parse


def tsv_parser(fields: Sequence[str] = ("src", "tgt")) -> Callable[[str], Sample]:
    fields = tuple(fields)

    def parse(line: str) -> Sample:
        cols = line.split("\t")
        if len(cols) != len(fields):
            raise ValueError(f"expected {len(fields)} tab-separated columns, got {len(cols)}")
        return dict(zip(fields, cols))

    return parse


def load_parallel(src_uri: str, tgt_uri: str, src_field: str = "src", tgt_field: str = "tgt") -> list[Sample]:
    src = read_lines(src_uri)
    tgt = read_lines(tgt_uri)
    if len(src) != len(tgt):
        raise LengthMismatch(f"{src_uri} has {len(src)} lines but {tgt_uri} has {len(tgt)}")
    return [{src_field: s, tgt_field: t} for s, t in zip(src, tgt)]


def load_text(uri: str, field: str = "text") -> list[Sample]:
    return [{field: line} for line in read_lines(uri)]


def load_jsonl(uri: str) -> list[Sample]:
    out = []
    for i, line in enumerate(read_lines(uri), start=1):
        try:
            out.append(json_parser(line))
        except ValueError as e:
            raise ParseError(i, str(e)) from None
    return out


class StreamingDataset:
    """Iterates samples from a file in order, holding only the current line.

    ``num_shards``/``shard_id`` restrict the stream to lines whose 0-based
    position is ``shard_id`` modulo ``num_shards``; other lines are skipped
    without being parsed.
    """

    def __init__(self, uri: str, parser: Callable[[str], Sample], num_shards: int = 1, shard_id: int = 0):
        self.uri = uri
        self.parser = parser
        self.num_shards = num_shards
        self.shard_id = shard_id
        self._reader = open_line_reader(uri)
        self._pos = 0
        self.exhausted = False

    def next_sample(self):
        if self.exhausted:
            return End
        while True:
            line = self._reader.readline()
            if line is None:
                self.exhausted = True
                return End
            pos = self._pos
            self._pos += 1
            if pos % self.num_shards != self.shard_id:
                continue
            try:
                return self.parser(line)
            except (ValueError, KeyError, TypeError) as e:
                raise ParseError(self._reader.line_no, str(e)) from None

    def reset(self) -> None:
        self._reader.reset()
        self._pos = 0
        self.exhausted = False

    def close(self) -> None:
        self._reader.close()

    def __iter__(self) -> Iterator[Sample]:
        while (s := self.next_sample()) is not End:
            yield s


def stream_open(uri: str, parser: Callable[[str], Sample]) -> StreamingDataset:
    return StreamingDataset(uri, parser)


def next_sample(ds: StreamingDataset):
    return ds.next_sample()


_PARSERS = {"text": lambda fields: text_parser(*fields), "tsv": tsv_parser, "jsonl": lambda fields: json_parser}


@register("dataset", "parallel")
def parallel_dataset(src: str, tgt: str, src_field: str = "src", tgt_field: str = "tgt"):
    return load_parallel(src, tgt, src_field, tgt_field)


@register("dataset", "text")
def text_dataset(path: str, field: str = "src"):
    return load_text(path, field)


@register("dataset", "jsonl")
def jsonl_dataset(path: str):
    return load_jsonl(path)


@register("dataset", "streaming")
def streaming_dataset(path: str, format: str = "tsv", fields: Sequence[str] = ("src", "tgt")):
    if format not in _PARSERS:
        raise ConfigError(f"unknown streaming format {format!r}; choose from {sorted(_PARSERS)}")
    return StreamingDataset(path, _PARSERS[format](list(fields)))
