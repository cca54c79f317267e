"""Builds every component from a run configuration and drives the four
subcommands: preprocess, train, generate, evaluate."""
from __future__ import annotations

import copy
import logging
import os

from . import checkpoint as ckpt_io
from .batching import DataLoader, Prefetcher, StreamingDataLoader, shard_stream
from .config import derive_seed
from .data import StreamingDataset
from .errors import ConfigError
from .evaluation import EvalSet, Evaluator
from .generator import SequenceGenerator, write_lines
from .io import AsyncWriter, read_lines
from .pipeline import BpeModel, FieldSpec, Vocabulary, bpe_train, build_vocab, collate, data_collate
from .registry import REGISTRY
from .trainer import Trainer

log = logging.getLogger(__name__)


def _with_seed(sub: dict, seed: int, name: str, key: str = "seed") -> dict:
    sub = copy.deepcopy(sub)
    sub.setdefault(key, derive_seed(seed, name))
    return sub


class Task:
    def __init__(self, config: dict):
        self.config = config
        self.seed = config["seed"]
        self._vocab: Vocabulary | None = None
        self._bpe: BpeModel | None = None

    # -- tokenization
    def preprocess(self) -> tuple[BpeModel, Vocabulary]:
        pc = self.config["preprocess"]
        if not pc["corpus"]:
            raise ConfigError("preprocess.corpus lists no files")
        lines = [line for path in pc["corpus"] for line in read_lines(path)]
        bpe = bpe_train(lines, pc["bpe_merges"])
        vocab = build_vocab((bpe.encode(line) for line in lines), pc["min_count"])
        for path in (pc["bpe_path"], pc["vocab_path"]):
            os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        bpe.save(pc["bpe_path"])
        vocab.save(pc["vocab_path"])
        log.info("bpe: %d merges, vocab: %d tokens", len(bpe.merges), len(vocab))
        return bpe, vocab

    @property
    def bpe(self) -> BpeModel:
        if self._bpe is None:
            self._bpe = BpeModel.load(self.config["preprocess"]["bpe_path"])
        return self._bpe

    @property
    def vocab(self) -> Vocabulary:
        if self._vocab is None:
            self._vocab = Vocabulary.load(self.config["preprocess"]["vocab_path"])
        return self._vocab

    def field_spec(self, inference: bool = False) -> FieldSpec:
        d = self.config["data"]
        return FieldSpec(d["src_field"], d["tgt_field"], inference)

    def process(self, sample: dict, inference: bool = False):
        return data_collate(sample, self.vocab, self.bpe, self.field_spec(inference))

    # -- components
    def build_model(self):
        return REGISTRY.create("model", _with_seed(self.config["model"], self.seed, "model"),
                               vocab_size=len(self.vocab))

    def build_sampler(self):
        cfg = self.config["sampler"]
        if "seed" in _factory_params("sampler", cfg["class"]):
            cfg = _with_seed(cfg, self.seed, "sampler")
        return REGISTRY.create("sampler", cfg)

    def build_train_loader(self):
        dcfg = self.config["data"]
        dataset = REGISTRY.create("dataset", dcfg["train"])
        sampler = self.build_sampler()
        if isinstance(dataset, StreamingDataset):
            lc = self.config["dataloader"]
            if lc["num_workers"] > 1:
                dataset = shard_stream(dataset, lc["worker_id"], lc["num_workers"])
            loader = StreamingDataLoader(dataset, sampler, self.process, lc["buffer_size"],
                                         derive_seed(self.seed, "dataloader"), dcfg["on_error"])
            return Prefetcher(loader) if lc["prefetch"] else loader
        return DataLoader([self.process(s) for s in dataset], sampler)

    def build_search(self):
        return REGISTRY.create("search", self.config["search"])

    def build_generator(self, model):
        return SequenceGenerator(model, self.build_search(), self.vocab, self.bpe)

    def eval_sets(self) -> dict[str, EvalSet]:
        ecfg = self.config["evaluator"]
        tgt = self.config["data"]["tgt_field"]
        out = {}
        for name, sub in ecfg["datasets"].items():
            samples = REGISTRY.create("dataset", sub)
            proc = [self.process(s, inference=True) for s in samples]
            bs = ecfg["batch_size"]
            batches = [collate(proc[i : i + bs]) for i in range(0, len(proc), bs)]
            out[name] = EvalSet(batches, [str(s.get(tgt, "")) for s in samples])
        return out

    def build_evaluator(self):
        sets = self.eval_sets()
        return Evaluator(sets, self.config["evaluator"]["metrics"]) if sets else None

    def load_model(self, path: str):
        model = self.build_model()
        model.load_arrays(ckpt_io.load(path).params)
        return model

    # -- subcommands
    def train(self):
        tc = self.config["trainer"]
        model = self.build_model()
        criterion = REGISTRY.create("criterion", self.config["criterion"])
        optimizer = REGISTRY.create("optimizer", self.config["optimizer"], lr=tc["lr"])
        evaluator = self.build_evaluator()
        os.makedirs(tc["save_dir"], exist_ok=True)
        trainer = Trainer(
            model, criterion, self.build_train_loader(), optimizer,
            max_steps=tc["max_steps"], accumulate=tc["accumulate"], eval_interval=tc["eval_interval"],
            patience=tc["patience"], evaluator=evaluator,
            generator=self.build_generator(model) if evaluator else None,
            assess_by=tc["assess_by"] if evaluator else None, avg_k=tc["avg_k"], save_dir=tc["save_dir"],
            seed=derive_seed(self.seed, "trainer"), log_interval=tc["log_interval"],
        )
        return trainer.train(resume_from=tc["resume"])

    def generate(self) -> list[str]:
        gc = self.config["generate"]
        model = self.load_model(gc["checkpoint"])
        samples = REGISTRY.create("dataset", gc["input"])
        proc = [self.process(s, inference=True) for s in samples]
        gen = self.build_generator(model)
        bs = gc["batch_size"]
        hyps = gen.generate_all(collate(proc[i : i + bs]) for i in range(0, len(proc), bs))
        os.makedirs(os.path.dirname(gc["output"]) or ".", exist_ok=True)
        write_lines(hyps, gc["output"])
        return hyps

    def evaluate(self):
        ec = self.config["evaluate"]
        evaluator = self.build_evaluator()
        if evaluator is None:
            raise ConfigError("evaluator.datasets is empty")
        board = evaluator(self.build_generator(self.load_model(ec["checkpoint"])))
        os.makedirs(os.path.dirname(ec["output"]) or ".", exist_ok=True)
        with AsyncWriter(ec["output"]) as w:
            w.submit(board.to_json().encode("utf-8") + b"\n")
        return board


def _factory_params(kind: str, name: str) -> set[str]:
    import inspect

    return set(inspect.signature(REGISTRY.get(kind, name)).parameters)
