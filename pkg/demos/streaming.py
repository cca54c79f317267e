"""Stream a large corpus through the shuffle buffer and watch memory stay flat.

Usage: python3 demos/streaming.py [n_lines] [buffer_size]
"""
import os
import sys
import tempfile
import time

import numpy as np

from pgen.batching import StreamingDataLoader, TokenBudgetSampler
from pgen.data import End, StreamingDataset, text_parser
from pgen.pipeline import ProcessedSample


def main(n=200_000, buffer_size=1024):
    lengths = np.random.default_rng(0).integers(1, 17, n)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "corpus.txt")
        with open(path, "w") as f:
            f.write("".join(f"{i} {k}\n" for i, k in enumerate(lengths)))

        def process(sample):
            i, k = sample["x"].split(" ")
            return ProcessedSample([int(i)] * int(k))

        loader = StreamingDataLoader(StreamingDataset(path, text_parser("x")), TokenBudgetSampler(256), process,
                                     buffer_size, seed=0)
        t0, batches, seen = time.time(), 0, np.zeros(n, dtype=np.int64)
        while (b := loader.next_batch()) is not End:
            batches += 1
            seen[b.src_tokens[:, 0]] += 1
            if batches % 5000 == 0:
                print(f"batch {batches}: resident {loader.resident}, first ids {b.src_tokens[:3, 0].tolist()}")
        print(f"{n} lines in {batches} batches, {time.time() - t0:.1f}s")
        print(f"peak resident samples {loader.peak_resident} with buffer {buffer_size}")
        print(f"every line seen exactly once: {bool((seen == 1).all())}")


if __name__ == "__main__":
    main(*(int(a) for a in sys.argv[1:3]))
