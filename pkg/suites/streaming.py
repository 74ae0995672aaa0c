"""
Streaming Suite
Chunk-plan arithmetic, the ratio filter's feasibility guarantee and
end-to-end causality of chunked generation on a tiny untrained model.
"""

from __future__ import annotations
import logging

import numpy as np

from core.backbone import BelleModel
from core.errors import DataError
from core.model_config import ModelConfig
from core.sampler import STREAM_GENERATE, RngStream
from core.sequences import TokenSequence
from core.streaming import (
    build_chunk_mask,
    iter_stream,
    partition,
    ratio_ok,
    split_text,
    stream_generate,
)
from core.suite_base import CheckFn, VerifySuite

logger = logging.getLogger(__name__)

S_TEXT = 2
S_AUDIO = 3
MAX_FRAMES = 12


class StreamingSuite(VerifySuite):
    id = "streaming"
    display_name = "Chunked streaming"
    description = "Partition examples, feasibility closure, prefix causality, reassembly"

    def __init__(self, options=None):
        super().__init__(options)
        self.model = BelleModel(ModelConfig.from_preset("tiny"), seed=self.seed)

    def checks(self) -> dict[str, CheckFn]:
        return {
            "partition_examples": self.check_partition_examples,
            "feasibility_closure": self.check_feasibility,
            "chunk_mask_order": self.check_mask,
            "prefix_causality": self.check_prefix_causality,
            "incremental_consumption": self.check_incremental,
            "reassembly_length": self.check_reassembly,
            "single_chunk_matches_generate": self.check_single_chunk,
        }

    def _rng(self) -> RngStream:
        return RngStream(self.seed, STREAM_GENERATE)

    def _text(self, ids) -> TokenSequence:
        return TokenSequence(tuple(ids), self.model.cfg.vocab_size)

    # ------------------------------------------------------------------ #

    def check_partition_examples(self) -> tuple[bool, str]:
        plan = partition(45, 230, 20, 50)
        sizes_ok = plan.text_sizes() == [20, 20, 5] and plan.audio_sizes() == [50, 50, 130]
        try:
            partition(45, 100, 20, 50)
            rejected = False
        except DataError:
            rejected = True
        boundary = ratio_ok(40, 100) and not ratio_ok(40, 99)
        ok = sizes_ok and rejected and boundary
        return ok, f"sizes {plan.text_sizes()} / {plan.audio_sizes()}, infeasible rejected={rejected}"

    def check_feasibility(self) -> tuple[bool, str]:
        rng = RngStream(self.seed, 41)
        count = self.size(10_000, 1_000)
        text_lens = rng.integers(1, 200, size=count)
        audio_lens = rng.integers(1, 1000, size=count)
        kept, failures = 0, 0
        for t, a in zip(text_lens.tolist(), audio_lens.tolist()):
            if not ratio_ok(t, a, 50 / 20):
                continue
            kept += 1
            try:
                partition(t, a, 20, 50)
            except DataError:
                failures += 1
        return failures == 0, f"{kept} of {count} length pair(s) kept, {failures} infeasible"

    def check_mask(self) -> tuple[bool, str]:
        plan = partition(45, 230, 20, 50)
        mask = build_chunk_mask(plan)
        roles = plan.roles()
        first_audio = [i for i, r in enumerate(roles) if r == ("audio", 0)]
        second_text = [j for j, r in enumerate(roles) if r == ("text", 1)]
        blind = not mask[np.ix_(first_audio, second_text)].any()
        lower = np.array_equal(mask, np.tril(np.ones_like(mask)))
        return blind and lower, f"{mask.shape[0]} position(s); y(1) blind to x(2): {blind}"

    def check_prefix_causality(self) -> tuple[bool, str]:
        v = self.model.cfg.vocab_size
        base = [1, 2, 3, 4, 5, 6]
        variant = base[:4] + [(base[4] + 3) % v, (base[5] + 5) % v]
        outputs = []
        for ids in (base, variant):
            chunks = split_text(self._text(ids), S_TEXT)
            emitted = list(iter_stream(chunks, self.model, self._rng(), S_AUDIO, MAX_FRAMES))
            outputs.append([c.frames for c in emitted])
        same = all(np.array_equal(a, b) for a, b in zip(outputs[0][:2], outputs[1][:2]))
        return same, f"chunks 1-2 bit-identical across different x(3): {same}"

    def check_incremental(self) -> tuple[bool, str]:
        pulled = []

        def source():
            for chunk in split_text(self._text([1, 2, 3, 4, 5, 6]), S_TEXT):
                pulled.append(chunk)
                yield chunk

        stream = iter_stream(source(), self.model, self._rng(), S_AUDIO, MAX_FRAMES)
        first = next(stream)
        consumed_at_first = len(pulled)
        rest = list(stream)
        ok = first.index == 0 and consumed_at_first == 1 and len(rest) == 2
        return ok, f"text chunks consumed before first emission: {consumed_at_first}"

    def check_reassembly(self) -> tuple[bool, str]:
        chunks = split_text(self._text([1, 2, 3, 4, 5, 6, 7]), S_TEXT)
        result = stream_generate(chunks, self.model, self._rng(), S_AUDIO, MAX_FRAMES)
        sizes = [c.frames.shape[0] for c in result.chunks]
        m = len(sizes)
        expected = (m - 1) * S_AUDIO + sizes[-1]
        ok = all(s == S_AUDIO for s in sizes[:-1]) and result.assemble().length == expected
        return ok, f"chunk sizes {sizes}, assembled {result.assemble().length} frame(s)"

    def check_single_chunk(self) -> tuple[bool, str]:
        text = self._text([3, 1, 4])
        streamed = stream_generate(split_text(text, 20), self.model, self._rng(), S_AUDIO, MAX_FRAMES)
        direct = self.model.generate(text, None, self._rng(), max_frames=MAX_FRAMES)
        same = np.array_equal(streamed.assemble().frames, direct.frames)
        return same, f"M=1 stream {streamed.assemble().length} frame(s) vs generate {direct.length}"
