"""
Corpus Suite
Template separation, the nearest-template decoder as an exact oracle, teacher
transforms and the BELM round trip.
"""

from __future__ import annotations
import logging
from dataclasses import replace

import numpy as np

from core.corpus import (
    CorpusSpec,
    build_corpus,
    decode_corpus,
    decode_nearest,
    encode_corpus,
    render_utterance,
    sample_texts,
    template_bank,
)
from core.metrics import corpus_token_error_rate
from core.suite_base import CheckFn, VerifySuite

logger = logging.getLogger(__name__)


class CorpusSuite(VerifySuite):
    id = "corpus"
    display_name = "Procedural corpus"
    description = "Template margin, exact decoding, teacher transforms, file round trip"

    def __init__(self, options=None):
        super().__init__(options)
        self.spec = CorpusSpec(seed=self.seed)

    @property
    def count(self) -> int:
        return self.size(2000, 200)

    def checks(self) -> dict[str, CheckFn]:
        return {
            "template_margin": self.check_margin,
            "noiseless_decode": self.check_noiseless_decode,
            "noisy_decode": self.check_noisy_decode,
            "teacher_decode": self.check_teacher_decode,
            "teacher_affine": self.check_teacher_affine,
            "file_round_trip": self.check_round_trip,
        }

    def _decode_error(self, spec: CorpusSpec, teacher_id: int = 0) -> float:
        pairs = []
        for i, (text, speaker) in enumerate(sample_texts(spec, self.count)):
            u = render_utterance(text, speaker, teacher_id, i, spec)
            pairs.append((text, decode_nearest(u.mel, spec, speaker)))
        return corpus_token_error_rate(pairs)

    # ------------------------------------------------------------------ #

    def check_margin(self) -> tuple[bool, str]:
        bank = template_bank(self.spec)
        bound = self.spec.amplitude + 0.5
        in_range = bool(np.all(np.abs(bank.templates) <= bound))
        return bank.margin > 0 and in_range, f"margin m = {bank.margin:.4f}, |templates| <= {bound}"

    def check_noiseless_decode(self) -> tuple[bool, str]:
        ter = self._decode_error(self.spec.noiseless())
        return ter == 0.0, f"token error rate {ter:.4f} over {self.count} clean render(s)"

    def check_noisy_decode(self) -> tuple[bool, str]:
        spec = self.spec
        sigma = template_bank(spec).margin / (4.0 * np.sqrt(spec.frames_per_token * spec.mel_dim))
        noisy = replace(spec, noise_levels=(sigma,) * spec.sources)
        ter = self._decode_error(noisy)
        return ter == 0.0, f"token error rate {ter:.4f} at jitter sigma = {sigma:.4f}"

    def check_teacher_decode(self) -> tuple[bool, str]:
        rates = {k: self._decode_error(self.spec, k) for k in range(1, self.spec.num_teachers + 1)}
        worst = max(rates.values(), default=0.0)
        return worst == 0.0, ", ".join(f"teacher {k}: {r:.4f}" for k, r in rates.items())

    def check_teacher_affine(self) -> tuple[bool, str]:
        """Per-dimension least squares of a teacher render on the clean render recovers the transform."""
        spec = self.spec
        clean = spec.noiseless()
        bank = template_bank(spec)
        text, speaker = sample_texts(spec, 1)[0]
        base = render_utterance(text, speaker, 0, 0, clean).mel.frames
        worst_resid, worst_param = 0.0, 0.0
        for k in range(1, spec.num_teachers + 1):
            frames = render_utterance(text, speaker, k, k, spec).mel.frames
            for d in range(spec.mel_dim):
                design = np.column_stack([base[:, d], np.ones(base.shape[0])])
                coef, *_ = np.linalg.lstsq(design, frames[:, d], rcond=None)
                resid = frames[:, d] - design @ coef
                worst_resid = max(worst_resid, float(resid.std()))
                worst_param = max(worst_param, abs(coef[0] - bank.scales[k, d]))
        noise = max(spec.noise_levels)
        ok = worst_resid < 1.5 * noise + 1e-6 and worst_param < 0.05
        return ok, f"worst residual std {worst_resid:.4f} (jitter {noise}), worst scale error {worst_param:.4f}"

    def check_round_trip(self) -> tuple[bool, str]:
        corpus = build_corpus(self.spec, self.size(200, 20), teachers=(0, 1))
        data = encode_corpus(corpus)
        restored = decode_corpus(data)
        empty = replace(corpus, utterances=[])
        empty_ok = len(decode_corpus(encode_corpus(empty))) == 0
        ok = restored == corpus and encode_corpus(restored) == data and empty_ok
        return ok, f"{len(corpus)} record(s), {len(data)} byte(s), empty corpus ok={empty_ok}"
