import json

import pytest

from core.corpus import read_corpus
from core.errors import EXIT_DATA, EXIT_OK, EXIT_USAGE
from main import main

CORPUS_FLAGS = ["--vocab-size", "8", "--frames-per-token", "4", "--mel-dim", "4", "--num-speakers", "1",
                "--num-teachers", "2", "--min-tokens", "2", "--max-tokens", "4", "--workers", "1"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus.belm"
    assert main(["gen-corpus", *CORPUS_FLAGS, "--num-utterances", "6", "--out", str(corpus)]) == EXIT_OK
    run = root / "run"
    assert main(["train", "--corpus", str(corpus), "--preset", "tiny", "--steps", "1", "--batch-texts", "1",
                 "--teachers", "2", "--checkpoint-every", "0", "--out", str(run)]) == EXIT_OK
    return root


class TestArguments:
    def test_unknown_set_key(self, tmp_path):
        assert main(["gen-corpus", "--set", "colour=blue", "--out", str(tmp_path / "c.belm")]) == EXIT_USAGE

    def test_malformed_set(self, tmp_path):
        assert main(["verify", "--set", "suite", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as info:
            main(["synthesise"])
        assert info.value.code == EXIT_USAGE

    def test_missing_corpus_file(self, tmp_path):
        code = main(["train", "--corpus", str(tmp_path / "none.belm"), "--out", str(tmp_path / "run")])
        assert code == EXIT_DATA

    def test_train_requires_corpus(self, tmp_path):
        assert main(["train", "--out", str(tmp_path / "run")]) == EXIT_USAGE


class TestPipeline:
    def test_corpus_written(self, workspace):
        corpus = read_corpus(workspace / "corpus.belm")
        assert len(corpus) == 6
        assert corpus.spec.mel_dim == 4
        assert corpus.meta["config"]["num_utterances"] == 6

    def test_training_outputs(self, workspace):
        assert (workspace / "run" / "final.belc").exists()
        lines = (workspace / "run" / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == 2

    def test_generate(self, workspace):
        out = workspace / "gen.belm"
        code = main(["generate", "--checkpoint", str(workspace / "run" / "final.belc"), "--text", "1,2",
                     "--max-frames", "5", "--out", str(out)])
        assert code == EXIT_OK
        generated = read_corpus(out)
        assert len(generated) == 1 and 1 <= generated[0].mel.length <= 5
        timing = json.loads(out.with_suffix(".timing.json").read_text())
        assert len(timing["utterances"]) == 1

    def test_generate_needs_text(self, workspace, tmp_path):
        code = main(["generate", "--checkpoint", str(workspace / "run" / "final.belc"),
                     "--out", str(tmp_path / "g.belm")])
        assert code == EXIT_USAGE

    @pytest.mark.parametrize("flag, value", [("--beta-scale", "0"), ("--beta-scale", "-1"), ("--max-frames", "0")])
    def test_generate_rejects_bad_arguments(self, workspace, tmp_path, flag, value):
        code = main(["generate", "--checkpoint", str(workspace / "run" / "final.belc"), "--text", "1,2",
                     flag, value, "--out", str(tmp_path / "g.belm")])
        assert code == EXIT_USAGE
        assert not (tmp_path / "g.belm").exists()

    def test_stream_generate_rejects_empty_chunks(self, workspace, tmp_path):
        code = main(["stream-generate", "--checkpoint", str(workspace / "run" / "final.belc"), "--text", "1,2",
                     "--s-audio", "0", "--out", str(tmp_path / "s.belm")])
        assert code == EXIT_USAGE

    def test_continuation_prompt(self, workspace):
        out = workspace / "cont.belm"
        code = main(["generate", "--checkpoint", str(workspace / "run" / "final.belc"),
                     "--corpus", str(workspace / "corpus.belm"), "--prompt-record", "0", "--mode", "continuation",
                     "--prompt-tokens", "1", "--max-frames", "3", "--out", str(out)])
        assert code == EXIT_OK
        assert read_corpus(out)[0].mel.length >= 4

    def test_stream_generate(self, workspace):
        out = workspace / "stream.belm"
        code = main(["stream-generate", "--checkpoint", str(workspace / "run" / "final.belc"), "--text", "1,2,3",
                     "--s-text", "2", "--s-audio", "2", "--max-frames", "4", "--out", str(out)])
        assert code == EXIT_OK
        timing = json.loads(out.with_suffix(".timing.json").read_text())
        assert [c["frames"] for c in timing["utterances"][0]["chunks"]][0] == 2

    def test_evaluate(self, workspace):
        out = workspace / "eval.json"
        code = main(["evaluate", "--checkpoint", str(workspace / "run" / "final.belc"),
                     "--corpus", str(workspace / "corpus.belm"), "--eval-utterances", "1",
                     "--diversity-prompts", "1", "--diversity-repeats", "2", "--max-frames", "4",
                     "--out", str(out)])
        assert code == EXIT_OK
        report = json.loads(out.read_text())
        assert report["utterances"] == 1
        assert "beta_scale_2" in report["diversity"]

    def test_verify(self, tmp_path):
        out = tmp_path / "verify.json"
        assert main(["verify", "--suite", "streaming", "--quick", "--out", str(out)]) == EXIT_OK
        assert json.loads(out.read_text())["success"] is True
