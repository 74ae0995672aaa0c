"""
BELLE desk -- Entry Point
Run with: python main.py <command> [options]

Commands:
  gen-corpus        render the procedural corpus to a BELM file
  train             train a model on a corpus file
  generate          frame-by-frame generation (continuation | cross-sentence)
  stream-generate   chunked streaming generation with per-chunk timing
  evaluate          token error rate, stop timing, frame MSE, diversity
  verify            run verification suites (gradcheck, sampler, ...)

Exit codes: 0 ok, 1 usage / config, 2 data error, 3 numerical failure.
"""

import sys
import json
import logging
import argparse
from pathlib import Path

# Resolve root so imports work regardless of CWD
ROOT = Path(__file__).resolve().parent
sys.path.insert(0, str(ROOT))

from core.corpus import CorpusSpec, build_corpus, read_corpus, write_corpus
from core.errors import EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, BelleError, ConfigError, exit_code_for
from core.inference import (
    GenerationRequest,
    build_prompt,
    continuation_text,
    evaluate_model,
    generate_requests,
    load_for_inference,
    stream_requests,
)
from core.sequences import TokenSequence
from core.settings import DEFAULT_SETTINGS, RunConfig, describe_settings
from core.trainer import Trainer
from core.verifier import Verifier

logger = logging.getLogger("belle")

COMMAND_HELP = {
    "gen-corpus": "render the procedural corpus to a BELM file",
    "train": "train a model on a corpus file",
    "generate": "frame-by-frame generation (continuation | cross-sentence)",
    "stream-generate": "chunked streaming generation with per-chunk timing",
    "evaluate": "token error rate, stop timing, frame MSE, diversity",
    "verify": "run verification suites",
}

# Config keys exposed as dedicated flags per command; anything else goes through --set.
COMMAND_KEYS: dict[str, tuple[str, ...]] = {
    "gen-corpus": ("vocab_size", "frames_per_token", "mel_dim", "num_speakers", "num_teachers",
                   "noise_levels", "amplitude", "num_utterances", "min_tokens", "max_tokens", "workers"),
    "train": ("corpus", "preset", "head", "steps", "peak_lr", "batch_texts", "teachers", "teacher_weights",
              "mixing", "ablate_sampling", "ablate_flux", "flux_clamp", "init_from", "stream",
              "stream_speaker", "s_text", "s_audio", "min_ratio", "checkpoint_every", "float32_matmul"),
    "generate": ("checkpoint", "corpus", "text", "speaker", "beta_scale", "max_frames", "mode",
                 "prompt_record", "prompt_tokens"),
    "stream-generate": ("checkpoint", "text", "speaker", "beta_scale", "max_frames", "s_text", "s_audio"),
    "evaluate": ("checkpoint", "corpus", "eval_utterances", "diversity_prompts", "diversity_repeats",
                 "max_frames"),
    "verify": ("suite", "verify_scale"),
}


class CliParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    shared = CliParser(add_help=False)
    shared.add_argument("--config", type=Path, help="flat key = value config file")
    shared.add_argument("--seed", type=str, help=DEFAULT_SETTINGS["seed"].help)
    shared.add_argument("--out", type=str, help=DEFAULT_SETTINGS["out"].help)
    shared.add_argument("--log-level", dest="log_level", type=str, help=DEFAULT_SETTINGS["log_level"].help)
    shared.add_argument("--set", dest="assignments", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")

    parser = CliParser(
        prog="main.py",
        description="Evidential autoregressive mel generation at desk scale.",
        epilog="config keys:\n" + describe_settings(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, keys in COMMAND_KEYS.items():
        sub = commands.add_parser(name, parents=[shared], help=COMMAND_HELP[name],
                                  epilog="config keys:\n" + describe_settings(),
                                  formatter_class=argparse.RawDescriptionHelpFormatter)
        for key in keys:
            setting = DEFAULT_SETTINGS[key]
            text = f"{setting.help} [default: {setting.default}]"
            if setting.kind is bool:
                sub.add_argument(_flag(key), dest=key, action="store_true", default=None, help=text)
            else:
                sub.add_argument(_flag(key), dest=key, type=str, default=None, help=text)
        if name == "train":
            sub.add_argument("--baseline", dest="head", choices=("belle", "melle"), default=None,
                             help="alias for --head")
        if name == "verify":
            sub.add_argument("--quick", dest="verify_scale", action="store_const", const="quick",
                             default=None, help="shrink sample sizes (verify_scale = quick)")
    return parser


def collect_overrides(args: argparse.Namespace) -> dict:
    overrides = {}
    for key in DEFAULT_SETTINGS:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    for item in args.assignments:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        overrides[key] = value
    return overrides


def setup_logging(level_name: str = "INFO", log_dir: Path | None = None):
    level = getattr(logging, level_name.upper(), logging.INFO)
    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stdout)]
    if log_dir is not None:
        log_dir.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_dir / "belle.log", encoding="utf-8"))
    logging.basicConfig(
        level=level,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        handlers=handlers,
        force=True,
    )


def artifact_path(cfg: RunConfig, default_name: str) -> Path:
    """--out names a file when it has a suffix, otherwise a directory holding default_name."""
    out = Path(cfg["out"])
    return out if out.suffix else out / default_name


def write_report(path: Path, payload: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str), encoding="utf-8")
    logger.info(f"[cli] wrote {path}")


def _require(cfg: RunConfig, key: str) -> str:
    value = cfg[key]
    if not value:
        raise ConfigError(f"{_flag(key)} is required for this command")
    return value


# ------------------------------------------------------------------ #
# Commands                                                             #
# ------------------------------------------------------------------ #

def cmd_gen_corpus(cfg: RunConfig) -> int:
    spec = CorpusSpec.from_settings(cfg)
    corpus = build_corpus(spec, cfg["num_utterances"], workers=cfg["workers"], progress=True)
    corpus.meta["config"] = cfg.as_dict()
    write_corpus(corpus, artifact_path(cfg, "corpus.belm"))
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    corpus = read_corpus(Path(_require(cfg, "corpus")))
    if cfg["preset"] != "paper":
        cfg.update({"mel_dim": corpus.spec.mel_dim, "vocab_size": corpus.spec.vocab_size})
    out_dir = Path(cfg["out"])
    result = Trainer(cfg, corpus, out_dir).train()
    logger.info(f"[cli] final checkpoint {result.final_checkpoint}, metrics {result.metrics_path}")
    return EXIT_OK


def _load(cfg: RunConfig):
    model, spec, ckpt_config = load_for_inference(Path(_require(cfg, "checkpoint")))
    if spec is None:
        spec = CorpusSpec.from_settings(cfg)
    return model, spec, ckpt_config


def _requested_text(cfg: RunConfig, spec: CorpusSpec) -> TokenSequence | None:
    return TokenSequence(cfg["text"], spec.vocab_size) if cfg["text"] else None


def cmd_generate(cfg: RunConfig) -> int:
    model, spec, ckpt_config = _load(cfg)
    text = _requested_text(cfg, spec)
    prompt, speaker = None, cfg["speaker"]
    if cfg["prompt_record"] >= 0:
        corpus = read_corpus(Path(_require(cfg, "corpus")))
        prompt = build_prompt(corpus, cfg["prompt_record"], cfg["mode"], cfg["prompt_tokens"])
        speaker = prompt.speaker_id
        if text is None and cfg["mode"] == "continuation":
            text = continuation_text(corpus, cfg["prompt_record"], cfg["prompt_tokens"])
    if text is None:
        raise ConfigError("--text is required unless continuing a prompt record")

    batch = generate_requests(model, [GenerationRequest(text, speaker, prompt)], cfg["seed"],
                              cfg["beta_scale"], cfg["max_frames"], spec.frame_rate)
    path = artifact_path(cfg, "generated.belm")
    write_corpus(batch.as_corpus(spec, {"config": cfg.as_dict(), "mode": cfg["mode"]}), path)
    write_report(path.with_suffix(".timing.json"), {"config": cfg.as_dict(), "checkpoint": ckpt_config.get("step"),
                                                   **batch.timing.as_dict()})
    logger.info(f"[generate] {batch.timing.summary}")
    return EXIT_OK


def cmd_stream_generate(cfg: RunConfig) -> int:
    model, spec, ckpt_config = _load(cfg)
    text = _requested_text(cfg, spec)
    if text is None:
        raise ConfigError("--text is required for stream-generate")

    def on_chunk(utt, index, frames, is_final, elapsed_ms):
        tag = " final" if is_final else ""
        logger.info(f"[stream] utterance {utt} chunk {index}: {frames} frame(s) at {elapsed_ms:.1f} ms{tag}")

    batch = stream_requests(model, [GenerationRequest(text, cfg["speaker"])], cfg["seed"], cfg["s_text"],
                            cfg["s_audio"], cfg["beta_scale"], cfg["max_frames"], spec.frame_rate, on_chunk)
    path = artifact_path(cfg, "streamed.belm")
    write_corpus(batch.as_corpus(spec, {"config": cfg.as_dict(), "streaming": True}), path)
    write_report(path.with_suffix(".timing.json"), {"config": cfg.as_dict(), "checkpoint": ckpt_config.get("step"),
                                                   **batch.timing.as_dict()})
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    model, _, ckpt_config = _load(cfg)
    corpus = read_corpus(Path(_require(cfg, "corpus")))
    report = evaluate_model(model, corpus, cfg["seed"], cfg["eval_utterances"], cfg["diversity_prompts"],
                            cfg["diversity_repeats"], cfg["max_frames"], progress=True)
    write_report(artifact_path(cfg, "eval.json"),
                 {"config": cfg.as_dict(), "checkpoint_step": ckpt_config.get("step"), **report.as_dict()})
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    verifier = Verifier({"scale": cfg["verify_scale"], "seed": cfg["seed"]})
    report = verifier.run(cfg["suite"])
    for result in report.results.values():
        for name, (passed, detail) in result.checks.items():
            print(f"  {'PASS' if passed else 'FAIL'}  {result.suite_id}/{name}: {detail}")
    write_report(artifact_path(cfg, "verify.json"), {"config": cfg.as_dict(), **report.as_dict()})
    logger.info(f"[verify] {report.summary}")
    return EXIT_OK if report.success else EXIT_NUMERICAL


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "train": cmd_train,
    "generate": cmd_generate,
    "stream-generate": cmd_stream_generate,
    "evaluate": cmd_evaluate,
    "verify": cmd_verify,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig(args.config, collect_overrides(args))
    except BelleError as e:
        print(f"error: {e}", file=sys.stderr)
        return exit_code_for(e)

    out = Path(cfg["out"])
    setup_logging(cfg["log_level"], out.parent if out.suffix else out)
    logger.info(f"[cli] {args.command} (seed {cfg['seed']})")
    try:
        return COMMANDS[args.command](cfg)
    except BelleError as e:
        logger.error(f"[cli] {args.command} failed: {e}", exc_info=True)
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
