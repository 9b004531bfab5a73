"""Command-line orchestration of the verification pipeline.

Subcommands: simulate, enroll, score, eval, augment, vad, and pipeline
(simulate -> enroll -> score -> eval in one run). Configuration is a flat
key=value file; every key has a --kebab-case flag twin that overrides the
file. All randomness flows from a single seed; per-stage seeds are derived
by stable hashing of the stage name. Artifact layout under the output
directory is fixed:

    embeddings/eval_<channel>.<ext>     simulated eval embeddings
    embeddings/cohort_<channel>.<ext>   simulated cohort embeddings
    embeddings/model_<channel>.<ext>    aggregated enrollment embeddings
    models.tsv, trials.tsv, posteriors.tsv, ground_truth.tsv
    scores.tsv, report.txt, det/<subset>.csv

Exit codes: 0 success, 1 usage/configuration error, 2 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import dsp, formats, metrics, scorer, sim
from .model import (
    ChannelSpec,
    ConfigError,
    DataError,
    DEFAULT_CHANNELS,
    EmbeddingSet,
    SpeakerModel,
    TdsvError,
)

SUBCOMMANDS = ("simulate", "enroll", "score", "eval", "augment", "vad", "pipeline")


class UsageError(ConfigError):
    """Command-line usage problem (maps to exit code 1)."""


def stage_seed(seed: int, stage: str) -> int:
    digest = hashlib.sha256(f"{seed}:stage:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _parse_int(text: str) -> int:
    return int(text)


def _parse_float(text: str) -> float:
    value = float(text)
    if not np.isfinite(value):
        raise ValueError("non-finite")
    return value


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_str(text: str) -> str:
    return text


# key -> (default string, parser). The config file and every flag twin are
# checked against this table; unknown keys are rejected.
CONFIG_SPEC: dict[str, tuple[str, Callable[[str], object]]] = {
    "seed": ("12345", _parse_int),
    "out": ("", _parse_str),
    "channels": ("next_tdnn:192,resnet_tdnn:256,efficientnet_a0:256", _parse_str),
    "emb_format": ("binary", _parse_str),
    "thread_count": ("auto", _parse_str),
    # simulator
    "n_speakers": ("50", _parse_int),
    "utterances_per_speaker_phrase": ("6", _parse_int),
    "latent_dim": ("64", _parse_int),
    "sigma_phrase": ("0.5", _parse_float),
    "sigma_channel": ("0.3", _parse_float),
    "classifier_accuracy": ("0.95", _parse_float),
    "posterior_confidence_lo": ("0.7", _parse_float),
    "posterior_confidence_hi": ("0.99", _parse_float),
    "n_phrases": ("10", _parse_int),
    "trials_per_type": ("0", _parse_int),
    "cohort_size": ("1000", _parse_int),
    "disable_speaker_factor": ("false", _parse_bool),
    # scoring
    "cohort_limit": ("10000", _parse_int),
    "adaptive_top_k": ("0", _parse_int),
    "std_floor": ("1e-12", _parse_float),
    "calibration": ("minmax", _parse_str),
    "fusion_weights": ("", _parse_str),
    # detection cost and evaluation
    "c_miss": ("10", _parse_float),
    "c_fa": ("1", _parse_float),
    "p_target": ("0.01", _parse_float),
    "subsets": ("overall,male,female,farsi,english,tc_vs_ic", _parse_str),
    # augmentation / vad
    "snr_db_lo": ("0", _parse_float),
    "snr_db_hi": ("15", _parse_float),
    "freq_bands_lo": ("1", _parse_int),
    "freq_bands_hi": ("3", _parse_int),
    "freq_band_width_lo": ("2", _parse_int),
    "freq_band_width_hi": ("16", _parse_int),
    "time_drop_ms_lo": ("1000", _parse_float),
    "time_drop_ms_hi": ("2000", _parse_float),
    "time_drops_lo": ("1", _parse_int),
    "time_drops_hi": ("5", _parse_int),
    "time_drop_unit": ("ms", _parse_str),
    "time_drop_mode": ("zero", _parse_str),
    "vad_frame_ms": ("25", _parse_float),
    "vad_hop_ms": ("10", _parse_float),
    "vad_threshold_db": ("-30", _parse_float),
    # paths; empty means "derive from out"
    "embeddings_dir": ("", _parse_str),
    "models_path": ("", _parse_str),
    "trials_path": ("", _parse_str),
    "posteriors_path": ("", _parse_str),
    "ground_truth_path": ("", _parse_str),
    "scores_path": ("", _parse_str),
    "report_path": ("", _parse_str),
    "det_dir": ("", _parse_str),
}


class PipelineConfig:
    """Fully resolved configuration with defaults applied and ranges checked."""

    def __init__(self, values: dict):
        self.values = values
        for key, value in values.items():
            setattr(self, key, value)
        self._validate()

    def _validate(self):
        v = self.values
        if v["emb_format"] not in ("binary", "tsv"):
            raise ConfigError(f"emb_format must be 'binary' or 'tsv', got {v['emb_format']!r}")
        if v["calibration"] not in ("minmax", "sigmoid"):
            raise ConfigError(f"calibration must be 'minmax' or 'sigmoid', got {v['calibration']!r}")
        if not (0.0 < v["p_target"] < 1.0):
            raise ConfigError(f"p_target must lie strictly inside (0, 1), got {v['p_target']}")
        if v["c_miss"] <= 0 or v["c_fa"] <= 0:
            raise ConfigError("c_miss and c_fa must be positive")
        if v["cohort_limit"] < 1:
            raise ConfigError("cohort_limit must be positive")
        if v["adaptive_top_k"] < 0:
            raise ConfigError("adaptive_top_k must be >= 0 (0 disables)")
        if v["adaptive_top_k"] > v["cohort_limit"]:
            raise ConfigError("adaptive_top_k cannot exceed cohort_limit")
        if v["std_floor"] <= 0:
            raise ConfigError("std_floor must be positive")
        if v["thread_count"] != "auto":
            try:
                n = int(v["thread_count"])
            except ValueError:
                raise ConfigError(
                    f"thread_count must be 'auto' or a positive integer, got {v['thread_count']!r}"
                ) from None
            if n < 1:
                raise ConfigError("thread_count must be positive")
        if v["time_drop_unit"] not in ("ms", "samples"):
            raise ConfigError("time_drop_unit must be 'ms' or 'samples'")
        if v["time_drop_mode"] not in ("zero", "excise"):
            raise ConfigError("time_drop_mode must be 'zero' or 'excise'")
        self.channel_specs = self._parse_channels(v["channels"])
        self.subset_names = tuple(s for s in v["subsets"].split(",") if s)
        for name in self.subset_names:
            if name not in metrics.BUILTIN_SUBSETS:
                raise ConfigError(f"unknown subset {name!r}")
        if v["fusion_weights"]:
            try:
                self.weights = tuple(float(w) for w in v["fusion_weights"].split(","))
            except ValueError:
                raise ConfigError(f"bad fusion_weights {v['fusion_weights']!r}") from None
        else:
            self.weights = None

    @staticmethod
    def _parse_channels(text: str) -> tuple[ChannelSpec, ...]:
        specs = []
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            name, sep, dim = part.partition(":")
            if not sep:
                raise ConfigError(f"channel entry {part!r} must be name:dim")
            try:
                specs.append(ChannelSpec(name, int(dim)))
            except (ValueError, DataError) as exc:
                raise ConfigError(f"bad channel entry {part!r}: {exc}") from None
        if not specs:
            raise ConfigError("channels must name at least one channel")
        return tuple(specs)

    # Derived pieces -------------------------------------------------------

    def out_dir(self) -> Path:
        if not self.values["out"]:
            raise UsageError("an output directory is required (--out or out=...)")
        return Path(self.values["out"])

    def path(self, key: str, default_name: str) -> Path:
        configured = self.values[key]
        if configured:
            return Path(configured)
        return self.out_dir() / default_name

    def threads(self) -> int:
        env = os.environ.get("TDSV_THREADS")
        if env is not None:
            try:
                n = int(env)
            except ValueError:
                raise ConfigError(f"TDSV_THREADS must be an integer, got {env!r}") from None
            if n < 1:
                raise ConfigError("TDSV_THREADS must be positive")
            return n
        if self.values["thread_count"] == "auto":
            return os.cpu_count() or 1
        return int(self.values["thread_count"])

    def scoring_options(self) -> scorer.ScoringOptions:
        return scorer.ScoringOptions(
            cohort_limit=self.values["cohort_limit"],
            adaptive_top_k=self.values["adaptive_top_k"] or None,
            std_floor=self.values["std_floor"],
            calibration=self.values["calibration"],
            fusion_weights=self.weights,
        )

    def dcf_params(self) -> metrics.DcfParams:
        try:
            return metrics.DcfParams(
                c_miss=self.values["c_miss"],
                c_fa=self.values["c_fa"],
                p_target=self.values["p_target"],
            )
        except DataError as exc:
            raise ConfigError(str(exc)) from None

    def sim_config(self) -> sim.SimConfig:
        v = self.values
        try:
            return sim.SimConfig(
                n_speakers=v["n_speakers"],
                utterances_per_speaker_phrase=v["utterances_per_speaker_phrase"],
                latent_dim=v["latent_dim"],
                sigma_phrase=v["sigma_phrase"],
                sigma_channel=v["sigma_channel"],
                classifier_accuracy=v["classifier_accuracy"],
                posterior_confidence=(v["posterior_confidence_lo"], v["posterior_confidence_hi"]),
                seed=stage_seed(v["seed"], "simulate"),
                channels=self.channel_specs,
                n_phrases=v["n_phrases"],
                trials_per_type=v["trials_per_type"] or None,
                cohort_size=v["cohort_size"],
                disable_speaker_factor=v["disable_speaker_factor"],
            )
        except DataError as exc:
            raise ConfigError(str(exc)) from None

    def augment_params(self) -> dsp.AugmentParams:
        v = self.values
        try:
            return dsp.AugmentParams(
                snr_db=(v["snr_db_lo"], v["snr_db_hi"]),
                n_freq_bands=(v["freq_bands_lo"], v["freq_bands_hi"]),
                freq_band_width_bins=(v["freq_band_width_lo"], v["freq_band_width_hi"]),
                time_drop_len_ms=(v["time_drop_ms_lo"], v["time_drop_ms_hi"]),
                n_time_drops=(v["time_drops_lo"], v["time_drops_hi"]),
            )
        except DataError as exc:
            raise ConfigError(str(exc)) from None


def parse_config(path: str | os.PathLike | None,
                 overrides: dict[str, str] | None = None) -> PipelineConfig:
    """Resolve defaults, then the config file, then flag overrides."""
    raw = {key: default for key, (default, _parser) in CONFIG_SPEC.items()}
    if path is not None:
        raw.update(_read_config_file(path))
    for key, text in (overrides or {}).items():
        if key not in CONFIG_SPEC:
            raise ConfigError(f"unknown configuration key {key!r}")
        raw[key] = text
    values = {}
    for key, text in raw.items():
        _default, parser = CONFIG_SPEC[key]
        try:
            values[key] = parser(text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {text!r} ({exc})") from None
    return PipelineConfig(values)


def _read_config_file(path) -> dict[str, str]:
    entries: dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                key, sep, value = stripped.partition("=")
                if not sep:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
                key = key.strip()
                if key not in CONFIG_SPEC:
                    raise ConfigError(f"{path}:{lineno}: unknown configuration key {key!r}")
                entries[key] = value.strip()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return entries


# ---------------------------------------------------------------------------
# Subcommand bodies
# ---------------------------------------------------------------------------

def _emb_ext(cfg: PipelineConfig) -> str:
    return "bin" if cfg.values["emb_format"] == "binary" else "tsv"


def _emb_path(cfg: PipelineConfig, kind: str, channel: str) -> Path:
    base = cfg.path("embeddings_dir", "embeddings")
    return Path(base) / f"{kind}_{channel}.{_emb_ext(cfg)}"


def cmd_simulate(cfg: PipelineConfig) -> None:
    out = cfg.out_dir()
    (out / "embeddings").mkdir(parents=True, exist_ok=True)
    sim_cfg = cfg.sim_config()
    population = sim.gen_population(sim_cfg)
    trials = sim.gen_trials(sim_cfg, population)
    posteriors = sim.gen_phrase_posteriors(sim_cfg, trials, population.ground_truth)
    fmt = cfg.values["emb_format"]
    for spec in cfg.channel_specs:
        formats.write_embeddings(
            population.eval_embeddings[spec.name], _emb_path(cfg, "eval", spec.name), fmt
        )
        formats.write_embeddings(
            population.cohort_embeddings[spec.name], _emb_path(cfg, "cohort", spec.name), fmt
        )
    formats.write_trials(trials, cfg.path("trials_path", "trials.tsv"))
    formats.write_posteriors(posteriors, cfg.path("posteriors_path", "posteriors.tsv"))
    formats.write_ground_truth(population.ground_truth, cfg.path("ground_truth_path", "ground_truth.tsv"))
    formats.write_models_table(population.enrollments, cfg.path("models_path", "models.tsv"))


def cmd_enroll(cfg: PipelineConfig) -> None:
    table = formats.read_models_table(cfg.path("models_path", "models.tsv"))
    fmt = cfg.values["emb_format"]
    for spec in cfg.channel_specs:
        eval_set = formats.read_embeddings(
            _emb_path(cfg, "eval", spec.name), channels=cfg.channel_specs
        )
        aggregated = EmbeddingSet(spec.name, spec.dim)
        for model_id, _phrase_id, utts in table:
            parts = [eval_set.get(u) for u in utts]
            aggregated.add(model_id, scorer.enroll_aggregate(parts, model_id).vector)
        formats.write_embeddings(aggregated, _emb_path(cfg, "model", spec.name), fmt)


def _load_models(cfg: PipelineConfig) -> list[SpeakerModel]:
    table = formats.read_models_table(cfg.path("models_path", "models.tsv"))
    per_channel = {
        spec.name: formats.read_embeddings(
            _emb_path(cfg, "model", spec.name), channels=cfg.channel_specs
        )
        for spec in cfg.channel_specs
    }
    models = []
    for model_id, phrase_id, utts in table:
        vectors = {}
        for spec in cfg.channel_specs:
            emb_set = per_channel[spec.name]
            vectors[spec.name] = emb_set.vectors[emb_set.row(model_id)]
        models.append(SpeakerModel(model_id, phrase_id, vectors, utts))
    return models


def cmd_score(cfg: PipelineConfig) -> None:
    models = _load_models(cfg)
    tests = {
        spec.name: formats.read_embeddings(
            _emb_path(cfg, "eval", spec.name), channels=cfg.channel_specs
        )
        for spec in cfg.channel_specs
    }
    cohorts = {
        spec.name: formats.read_embeddings(
            _emb_path(cfg, "cohort", spec.name), channels=cfg.channel_specs
        )
        for spec in cfg.channel_specs
    }
    trials = formats.read_trials(cfg.path("trials_path", "trials.tsv"))
    posteriors = formats.read_posteriors(cfg.path("posteriors_path", "posteriors.tsv"))
    records = scorer.score_trials(
        models,
        tests,
        trials,
        cohorts,
        posteriors,
        cfg.scoring_options(),
        channels=cfg.channel_specs,
        threads=cfg.threads(),
    )
    formats.write_scores(records, cfg.path("scores_path", "scores.tsv"))


def cmd_eval(cfg: PipelineConfig) -> None:
    records = formats.read_scores(
        cfg.path("scores_path", "scores.tsv"), len(cfg.channel_specs)
    )
    trials = formats.read_trials(cfg.path("trials_path", "trials.tsv"))
    report = metrics.subset_eval(records, trials, cfg.dcf_params(), cfg.subset_names)
    metrics.write_report(
        report,
        cfg.path("report_path", "report.txt"),
        cfg.path("det_dir", "det"),
        cfg.subset_names,
    )


def cmd_pipeline(cfg: PipelineConfig) -> None:
    cmd_simulate(cfg)
    cmd_enroll(cfg)
    cmd_score(cfg)
    cmd_eval(cfg)


def cmd_augment(cfg: PipelineConfig, args: argparse.Namespace) -> None:
    waveform = dsp.read_wav(args.input)
    params = cfg.augment_params()
    seed = cfg.values["seed"]
    if args.noise is not None:
        noise = dsp.read_wav(args.noise)
        if args.snr is not None:
            snr = args.snr
        else:
            rng = sim.substream(stage_seed(seed, "augment"), "snr")
            snr = float(rng.uniform(*params.snr_db))
        waveform = dsp.add_noise(waveform, noise, snr)
    if args.rir is not None:
        waveform = dsp.reverb(waveform, dsp.read_wav(args.rir))
    if args.freq_drop:
        waveform = dsp.freq_drop(waveform, params, stage_seed(seed, "augment.freq_drop"))
    if args.time_drop:
        waveform = dsp.time_drop(
            waveform,
            params,
            stage_seed(seed, "augment.time_drop"),
            mode=cfg.values["time_drop_mode"],
            unit=cfg.values["time_drop_unit"],
        )
    dsp.write_wav(waveform, args.output)


def cmd_vad(cfg: PipelineConfig, args: argparse.Namespace) -> None:
    waveform = dsp.read_wav(args.input)
    trimmed = dsp.vad_trim(
        waveform,
        frame_ms=cfg.values["vad_frame_ms"],
        hop_ms=cfg.values["vad_hop_ms"],
        threshold_db=cfg.values["vad_threshold_db"],
    )
    dsp.write_wav(trimmed, args.output)


# ---------------------------------------------------------------------------
# Argument parsing and entry point
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract wants 1
        raise UsageError(message)


def _flag_name(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> _Parser:
    parser = _Parser(prog="tdsv", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="subcommand", metavar="subcommand")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, add_help=True)
        p.add_argument("--config", default=None, help="flat key=value config file")
        for key in CONFIG_SPEC:
            p.add_argument(_flag_name(key), dest=f"cfg_{key}", default=None, metavar="V")
        if name in ("augment", "vad"):
            p.add_argument("--input", required=True, help="input WAV (PCM16 mono 16 kHz)")
            p.add_argument("--output", required=True, help="output WAV path")
        if name == "augment":
            p.add_argument("--noise", default=None, help="noise WAV to mix in")
            p.add_argument("--snr", type=float, default=None,
                           help="explicit SNR in dB (default: sampled from range)")
            p.add_argument("--rir", default=None, help="room impulse response WAV")
            p.add_argument("--freq-drop", action="store_true",
                           help="drop random frequency bands")
            p.add_argument("--time-drop", action="store_true",
                           help="drop random temporal chunks")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.subcommand is None:
            raise UsageError("a subcommand is required " + str(SUBCOMMANDS))
        overrides = {
            key: getattr(args, f"cfg_{key}")
            for key in CONFIG_SPEC
            if getattr(args, f"cfg_{key}") is not None
        }
        cfg = parse_config(args.config, overrides)
        if args.subcommand == "simulate":
            cmd_simulate(cfg)
        elif args.subcommand == "enroll":
            cmd_enroll(cfg)
        elif args.subcommand == "score":
            cmd_score(cfg)
        elif args.subcommand == "eval":
            cmd_eval(cfg)
        elif args.subcommand == "pipeline":
            cmd_pipeline(cfg)
        elif args.subcommand == "augment":
            cmd_augment(cfg, args)
        elif args.subcommand == "vad":
            cmd_vad(cfg, args)
        return 0
    except (UsageError, ConfigError) as exc:
        print(f"tdsv: error: {exc}", file=sys.stderr)
        return 1
    except TdsvError as exc:
        print(f"tdsv: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"tdsv: missing file: {exc}", file=sys.stderr)
        return 2


def cli_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    cli_entry()
