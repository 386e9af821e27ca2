"""Flat `section.key = value` run configuration.

Precedence: command-line overrides > config file > defaults.  Unknown
keys are rejected so typos fail loudly, and every run logs the fully
resolved table.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import InvalidConfig
from .nn import ModelConfig
from .trainer import TrainConfig

DEFAULTS: dict[str, object] = {
    "data.dir": "",
    "data.train_manifest": "train.tsv",
    "data.dev_manifest": "dev.tsv",
    "data.vocab": "vocab.txt",
    "synth.vocab_size": 20,
    "synth.train_utts": 500,
    "synth.dev_utts": 100,
    "synth.min_tokens": 3,
    "synth.max_tokens": 8,
    "synth.min_frames_per_token": 2,
    "synth.max_frames_per_token": 4,
    "synth.input_dim": 16,
    "synth.noise": 0.5,
    "synth.seed": 12345,
    "model.input_dim": 16,
    "model.d_trs": 64,
    "model.d_prd": 64,
    "model.d_joint": 64,
    "model.d_emb": 32,
    "model.vocab_size": 20,
    "model.subsample": 2,
    "model.lookahead": 1,
    "model.enc_layers": 2,
    "model.dtype": "f32",
    "kd.strategy": "uniform",
    "kd.layers_k": 2,
    "kd.context_variants": 1,
    "kd.mask_rate": 0.0,
    "kd.models": "",
    "kd.lambda": 0.01,
    "kd.distance": "l1",
    "kd.normalize": False,
    "kd.teacher_reps": "",
    "train.epochs": 20,
    "train.lr": 0.02,
    "train.momentum": 0.9,
    "train.batch_size": 8,
    "train.seed": 1,
    "train.run_dir": "runs/default",
    "train.iter": "both",
    "train.fresh_init2": False,
    "train.resume": "",
    "eval.checkpoint": "",
    "eval.manifest": "",
    "eval.report": "",
    "eval.max_symbols_per_frame": 10,
}


def _coerce(key: str, raw: object) -> object:
    default = DEFAULTS[key]
    if isinstance(raw, type(default)) and not isinstance(default, bool):
        return raw
    text = str(raw).strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(low)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError as e:
        raise InvalidConfig(f"bad value for {key}: {raw!r}") from e
    return text


class RunConfig:
    """Resolved configuration table with typed access."""

    def __init__(self, values: dict[str, object]):
        self.values = values

    def __getitem__(self, key: str):
        return self.values[key]

    @classmethod
    def resolve(
        cls,
        config_file: str | Path | None = None,
        overrides: dict[str, object] | None = None,
    ) -> "RunConfig":
        values = dict(DEFAULTS)
        if config_file:
            path = Path(config_file)
            if not path.exists():
                raise InvalidConfig(f"config file not found: {path}")
            for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                if "=" not in stripped:
                    raise InvalidConfig(f"{path}:{lineno}: expected `section.key = value`")
                key, _, raw = stripped.partition("=")
                key = key.strip()
                if key not in DEFAULTS:
                    raise InvalidConfig(f"{path}:{lineno}: unknown config key {key!r}")
                values[key] = _coerce(key, raw.strip())
        for key, raw in (overrides or {}).items():
            if key not in DEFAULTS:
                raise InvalidConfig(f"unknown config key {key!r}")
            values[key] = _coerce(key, raw)
        return cls(values)

    def dump(self) -> str:
        return "\n".join(f"{k} = {self.values[k]}" for k in sorted(self.values))

    def model_config(self) -> ModelConfig:
        v = self.values
        dtype = {"f32": np.float32, "f64": np.float64}.get(str(v["model.dtype"]))
        if dtype is None:
            raise InvalidConfig(f"model.dtype must be f32 or f64, got {v['model.dtype']!r}")
        return ModelConfig(
            input_dim=v["model.input_dim"],
            d_trs=v["model.d_trs"],
            d_prd=v["model.d_prd"],
            d_joint=v["model.d_joint"],
            d_emb=v["model.d_emb"],
            vocab_size=v["model.vocab_size"],
            subsample=v["model.subsample"],
            lookahead=v["model.lookahead"],
            enc_layers=v["model.enc_layers"],
            dtype=dtype,
        )

    def train_config(self) -> TrainConfig:
        v = self.values
        teacher_ids = [t.strip() for t in str(v["kd.models"]).split(",") if t.strip()]
        cfg = TrainConfig(
            epochs=v["train.epochs"],
            lr=v["train.lr"],
            momentum=v["train.momentum"],
            batch_size=v["train.batch_size"],
            seed=v["train.seed"],
            kd_weight=v["kd.lambda"],
            distance=v["kd.distance"],
            normalize_kd=v["kd.normalize"],
            strategy=v["kd.strategy"],
            layers_k=v["kd.layers_k"],
            context_variants=v["kd.context_variants"],
            mask_rate=v["kd.mask_rate"],
            teacher_ids=teacher_ids,
            fresh_init_iter2=v["train.fresh_init2"],
            max_symbols_per_frame=v["eval.max_symbols_per_frame"],
        )
        cfg.validate()
        return cfg

    def teacher_rep_paths(self) -> list[Path]:
        raw = str(self.values["kd.teacher_reps"])
        return [Path(p.strip()) for p in raw.split(",") if p.strip()]
