"""Flat key-value run configuration with dotted section names.

Unknown keys are hard errors so a typo in a hyperparameter name cannot
silently fall back to a default. Values are parsed per a typed schema.
"""

from .exceptions import ConfigError
from .losses import AGREEMENT_MODES, METHODS, TrainConfig
from .model import ModelDims

_SCHEMA = {
    "task.vocab_size": (int, 12),
    "task.feature_dim": (int, 8),
    "task.noise_std": (float, 0.01),
    "task.seed": (int, 0),
    "data.train_count": (int, 200),
    "data.in_domain_count": (int, 50),
    "data.out_of_domain_count": (int, 100),
    "data.train_min_len": (int, 3),
    "data.train_max_len": (int, 10),
    "data.ood_min_len": (int, 15),
    "data.ood_max_len": (int, 30),
    "model.embed_dim": (int, 8),
    "model.hidden_dim": (int, 32),
    "model.state_dim": (int, 32),
    "model.attn_dim": (int, 16),
    "model.conv_filters": (int, 8),
    "model.conv_width": (int, 5),
    "train.method": (str, "baseline"),
    "train.lambda": (float, 1.0),
    "train.learning_rate": (float, 1e-3),
    "train.decay_after_steps": (int, 1000),
    "train.decay_factor": (float, 0.9995),
    "train.pretrain_steps": (int, 500),
    "train.joint_iterations": (int, -1),  # -1: method default (1 or 5)
    "train.steps_per_iteration": (int, 500),
    "train.total_steps": (int, 1000),
    "train.batch_size": (int, 4),
    "train.seed": (int, 0),
    "train.scheduled_sampling_p": (float, 0.0),
    "train.agreement_mode": (str, "teacher_forced"),
    "train.checkpoint_every": (int, 0),  # 0: phase boundaries only
    "eval.stop_threshold": (float, 0.5),
    "eval.max_len": (int, 150),
}


def default_config():
    return {k: d for k, (_, d) in _SCHEMA.items()}


def parse_config_text(text, origin="<config>"):
    cfg = default_config()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        typ = _SCHEMA[key][0]
        try:
            cfg[key] = typ(value)
        except ValueError as err:
            raise ConfigError(f"{origin}:{lineno}: {key}: {err}") from None
    validate_config(cfg, origin)
    return cfg


def load_config(path):
    with open(path) as f:
        return parse_config_text(f.read(), origin=str(path))


def validate_config(cfg, origin="<config>"):
    def bad(field, msg):
        raise ConfigError(f"{origin}: {field}: {msg}")

    if cfg["task.vocab_size"] < 2:
        bad("task.vocab_size", "must be >= 2")
    if cfg["task.feature_dim"] < 1:
        bad("task.feature_dim", "must be >= 1")
    if cfg["task.noise_std"] < 0:
        bad("task.noise_std", "must be >= 0")
    if cfg["train.method"] not in METHODS:
        bad("train.method", f"must be one of {METHODS}")
    if cfg["train.agreement_mode"] not in AGREEMENT_MODES:
        bad("train.agreement_mode", f"must be one of {AGREEMENT_MODES}")
    if cfg["train.lambda"] < 0:
        bad("train.lambda", "must be >= 0")
    if not (0 <= cfg["train.scheduled_sampling_p"] <= 1):
        bad("train.scheduled_sampling_p", "must be in [0, 1]")
    if not (0 < cfg["eval.stop_threshold"] <= 1):
        bad("eval.stop_threshold", "must be in (0, 1]")
    for k in ("data.train_count", "data.in_domain_count", "data.out_of_domain_count"):
        if cfg[k] < 1:
            bad(k, "must be >= 1")
    if cfg["data.ood_min_len"] <= cfg["data.train_max_len"]:
        bad("data.ood_min_len", "out-of-domain lengths must exceed the training maximum")
    if cfg["model.conv_width"] % 2 != 1:
        bad("model.conv_width", "must be odd (same-padding)")


def model_dims(cfg):
    return ModelDims(
        vocab_size=cfg["task.vocab_size"],
        feature_dim=cfg["task.feature_dim"],
        embed_dim=cfg["model.embed_dim"],
        hidden_dim=cfg["model.hidden_dim"],
        state_dim=cfg["model.state_dim"],
        attn_dim=cfg["model.attn_dim"],
        conv_filters=cfg["model.conv_filters"],
        conv_width=cfg["model.conv_width"],
    )


def train_config(cfg, seed_override=None):
    ji = cfg["train.joint_iterations"]
    try:
        return TrainConfig(
            method=cfg["train.method"],
            lambda_=cfg["train.lambda"],
            learning_rate=cfg["train.learning_rate"],
            decay_after_steps=cfg["train.decay_after_steps"],
            decay_factor=cfg["train.decay_factor"],
            pretrain_steps=cfg["train.pretrain_steps"],
            joint_iterations=None if ji < 0 else ji,
            steps_per_iteration=cfg["train.steps_per_iteration"],
            total_steps=cfg["train.total_steps"],
            batch_size=cfg["train.batch_size"],
            seed=cfg["train.seed"] if seed_override is None else seed_override,
            scheduled_sampling_p=cfg["train.scheduled_sampling_p"],
            agreement_mode=cfg["train.agreement_mode"],
        )
    except ValueError as err:
        raise ConfigError(str(err)) from None
