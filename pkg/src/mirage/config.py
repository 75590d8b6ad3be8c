"""INI-style run configuration with [synth], [reward], [network], [train] and [eval] sections."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from .harness import EvalConfig, PairSpec
from .reward import RewardConfig
from .rl.network import ArchConfig
from .rl.train import TrainConfig
from .trace import SynthParams

SECTIONS = ("synth", "reward", "network", "train", "eval")


def eval_from_mapping(section) -> EvalConfig:
    cfg = EvalConfig()
    pair = cfg.pair
    kw = {}
    for key, raw in dict(section).items():
        key, raw = key.strip().lower(), str(raw).strip()
        if key == "episodes":
            kw["episodes"] = int(raw)
        elif key == "pair_size":
            pair = replace(pair, size=int(raw))
        elif key == "pair_limit_h":
            pair = replace(pair, limit=int(round(float(raw) * 3600)))
        elif key == "warmup_h":
            kw["warmup"] = float(raw) * 3600
        elif key == "cadence":
            kw["cadence"] = float(raw)
        elif key == "cap_h":
            kw["cap"] = float(raw) * 3600
        elif key == "k":
            kw["k"] = int(raw)
        elif key == "limit_jitter_h":
            lo, hi = (float(x) for x in raw.replace(",", " ").split())
            kw["limit_jitter"] = (int(round(lo * 3600)), int(round(hi * 3600)))
        else:
            raise ValueError(f"unknown [eval] key: {key}")
    return replace(cfg, pair=pair, **kw)


@dataclass
class RunConfig:
    synth: SynthParams = field(default_factory=SynthParams)
    reward: RewardConfig = field(default_factory=RewardConfig)
    network: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def load_config(path=None) -> RunConfig:
    """Missing file sections keep their defaults; unknown sections or keys are errors."""
    cfg = RunConfig()
    if path is None:
        return cfg
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    parser = configparser.ConfigParser()
    parser.read(p)
    for name in parser.sections():
        if name not in SECTIONS:
            raise ValueError(f"unknown config section [{name}]")
    if parser.has_section("synth"):
        cfg.synth = SynthParams.from_mapping(parser["synth"])
    if parser.has_section("reward"):
        cfg.reward = RewardConfig.from_mapping(parser["reward"])
    if parser.has_section("network"):
        cfg.network = ArchConfig.from_mapping(parser["network"])
    if parser.has_section("train"):
        cfg.train = TrainConfig.from_mapping(parser["train"])
    if parser.has_section("eval"):
        cfg.eval = eval_from_mapping(parser["eval"])
    # a network must read the history length the episodes produce
    net_k, eval_k = parser.has_option("network", "k"), parser.has_option("eval", "k")
    if net_k and eval_k and cfg.network.k != cfg.eval.k:
        raise ValueError("[network] k and [eval] k disagree")
    if net_k:
        cfg.eval = replace(cfg.eval, k=cfg.network.k)
    elif eval_k:
        cfg.network = replace(cfg.network, k=cfg.eval.k)
    return cfg
