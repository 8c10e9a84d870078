"""Training loop: sample programs per target, score renders, step SGD with momentum.

``metrics.csv`` holds only values that are a pure function of seed and
config (so reruns are byte-identical); wall-clock time goes to
``timing.csv`` keyed by the same iteration number.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import nn
from .data import Dataset
from .grammar import Vocabulary, parse
from .objective import ObjectiveConfig, total_update
from .policy import Policy, PolicyConfig, Rollout
from .reward import RewardConfig, score
from .swor import sample_iid, stochastic_beam_search

log = logging.getLogger(__name__)

METRIC_FIELDS = ["iteration", "epoch", "mean_reward", "max_reward", "expected_reward",
                 "entropy", "loss", "grad_norm"]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    k: int = 19
    alpha: float = 0.05
    lr: float = 0.01
    momentum: float = 0.9
    gamma: float = 20.0
    delta: float = 0.3
    batch_size: int = 10
    iterations: int = 1000
    seed: int = 0
    reward_mode: str = "full"
    sampling: str = "swor"  # or "iid" (with replacement)
    grammar_mask: bool = True
    max_shapes: int = 3
    normalize: bool = True
    baseline: bool = True
    entropy_score_term: bool = True
    iid_entropy: str = "naive"
    checkpoint_every: int = 100
    # policy sizes
    channels: str = "8,16,32"
    embed_dim: int = 128
    token_dim: int = 64
    hidden: int = 128
    stack_depth: int = 1
    input_pool: int = 1
    triangle: str = "inscribed"

    def validate(self) -> "RunConfig":
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.batch_size < 1 or self.iterations < 0:
            raise ConfigError("batch_size must be >= 1 and iterations >= 0")
        if self.reward_mode not in ("full", "chamfer-only"):
            raise ConfigError(f"unknown reward mode {self.reward_mode!r}")
        if self.sampling not in ("swor", "iid"):
            raise ConfigError(f"unknown sampling {self.sampling!r}")
        if self.iid_entropy not in ("naive", "decomposed"):
            raise ConfigError(f"unknown iid entropy estimator {self.iid_entropy!r}")
        try:
            self.reward_config()
            self.policy_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        """Build from string or typed values; unknown keys are an error."""
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for key, v in values.items():
            name = key.replace("-", "_")
            if name not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kw[name] = _coerce(known[name].type, v, key)
        return cls(**kw).validate()

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def reward_config(self) -> RewardConfig:
        return RewardConfig(gamma=self.gamma, delta=self.delta)

    def objective_config(self) -> ObjectiveConfig:
        return ObjectiveConfig(self.alpha, self.normalize, self.baseline,
                               self.entropy_score_term, self.iid_entropy)

    def policy_config(self) -> PolicyConfig:
        return PolicyConfig(channels=tuple(int(c) for c in str(self.channels).split(",")),
                            embed_dim=self.embed_dim, token_dim=self.token_dim,
                            hidden=self.hidden, stack_depth=self.stack_depth,
                            input_pool=self.input_pool, max_shapes=self.max_shapes,
                            grammar_mask=self.grammar_mask, triangle=self.triangle)


def _coerce(typ, v, key):
    if not isinstance(v, str):
        return v
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            low = v.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(v)
            return low in ("1", "true", "yes", "on")
        if typ == "int":
            return int(v)
        if typ == "float":
            return float(v)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {v!r}") from None
    return v.strip()


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for n, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected key = value")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


# one target ----------------------------------------------------------------

def sample_batch(rollout: Rollout, cfg: RunConfig, rng):
    steps = rollout.cfg.max_steps
    if cfg.sampling == "iid":
        return sample_iid(rollout, cfg.k, rng, steps)
    return stochastic_beam_search(rollout, cfg.k, rng, steps)


def beam_rewards(rollout: Rollout, beams, cfg: RunConfig, rcfg: RewardConfig) -> list[float]:
    target = rollout.target
    empty = np.zeros_like(target)
    out = []
    for b in beams:
        img = rollout.output(b.state)
        out.append(score(cfg.reward_mode, target, empty if img is None else img, rcfg))
    return out


def target_update(policy: Policy, target, cfg: RunConfig, rng, scale: float):
    ro = policy.rollout(target, grad=True)
    batch = sample_batch(ro, cfg, rng)
    iid = cfg.sampling == "iid"
    beams = batch if iid else batch.samples
    rewards = beam_rewards(ro, beams, cfg, cfg.reward_config())
    return total_update(ro, batch, rewards, cfg.objective_config(), scale=scale, iid=iid), ro, beams


# loop ------------------------------------------------------------------------

def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, 1, epoch]).permutation(n)


def batch_indices(n: int, batch_size: int, seed: int, iteration: int) -> tuple[int, np.ndarray]:
    per_epoch = max(1, -(-n // batch_size))
    epoch, b = divmod(iteration, per_epoch)
    order = epoch_order(n, seed, epoch)
    return epoch, order[b * batch_size:(b + 1) * batch_size]


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def build_policy(cfg: RunConfig, vocab: Vocabulary) -> Policy:
    return Policy(vocab, cfg.policy_config(), seed=cfg.seed)


def train(cfg: RunConfig, dataset: Dataset, vocab: Vocabulary, out_dir, resume: bool = False,
          progress=None) -> Policy:
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    policy = build_policy(cfg, vocab)
    ckpt = out / "checkpoint.bin"
    meta = {"config": cfg.as_dict(), **policy.meta()}
    if resume and ckpt.exists():
        got = nn.load_into(policy.store, ckpt)
        if got.get("vocab") != meta["vocab"]:
            raise ConfigError(f"{ckpt}: vocabulary differs from the dataset")
        log.info("resumed from iteration %d", policy.store.step)
    start = policy.store.step
    metrics_path, timing_path = out / "metrics.csv", out / "timing.csv"
    mode = "a" if start > 0 else "w"
    if start > 0:
        _truncate_csv(metrics_path, start)
        _truncate_csv(timing_path, start)
    n = len(dataset)
    t0 = time.perf_counter()
    with open(metrics_path, mode, newline="") as mf, open(timing_path, mode, newline="") as tf:
        mw, tw = csv.writer(mf, lineterminator="\n"), csv.writer(tf, lineterminator="\n")
        if start == 0:
            mw.writerow(METRIC_FIELDS)
            tw.writerow(["iteration", "wall_time"])
        for it in range(start, cfg.iterations):
            epoch, idx = batch_indices(n, cfg.batch_size, cfg.seed, it)
            reports = []
            for t in idx:
                rng = np.random.default_rng([cfg.seed, it, int(t)])
                rep, _, _ = target_update(policy, dataset.images[t], cfg, rng, 1.0 / len(idx))
                reports.append(rep)
            gnorm = policy.store.grad_norm()
            nn.sgd_momentum_step(policy.store, cfg.lr, cfg.momentum, allow_missing=True)
            row = [it, epoch,
                   np.mean([r.mean_reward for r in reports]),
                   np.mean([r.max_reward for r in reports]),
                   np.mean([r.reinforce for r in reports]),
                   np.mean([r.entropy for r in reports]),
                   np.mean([r.loss for r in reports]), gnorm]
            mw.writerow([_fmt(v) for v in row])
            tw.writerow([it, f"{time.perf_counter() - t0:.3f}"])
            if (it + 1) % cfg.checkpoint_every == 0 or it + 1 == cfg.iterations:
                mf.flush()
                tf.flush()
                nn.save_checkpoint(ckpt, policy.store, meta)
            if progress is not None:
                progress(dict(zip(METRIC_FIELDS, row)))
    return policy


def _truncate_csv(path: Path, keep_rows: int) -> None:
    """Drop data rows at or beyond ``keep_rows`` (written after the last checkpoint)."""
    if not path.exists():
        raise ConfigError(f"cannot resume: {path} is missing")
    with open(path, newline="") as f:
        lines = f.read().splitlines(keepends=True)
    with open(path, "w", newline="") as f:
        f.writelines(lines[:keep_rows + 1])


def load_policy(path, vocab: Vocabulary | None = None) -> tuple[Policy, dict]:
    manifest, _, _ = nn.read_checkpoint(path)
    meta = manifest["meta"]
    if vocab is not None and meta.get("vocab") != vocab.signature():
        raise ConfigError(f"{path}: checkpoint vocabulary does not match the dataset vocabulary")
    if vocab is None:
        shapes = [parse(t)[0].value for t in meta["vocab"] if t[:1] in "cst" and "(" in t]
        vocab = Vocabulary(shapes)
    policy = Policy(vocab, Policy.config_from_meta(meta))
    nn.load_into(policy.store, path)
    return policy, meta

