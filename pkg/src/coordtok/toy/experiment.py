"""End-to-end toy run: SFT, snapshot, GRPO, then held-out evaluation with the
duplicate and large-box ablations."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..diagnostics import AblationReport, strip_and_reeval
from ..grpo import GrpoConfig
from ..metrics import format_table
from .policy import Adam, LinearPolicy
from .train import DEFAULT_MAX_LEN, GREEDY, grpo_step, sample_sequence, sft_step
from .world import EXTENT, REPEAT_PROB, ToyVocab, generate_scene

log = logging.getLogger(__name__)

HELD_OUT_BASE = 10**12


@dataclass
class ExperimentConfig:
    seeds: tuple = (0,)
    sft_steps: int = 3000
    grpo_steps: int = 200
    batch_size: int = 32
    group_size: int = 8
    beta: float = 0.01
    clip_eps: float = 0.2
    sft_lr: float = 0.05
    grpo_lr: float = 0.01
    eval_scenes: int = 500
    max_len: int = DEFAULT_MAX_LEN
    repeat_prob: float = REPEAT_PROB
    log_every: int = 0


@dataclass
class PolicyEval:
    f1_at_50: float
    f1_at_95: float
    f1_miou: float
    duplicates: AblationReport
    large_box: AblationReport

    def to_dict(self) -> dict:
        return {
            "f1_at_50": self.f1_at_50,
            "f1_at_95": self.f1_at_95,
            "f1_miou": self.f1_miou,
            "duplicates": _ablation_summary(self.duplicates),
            "large_box": _ablation_summary(self.large_box),
        }


def _ablation_summary(r: AblationReport) -> dict:
    return {
        "f1_at_50_after": r.after.f1_at_50,
        "f1_gain": r.f1_gain,
        "removal_ratio": r.removal_ratio,
        "removed": r.removed,
        "total_predictions": r.total,
        "flagged_images": r.flagged_images,
    }


@dataclass
class SeedReport:
    seed: int
    sft: PolicyEval
    grpo: PolicyEval
    sft_loss: list = field(default_factory=list)
    grpo_reward: list = field(default_factory=list)
    grpo_kl: list = field(default_factory=list)
    ref_checksum: str = ""
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "sft": self.sft.to_dict(),
            "grpo": self.grpo.to_dict(),
            "sft_loss": self.sft_loss,
            "grpo_reward": self.grpo_reward,
            "grpo_kl": self.grpo_kl,
            "ref_checksum": self.ref_checksum,
        }


def _median(xs):
    return float(np.median(xs))


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    seeds: list

    def summary(self) -> dict:
        out = {}
        for stage in ("sft", "grpo"):
            evs = [getattr(s, stage) for s in self.seeds]
            out[stage] = {
                "f1_at_50": _median([e.f1_at_50 for e in evs]),
                "dup_f1_gain": _median([e.duplicates.f1_gain for e in evs]),
                "dup_removal_ratio": _median([e.duplicates.removal_ratio for e in evs]),
                "large_f1_gain": _median([e.large_box.f1_gain for e in evs]),
                "large_removal_ratio": _median([e.large_box.removal_ratio for e in evs]),
            }
        return out

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "median": self.summary(),
            "seeds": [s.to_dict() for s in self.seeds],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def table(self) -> str:
        """Median over seeds, percent: F1@0.5 before and after each removal and its ratio."""
        m = self.summary()
        rows = []
        for stage in ("sft", "grpo"):
            r = m[stage]
            rows.append([r["f1_at_50"], r["f1_at_50"] + r["dup_f1_gain"], r["dup_removal_ratio"],
                         r["f1_at_50"] + r["large_f1_gain"], r["large_removal_ratio"]])
        head = ["F1@0.5", "F1@0.5 dedup", "Remov.", "F1@0.5 no-large", "Remov."]
        return format_table(head, rows, row_names=["SFT", "GRPO"])


def held_out_scenes(n: int, repeat_prob: float = REPEAT_PROB) -> list:
    return [generate_scene(HELD_OUT_BASE + k, repeat_prob) for k in range(n)]


def evaluate_policy(policy: LinearPolicy, scenes, max_len: int = DEFAULT_MAX_LEN) -> PolicyEval:
    """Greedy-decode every scene and run both removal ablations."""
    seqs = [ToyVocab.surface(sample_sequence(policy, s, GREEDY, max_len)) for s in scenes]
    gts = [s.gt_boxes() for s in scenes]
    extents = [EXTENT] * len(scenes)
    dup = strip_and_reeval(seqs, gts, extents, "duplicates")
    big = strip_and_reeval(seqs, gts, extents, "large_box")
    b = dup.before
    return PolicyEval(b.f1_at_50, b.f1_at_95, b.f1_miou, dup, big)


def _scene_stream(ss, repeat_prob):
    rng = np.random.default_rng(ss)
    while True:
        yield generate_scene(int(rng.integers(0, 2**62)), repeat_prob)


def train_sft(cfg: ExperimentConfig, seed: int):
    """Teacher-forced training from zero weights; returns ``(policy, losses)``."""
    ss_sft, _, _ = np.random.SeedSequence(seed).spawn(3)
    scenes = _scene_stream(ss_sft, cfg.repeat_prob)
    policy = LinearPolicy()
    opt = Adam(policy.w.shape, cfg.sft_lr)
    losses = []
    for step in range(cfg.sft_steps):
        batch = []
        for _ in range(cfg.batch_size):
            s = next(scenes)
            batch.append((s, s.gt_tokens()))
        _, loss = sft_step(policy, batch, cfg.sft_lr, opt)
        losses.append(loss)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("seed %d sft step %d loss %.4f", seed, step, loss)
    return policy, losses


def train_grpo(policy: LinearPolicy, cfg: ExperimentConfig, seed: int):
    """GRPO against a frozen copy of ``policy``; returns ``(policy, ref, rewards, kls)``."""
    _, ss_grpo, ss_roll = np.random.SeedSequence(seed).spawn(3)
    scenes = _scene_stream(ss_grpo, cfg.repeat_prob)
    rng = np.random.default_rng(ss_roll)
    ref = policy.copy()
    ref.w.setflags(write=False)
    gcfg = GrpoConfig(cfg.clip_eps, cfg.beta)
    opt = Adam(policy.w.shape, cfg.grpo_lr)
    rewards, kls = [], []
    for step in range(cfg.grpo_steps):
        batch = [next(scenes) for _ in range(cfg.batch_size)]
        _, st = grpo_step(policy, ref, batch, gcfg, cfg.group_size, rng, opt=opt,
                          max_len=cfg.max_len)
        rewards.append(st.mean_reward)
        kls.append(st.mean_kl)
        if cfg.log_every and step % max(cfg.log_every // 10, 1) == 0:
            log.info("seed %d grpo step %d reward %.4f kl %.5f", seed, step, st.mean_reward,
                     st.mean_kl)
    return policy, ref, rewards, kls


def run_seed(cfg: ExperimentConfig, seed: int, scenes=None) -> SeedReport:
    t0 = time.perf_counter()
    scenes = scenes if scenes is not None else held_out_scenes(cfg.eval_scenes, cfg.repeat_prob)
    policy, losses = train_sft(cfg, seed)
    sft_eval = evaluate_policy(policy, scenes, cfg.max_len)
    policy, ref, rewards, kls = train_grpo(policy, cfg, seed)
    grpo_eval = evaluate_policy(policy, scenes, cfg.max_len)
    return SeedReport(seed, sft_eval, grpo_eval, losses, rewards, kls, ref.checksum(),
                      time.perf_counter() - t0)


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    scenes = held_out_scenes(cfg.eval_scenes, cfg.repeat_prob)
    reports = []
    for seed in cfg.seeds:
        r = run_seed(cfg, seed, scenes)
        log.info("seed %d done in %.1fs", seed, r.seconds)
        reports.append(r)
    return ExperimentReport(cfg, reports)
