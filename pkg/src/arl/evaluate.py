"""Metrics, stage-1 ablation, the two sweeps and the majority-class baseline."""

from __future__ import annotations

import csv
import json
import logging
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, replace

from .datagen import build_vocab
from .pipeline import (Pipeline, Stage1Model, TrainConfig, TrainingError, balanced_pairs, safe_answer,
                       train_stage1, train_stage2)
from .questions import ANSWERS, answer_index
from .scene import scenes_equivalent

log = logging.getLogger(__name__)

CPU_BUDGET_S = 60 * 60.0
DATA_GRID = (2000, 5000, 10000, 15000, 20000, 25000)
VECLEN_GRID = tuple(range(25, 201, 25))


class BudgetExceeded(RuntimeError):
    pass


class Budget:
    """CPU-time guard; ``check`` raises once ``limit_s`` seconds of process time are spent."""

    def __init__(self, limit_s: float = CPU_BUDGET_S, label: str = "run"):
        self.limit_s = limit_s
        self.label = label
        self.start = time.process_time()

    @property
    def used(self) -> float:
        return time.process_time() - self.start

    def check(self, where: str = "") -> None:
        if self.used > self.limit_s:
            raise BudgetExceeded(f"{self.label} aborted{' in ' + where if where else ''}: "
                                 f"{self.used / 60:.1f} CPU-minutes used, limit {self.limit_s / 60:.0f}")

    def hook(self, progress=None):
        def _cb(msg):
            if progress:
                progress(msg)
            self.check(msg.split(" train")[0])
        return _cb


# -- per-split evaluation ---------------------------------------------------------------


class OraclePipeline:
    """Passes the stored post-scene through; the executor alone decides the answer."""

    def predict_episodes(self, episodes):
        return [e.post_scene for e in episodes]


@dataclass
class SplitReport:
    split: str
    n: int
    qa_accuracy: float
    scene_accuracy: float
    scene_correct_answer_wrong: int
    per_action_type: dict = field(default_factory=dict)
    per_reasoning_type: dict = field(default_factory=dict)


@dataclass
class RunReport:
    config: dict
    seed: int
    splits: dict = field(default_factory=dict)
    majority_baseline: float | None = None
    sizes: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0
    cpu_s: float = 0.0
    training: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["splits"] = {k: asdict(v) for k, v in self.splits.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _pct(hits: int, n: int) -> float:
    return round(100.0 * hits / n, 4) if n else 0.0


def _breakdown(keys, scene_hits, qa_hits) -> dict:
    out = {}
    for k in sorted(set(keys)):
        idx = [i for i, key in enumerate(keys) if key == k]
        out[k] = {"n": len(idx), "scene_accuracy": _pct(sum(scene_hits[i] for i in idx), len(idx)),
                  "qa_accuracy": _pct(sum(qa_hits[i] for i in idx), len(idx))}
    return out


def eval_split(pipeline, episodes, split: str = "test") -> SplitReport:
    """Score ``pipeline`` on ``episodes``.

    ``pipeline`` needs ``predict_episodes(episodes) -> scenes``; if it also has
    ``answer_episodes(episodes, scenes)`` those answers are scored instead of
    executing the question program on the predicted scenes.
    """
    episodes = list(episodes)
    if not episodes:
        raise ValueError(f"split {split!r} has no episodes")
    scenes = pipeline.predict_episodes(episodes)
    if hasattr(pipeline, "answer_episodes"):
        answers = pipeline.answer_episodes(episodes, scenes)
    else:
        answers = [safe_answer(s, e.question_program) for s, e in zip(scenes, episodes)]
    scene_hits = [scenes_equivalent(s, e.post_scene) for s, e in zip(scenes, episodes)]
    qa_hits = [a == e.answer for a, e in zip(answers, episodes)]
    bad = sum(s and not q for s, q in zip(scene_hits, qa_hits))
    if bad:
        log.warning("%s: %d episodes have a correct scene but a wrong answer", split, bad)
    n = len(episodes)
    return SplitReport(
        split=split, n=n,
        qa_accuracy=_pct(sum(qa_hits), n),
        scene_accuracy=_pct(sum(scene_hits), n),
        scene_correct_answer_wrong=bad,
        per_action_type=_breakdown([e.action_type for e in episodes], scene_hits, qa_hits),
        per_reasoning_type=_breakdown([e.reasoning_type for e in episodes], scene_hits, qa_hits),
    )


def majority_baseline(episodes) -> float:
    """Accuracy of always giving the split's most frequent answer (ties: earliest in the vocabulary)."""
    counts = Counter(e.answer for e in episodes)
    if not counts:
        raise ValueError("majority baseline of an empty split")
    best = min(counts, key=lambda a: (-counts[a], answer_index(a)))
    return _pct(counts[best], sum(counts.values()))


# -- training entry points ------------------------------------------------------------


def train_pipeline(train, val, config: TrainConfig, with_stage1: bool = True, budget: Budget | None = None,
                   progress=None, vocab=None):
    """Stage 1 (optional) then stage 2.

    Without stage 1 the decoder keeps its random initialisation and stays
    frozen, unless ``config.stage2_cotrain`` lets stage 2 fit it as well.
    """
    budget = budget or Budget(float("inf"))
    hook = budget.hook(progress)
    vocab = vocab or build_vocab(e.action_text for e in train)
    metrics = {}
    if with_stage1:
        pairs = balanced_pairs(train, config.stage1_pairs, config.seed)
        stage1, m1 = train_stage1([(a, b) for a, b, _ in pairs], config, hook)
        metrics["stage1"] = m1
        cfg2 = config
    else:
        stage1 = Stage1Model(config)
        cfg2 = config
    n2 = config.stage2_episodes or len(train)
    if n2 > len(train):
        raise TrainingError(f"stage 2 needs {n2} episodes, only {len(train)} available")
    nl, m2 = train_stage2(train[:n2], stage1, vocab, cfg2, val, hook)
    metrics["stage2"] = m2
    return Pipeline(stage1, nl, vocab, config), metrics


def _summary(metrics: dict) -> dict:
    out = {}
    for stage, m in metrics.items():
        out[stage] = {k: v for k, v in m.items() if not isinstance(v, list)}
        for k, v in m.items():
            if isinstance(v, list) and v:
                out[stage][k + "_final"] = v[-1]
                out[stage]["epochs"] = len(v)
    return out


def run(train, val, evals: dict, config: TrainConfig, with_stage1: bool = True, budget: Budget | None = None,
        progress=None) -> tuple[RunReport, Pipeline]:
    """Train once and evaluate on every split in ``evals`` (name -> episodes)."""
    t0, c0 = time.time(), time.process_time()
    pipe, metrics = train_pipeline(train, val, config, with_stage1, budget, progress)
    report = RunReport(config=config.to_dict(), seed=config.seed, training=_summary(metrics))
    for name, eps in evals.items():
        report.splits[name] = eval_split(pipe, eps, name)
    first = next(iter(evals.values()), None)
    if first:
        report.majority_baseline = majority_baseline(first)
    report.sizes = {"stage1_pairs": config.stage1_pairs if with_stage1 else 0,
                    "stage2_episodes": config.stage2_episodes or len(train),
                    "val_episodes": len(val or []), **{f"eval_{k}": len(v) for k, v in evals.items()}}
    report.wall_clock_s = round(time.time() - t0, 3)
    report.cpu_s = round(time.process_time() - c0, 3)
    return report, pipe


def ablate_stage1(train, val, test, config: TrainConfig, budget: Budget | None = None, progress=None) -> dict:
    """Stage(2 only) against Stage(1+2) with identical data and seeds."""
    budget = budget or Budget(label="stage-1 ablation")
    without, _ = run(train, val, {"test": test}, config, False, budget, progress)
    with_, _ = run(train, val, {"test": test}, config, True, budget, progress)
    a, b = without.splits["test"], with_.splits["test"]
    return {
        "stage2_only": without.to_dict(),
        "stage1_and_2": with_.to_dict(),
        "scene_gap": round(b.scene_accuracy - a.scene_accuracy, 4),
        "qa_gap": round(b.qa_accuracy - a.qa_accuracy, 4),
    }


def _sweep(train, val, test, config, axis: str, grid, budget, progress, make):
    rows = []
    for i, point in enumerate(grid):
        cfg = make(point)
        report, _ = run(train, val, {"test": test}, cfg, True, budget, progress)
        t = report.splits["test"]
        rows.append({axis: point, "scene_acc": t.scene_accuracy, "qa_acc": t.qa_accuracy,
                     "cpu_s": report.cpu_s})
        if progress:
            progress(f"sweep {axis}={point}: scene {t.scene_accuracy:.2f} qa {t.qa_accuracy:.2f}")
    return rows


def sweep_data_size(train, val, test, config: TrainConfig, grid=DATA_GRID, budget=None, progress=None):
    """Scene and QA accuracy per stage-1 pair budget; one row per grid point in grid order."""
    grid = list(grid)
    counts = Counter(e.action_type for e in train)
    cap = min(counts.values()) * len(counts) if counts else 0
    for g in grid:
        if g > cap:
            raise TrainingError(f"grid point {g} exceeds the {cap} balanced pairs available")
    budget = budget or Budget(label="data-size sweep")
    return _sweep(train, val, test, config, "pairs", grid, budget, progress,
                  lambda g: replace(config, stage1_pairs=int(g)))


def sweep_vector_length(train, val, test, config: TrainConfig, grid=VECLEN_GRID, budget=None, progress=None):
    """Scene and QA accuracy per action-vector length."""
    budget = budget or Budget(label="vector-length sweep")
    return _sweep(train, val, test, config, "d_a", list(grid), budget, progress,
                  lambda d: replace(config, d_a=int(d)))


def best_point(rows, axis: str, metric: str = "scene_acc"):
    return max(rows, key=lambda r: (r[metric], -r[axis]))[axis]


def write_series(rows, path) -> None:
    if not rows:
        raise ValueError("empty series")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def scaled(config: TrainConfig, scale: float) -> TrainConfig:
    """Shrink the data budgets by ``scale``; widths and schedule stay put."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    n2 = config.stage2_episodes
    return replace(config, stage1_pairs=max(4, int(round(config.stage1_pairs * scale))),
                   stage2_episodes=None if n2 is None else max(1, int(round(n2 * scale))))


__all__ = [
    "ANSWERS", "Budget", "BudgetExceeded", "OraclePipeline", "RunReport", "SplitReport", "ablate_stage1",
    "best_point", "eval_split", "majority_baseline", "run", "scaled", "sweep_data_size",
    "sweep_vector_length", "train_pipeline", "write_series",
]
