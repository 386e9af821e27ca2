"""Two-iteration training recipe, greedy evaluation, and run artifacts.

Iteration 1 trains with the alignment loss only and exports the frozen
alignment posteriors of its final model.  Iteration 2 warm-starts from
that checkpoint and adds the weighted distillation loss, with layers and
context variants re-selected every epoch.  All shuffling and selection
is derived from (seed, epoch), so runs are reproducible and resumable.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats, model as model_mod, nn
from .data import TeacherRepSet, Utterance, detokenize, edit_distance
from .distill import MultiRep, RepComponent, concat_representations
from .errors import (
    ConsistencyError,
    DegenerateModel,
    InvalidConfig,
    MissingArtifact,
)
from .model import KDTarget, StudentModel
from .seeding import rng_for
from .strategies import (
    ContextVariantPolicy,
    StrategySpec,
    mean_pool_layers,
    sample_context_variant,
    select_layers,
)

ITER1_CHECKPOINT = "iter1.ckpt"
ITER2_CHECKPOINT = "iter2.ckpt"
POSTERIOR_FILE = "iter1.alnq"


@dataclass
class TrainConfig:
    epochs: int = 20
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 8
    seed: int = 1
    kd_weight: float = 0.01
    distance: str = "l1"
    normalize_kd: bool = False
    strategy: str = "uniform"
    layers_k: int = 2
    context_variants: int = 1
    mask_rate: float = 0.0
    teacher_ids: list[str] = field(default_factory=list)
    fresh_init_iter2: bool = False
    max_symbols_per_frame: int = 10

    def validate(self) -> None:
        if self.epochs < 1:
            raise InvalidConfig("need at least one epoch")
        if self.kd_weight < 0:
            raise InvalidConfig("kd weight must be >= 0")
        if self.batch_size < 1:
            raise InvalidConfig("batch size must be >= 1")


@dataclass
class EpochMetrics:
    epoch: int
    asr_loss: float
    kd_loss: float
    combined: float
    dev_wer: float

    def line(self) -> str:
        return (
            f"{self.epoch}\t{self.asr_loss:.6f}\t{self.kd_loss:.6f}"
            f"\t{self.combined:.6f}\t{self.dev_wer:.6f}"
        )


class MomentumSGD:
    """Plain momentum SGD with a fixed parameter order for determinism."""

    def __init__(self, params: dict[str, np.ndarray], lr: float, momentum: float):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(arr) for name, arr in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for name in self.params:
            g = grads.get(name)
            if g is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v += g
            self.params[name] -= self.lr * v


# ---------------------------------------------------------------------------
# teacher target assembly


class TeacherBundle:
    """Per-epoch (layers, variant) scheduling over one or more teachers."""

    def __init__(
        self,
        teacher_sets: list[TeacherRepSet],
        strategy: str,
        layers_k: int,
        context_variants: int,
        mask_rate: float,
        seed: int,
    ):
        if not teacher_sets:
            raise InvalidConfig("distillation enabled but no teacher representations given")
        self.sets = sorted(teacher_sets, key=lambda s: s.teacher_id)
        seen = [s.teacher_id for s in self.sets]
        if len(set(seen)) != len(seen):
            raise InvalidConfig(f"duplicate teacher ids: {seen}")
        self.specs = [
            StrategySpec(kind=strategy, layers_k=layers_k, total_layers=s.layers,
                         seed=rng_for(seed, "teacher", s.teacher_id).integers(2**31))
            for s in self.sets
        ]
        for spec in self.specs:
            spec.validate()
        self.strategy = strategy
        self.policy = ContextVariantPolicy(variants=context_variants, mask_rate=mask_rate, seed=seed)
        self.policy.validate()
        for s in self.sets:
            if context_variants > s.variants:
                raise InvalidConfig(
                    f"policy wants {context_variants} context variants but teacher "
                    f"{s.teacher_id!r} stores only {s.variants}"
                )

    def reg_out_dim(self) -> int:
        total = 0
        for s, spec in zip(self.sets, self.specs):
            n_layers = 1 if self.strategy == "meanpool" else len(select_layers(spec, 0))
            total += n_layers * s.hidden_dim
        return total

    def layers_for_epoch(self, epoch: int) -> list[list[int]]:
        return [select_layers(spec, epoch) for spec in self.specs]

    def target_for(self, utt_id: str, epoch: int, layers_by_teacher: list[list[int]]) -> MultiRep:
        components = []
        for s, layers in zip(self.sets, layers_by_teacher):
            variant = sample_context_variant(self.policy, utt_id, epoch)
            if self.strategy == "meanpool":
                pooled = mean_pool_layers([s.get(utt_id, variant, l) for l in layers])
                components.append(
                    (RepComponent(s.teacher_id, variant, 0, s.hidden_dim), pooled)
                )
            else:
                for l in layers:
                    components.append(
                        (RepComponent(s.teacher_id, variant, l, s.hidden_dim),
                         s.get(utt_id, variant, l))
                    )
        return concat_representations(components)


def posterior_table_digest(table: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for utt_id in sorted(table):
        h.update(utt_id.encode())
        h.update(np.ascontiguousarray(table[utt_id]).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalRow:
    utt_id: str
    ref_words: list[str]
    hyp_words: list[str]
    edits: int
    skipped: bool = False

    @property
    def wer(self) -> float:
        return self.edits / len(self.ref_words) if self.ref_words else 0.0


@dataclass
class EvalReport:
    rows: list[EvalRow]
    total_edits: int
    total_ref_words: int

    @property
    def corpus_wer(self) -> float:
        if self.total_ref_words == 0:
            return 0.0
        return self.total_edits / self.total_ref_words


def evaluate(
    model: StudentModel,
    utts: list[Utterance],
    vocab: list[str] | None,
    max_symbols_per_frame: int = 10,
) -> EvalReport:
    """Greedy-decode every utterance; corpus WER is total edits / total words."""
    rows = []
    total_edits = 0
    total_ref = 0
    for u in utts:
        ref = detokenize(u.tokens, vocab)
        if not ref:
            rows.append(EvalRow(u.id, [], [], 0, skipped=True))
            continue
        hyp_tokens = model_mod.greedy_decode(model, u.frames, max_symbols_per_frame)
        hyp = detokenize(hyp_tokens, vocab)
        edits = edit_distance(ref, hyp)
        rows.append(EvalRow(u.id, ref, hyp, edits))
        total_edits += edits
        total_ref += len(ref)
    return EvalReport(rows=rows, total_edits=total_edits, total_ref_words=total_ref)


def write_eval_report(path: str | Path, report: EvalReport) -> None:
    lines = ["utt_id\tref\thyp\tedits\twer\tskipped"]
    for r in report.rows:
        lines.append(
            f"{r.utt_id}\t{' '.join(r.ref_words)}\t{' '.join(r.hyp_words)}"
            f"\t{r.edits}\t{r.wer:.6f}\t{int(r.skipped)}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# training loops


def _epoch_pass(
    model: StudentModel,
    opt: MomentumSGD,
    utts: list[Utterance],
    cfg: TrainConfig,
    epoch: int,
    kd_provider,
) -> tuple[float, float]:
    order = rng_for(cfg.seed, "shuffle", epoch).permutation(len(utts))
    sum_asr = 0.0
    sum_kd = 0.0
    for start in range(0, len(order), cfg.batch_size):
        batch = [utts[i] for i in order[start : start + cfg.batch_size]]
        acc: dict[str, np.ndarray] = {}
        for u in batch:
            kd_target = kd_provider(u) if kd_provider is not None else None
            breakdown, grads = model_mod.utterance_loss_and_grads(
                model, u.frames, u.tokens, kd_target,
                cfg.kd_weight if kd_target is not None else 0.0,
                cfg.distance, cfg.normalize_kd,
            )
            if not math.isfinite(breakdown.combined):
                raise DegenerateModel(
                    f"loss diverged at epoch {epoch} on {u.id} "
                    f"(asr={breakdown.asr_nll}, kd={breakdown.kd})"
                )
            sum_asr += breakdown.asr_nll
            sum_kd += breakdown.kd
            for name, g in grads.items():
                if name in acc:
                    acc[name] += g
                else:
                    acc[name] = g.copy()
        scale = np.asarray(1.0 / len(batch), dtype=model.cfg.dtype)
        acc = {name: g * scale for name, g in acc.items()}
        opt.step(acc)
    n = len(utts)
    return sum_asr / n, sum_kd / n


def _save_state(path: Path, model: StudentModel, opt: MomentumSGD, epoch: int) -> None:
    blobs: dict[str, np.ndarray] = dict(model.named_params())
    for name, v in opt.velocity.items():
        blobs[f"opt.{name}"] = v
    blobs["meta.epoch"] = np.array(float(epoch), dtype=np.float32)
    formats.write_checkpoint(path, model.digest(), blobs)


def _load_state(path: Path, model_cfg: nn.ModelConfig) -> tuple[StudentModel, dict, int]:
    digest, blobs = formats.read_checkpoint(path)
    params = {k: v for k, v in blobs.items() if not k.startswith(("opt.", "meta."))}
    model = model_mod.load_student(model_cfg, params)
    if digest != model.digest():
        raise ConsistencyError(
            f"{path}: state was trained with a different model configuration"
        )
    velocity = {
        k[len("opt."):]: v.astype(model_cfg.dtype)
        for k, v in blobs.items()
        if k.startswith("opt.")
    }
    epoch = int(blobs["meta.epoch"])
    return model, velocity, epoch


def _train_loop(
    model: StudentModel,
    cfg: TrainConfig,
    train_utts: list[Utterance],
    dev_utts: list[Utterance],
    vocab: list[str] | None,
    run_dir: Path,
    tag: str,
    kd_provider_factory=None,
    frozen_q_table: dict[str, np.ndarray] | None = None,
    resume_from: Path | None = None,
) -> list[EpochMetrics]:
    run_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = run_dir / f"{tag}.metrics.tsv"
    state_path = run_dir / f"{tag}.state.ckpt"
    start_epoch = 0
    opt = MomentumSGD(model.named_params(), cfg.lr, cfg.momentum)
    if resume_from is not None:
        resumed, velocity, start_epoch = _load_state(Path(resume_from), model.cfg)
        if resumed.regression is None and model.regression is not None:
            raise ConsistencyError("resume state lacks the regression head")
        for name, arr in model.named_params().items():
            arr[...] = resumed.named_params()[name]
        for name in opt.velocity:
            opt.velocity[name][...] = velocity[name]
    else:
        metrics_path.write_text("", encoding="utf-8")

    q_digest = posterior_table_digest(frozen_q_table) if frozen_q_table is not None else None
    metrics: list[EpochMetrics] = []
    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        if q_digest is not None:
            if posterior_table_digest(frozen_q_table) != q_digest:
                raise ConsistencyError("frozen alignment posteriors changed mid-run")
        provider = kd_provider_factory(epoch) if kd_provider_factory is not None else None
        asr, kd = _epoch_pass(model, opt, train_utts, cfg, epoch, provider)
        dev = evaluate(model, dev_utts, vocab, cfg.max_symbols_per_frame)
        m = EpochMetrics(
            epoch=epoch,
            asr_loss=asr,
            kd_loss=kd,
            combined=asr + cfg.kd_weight * kd,
            dev_wer=dev.corpus_wer,
        )
        metrics.append(m)
        with open(metrics_path, "a", encoding="utf-8") as f:
            f.write(m.line() + "\n")
        _save_state(state_path, model, opt, epoch)
    return metrics


def train_iteration1(
    model_cfg: nn.ModelConfig,
    cfg: TrainConfig,
    train_utts: list[Utterance],
    dev_utts: list[Utterance],
    vocab: list[str] | None,
    run_dir: str | Path,
    resume_from: Path | None = None,
) -> tuple[StudentModel, list[EpochMetrics]]:
    """Alignment-loss-only phase; exports checkpoint + frozen posteriors."""
    cfg.validate()
    if not train_utts:
        raise InvalidConfig("training corpus is empty")
    run_dir = Path(run_dir)
    model = model_mod.init_student(model_cfg, cfg.seed)
    metrics = _train_loop(
        model, cfg, train_utts, dev_utts, vocab, run_dir, "iter1",
        resume_from=resume_from,
    )
    formats.write_checkpoint(run_dir / ITER1_CHECKPOINT, model.digest(), model.named_params())
    posteriors = {}
    for u in train_utts:
        q = model_mod.compute_posteriors(model, u.frames, u.tokens)
        posteriors[u.id] = q.astype(np.float32)
    formats.write_posteriors(run_dir / POSTERIOR_FILE, posteriors)
    return model, metrics


def train_iteration2(
    model_cfg: nn.ModelConfig,
    cfg: TrainConfig,
    train_utts: list[Utterance],
    dev_utts: list[Utterance],
    vocab: list[str] | None,
    run_dir: str | Path,
    checkpoint_path: str | Path,
    teacher_sets: list[TeacherRepSet],
    frozen_q: dict[str, np.ndarray],
    resume_from: Path | None = None,
) -> tuple[StudentModel, list[EpochMetrics]]:
    """Combined-loss phase with frozen posteriors and per-epoch layer selection."""
    cfg.validate()
    if not train_utts:
        raise InvalidConfig("training corpus is empty")
    run_dir = Path(run_dir)
    checkpoint_path = Path(checkpoint_path)

    bundle = None
    if cfg.kd_weight > 0.0:
        bundle = TeacherBundle(
            teacher_sets, cfg.strategy, cfg.layers_k,
            cfg.context_variants, cfg.mask_rate, cfg.seed,
        )
        if cfg.teacher_ids:
            have = {s.teacher_id for s in bundle.sets}
            missing = [t for t in cfg.teacher_ids if t not in have]
            if missing:
                raise MissingArtifact(f"no representations loaded for teachers {missing}")
        for u in train_utts:
            if u.id not in frozen_q:
                raise MissingArtifact(
                    f"frozen posterior missing for training utterance {u.id!r}"
                )

    reg_dim = bundle.reg_out_dim() if bundle is not None else None
    if cfg.fresh_init_iter2:
        model = model_mod.init_student(model_cfg, cfg.seed, reg_out_dim=reg_dim)
    else:
        if not checkpoint_path.exists():
            raise MissingArtifact(f"first-iteration checkpoint not found: {checkpoint_path}")
        digest, blobs = formats.read_checkpoint(checkpoint_path)
        model = model_mod.load_student(model_cfg, blobs)
        if digest != model.digest():
            raise ConsistencyError(
                f"{checkpoint_path}: checkpoint digest {digest} does not match the "
                f"configured model ({model.digest()})"
            )
        if reg_dim is not None:
            from .distill import init_regression

            model.regression = init_regression(
                model_cfg.d_trs + model_cfg.d_prd, reg_dim, cfg.seed, model_cfg.dtype
            )

    frozen_table = None
    provider_factory = None
    if bundle is not None:
        frozen_table = frozen_q

        def provider_factory(epoch: int):
            layers = bundle.layers_for_epoch(epoch)

            def provider(u: Utterance) -> KDTarget:
                return KDTarget(
                    target=bundle.target_for(u.id, epoch, layers),
                    posterior=frozen_q[u.id],
                )

            return provider

    metrics = _train_loop(
        model, cfg, train_utts, dev_utts, vocab, run_dir, "iter2",
        kd_provider_factory=provider_factory,
        frozen_q_table=frozen_table,
        resume_from=resume_from,
    )
    formats.write_checkpoint(run_dir / ITER2_CHECKPOINT, model.digest(), model.named_params())
    return model, metrics
