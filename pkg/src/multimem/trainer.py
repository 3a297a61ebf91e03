"""Training loop: batch composition, loss assembly, memory writes, periodic
similarity refresh, and per-epoch metric logging.

The loop follows a strict phase order inside every batch: forward, memory
reads, neighbor selection and weighting, losses, backward, optimizer step,
and only then memory writes. A batch therefore always sees slot values from
before its own writes.

Ablation variants mask parts of the machinery:

* ``baseline``  - source cross-entropy only, no banks at all;
* ``i``         - instance bank, raw top-k selection, hard unit weights;
* ``i+p``       - adds the part banks and weight rectification;
* ``i+d``       - adds the similarity matrix, clustering, domain bank and
                  loss, guided selection and soft weights (no parts);
* ``full``      - everything.

Guided selection only exists once the first similarity matrix has been
built (at ``domain_start_epoch``); before that even the full variant falls
back to raw top-k, and a refresh that yields no clusters disables the
domain loss until the next refresh without stopping the run.
"""

from __future__ import annotations

import dataclasses
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from . import evaluation
from .clustering import NOISE, PseudoLabeling, cluster
from .config import TrainConfig
from .encoder import Encoder, ForwardState
from .errors import DivergenceError, NoClustersError, ZeroVectorError
from .losses import (
    LossReport,
    domain_loss,
    instance_loss,
    rectify_weights,
    source_loss,
    total_loss,
)
from .memory_bank import MemoryBank, MemoryLevel, rebuild_domain_bank
from .reciprocal import (
    NeighborSelection,
    SimilarityMatrix,
    build_similarity,
    raw_top_k_selection,
    reorder_and_select,
    soft_weights,
)
from .synth import Batch, SynthDataset, make_batches


@dataclass(frozen=True)
class VariantMask:
    use_instance: bool
    use_parts: bool
    use_domain: bool
    use_guidance: bool


VARIANTS = {
    "baseline": VariantMask(False, False, False, False),
    "i": VariantMask(True, False, False, False),
    "i+p": VariantMask(True, True, False, False),
    "i+d": VariantMask(True, False, True, True),
    "full": VariantMask(True, True, True, True),
}

METRIC_COLUMNS = [
    "epoch",
    "rho",
    "lr",
    "l_source",
    "l_instance",
    "l_domain",
    "l_triplet",
    "l_total",
    "map",
    "rank1",
    "neighbor_precision",
    "confuser_neighbor_precision",
    "purity",
    "noise_fraction",
    "num_clusters",
]


class TrainerState:
    """Mutable training state for one run: encoder, banks, similarity."""

    def __init__(
        self,
        config: TrainConfig,
        source: SynthDataset,
        target: SynthDataset,
        mask: VariantMask,
    ) -> None:
        self.config = config
        self.source = source
        self.target = target
        self.mask = mask

        root = np.random.SeedSequence(config.seed)
        encoder_seed, self._batch_seed_root = root.spawn(2)
        self.encoder = Encoder(
            d_in=config.synth.d_in,
            embed_dim=config.encoder.embed_dim,
            num_classes=int(source.true_ids.max()) + 1,
            seed=encoder_seed,
        )
        self._epoch_batch_seeds = self._batch_seed_root.spawn(
            config.schedule.total_epochs
        )

        n = target.num_samples
        dim = config.encoder.embed_dim
        self.instance_bank: MemoryBank | None = None
        self.part_upper: MemoryBank | None = None
        self.part_bottom: MemoryBank | None = None
        if mask.use_instance:
            self.instance_bank = MemoryBank(n, dim, MemoryLevel.INSTANCE)
        if mask.use_parts:
            self.part_upper = MemoryBank(n, dim, MemoryLevel.PART_UPPER)
            self.part_bottom = MemoryBank(n, dim, MemoryLevel.PART_BOTTOM)
        self.domain_bank: MemoryBank | None = None
        self.sim: SimilarityMatrix | None = None
        self.labeling: PseudoLabeling | None = None
        self.events: list[str] = []

    # -- periodic refresh ---------------------------------------------------

    def refresh_similarity(self, epoch: int) -> None:
        """Rebuild S from current global embeddings, re-cluster, rebuild the
        domain bank. A no-cluster outcome keeps S (guidance stays usable)
        but removes the domain bank until the next refresh."""
        state = self.encoder.forward(self.target.samples, strict=False)
        rc = self.config.reciprocal
        self.sim = build_similarity(
            state.f_g, k1=rc.k1, k2=rc.k2, lambda_r=rc.lambda_r, epoch_built=epoch
        )
        cl = self.config.clustering
        try:
            labeling = cluster(self.sim.s, cl.eps, cl.min_cluster_size)
            labeling = _demote_dead_to_noise(labeling, state.alive)
            if labeling is None:
                raise NoClustersError("only dead samples clustered")
            self.labeling = labeling
            self.domain_bank = rebuild_domain_bank(state.f_g, self.labeling)
        except (NoClustersError, ZeroVectorError) as exc:
            # no usable clusters (or a degenerate centroid): drop the domain
            # term until the next refresh instead of aborting the run
            self.labeling = None
            self.domain_bank = None
            self.events.append(f"epoch {epoch}: domain refresh skipped ({exc})")

    # -- neighbor selection ---------------------------------------------------

    def _select(self, probs_row: np.ndarray, query: int) -> tuple[NeighborSelection, np.ndarray]:
        hp = self.config.hyper
        if self.mask.use_guidance and self.sim is not None:
            sel = reorder_and_select(self.sim, query, hp.k)
            return sel, soft_weights(self.sim, query, sel, hp.alpha2)
        sel = raw_top_k_selection(probs_row, query, hp.k)
        return sel, sel.weights

    # -- one batch ------------------------------------------------------------

    def batch_step(self, batch: Batch, rho: float, lr: float, update: bool = True) -> LossReport:
        hp = self.config.hyper
        enc = self.config.encoder

        # lenient forwards: a sample whose ReLU output dies is dropped from
        # every loss and write this batch (its embeddings are zeroed); the
        # event is logged and the sample usually revives as weights move on
        src_state = self.encoder.forward(batch.source_x, strict=False)
        tgt_state = self.encoder.forward(batch.target_x, strict=False)
        self._note_dead(src_state, tgt_state)
        src_alive = src_state.alive
        tgt_alive = tgt_state.alive
        if not src_alive.any() or not tgt_alive.any():
            raise DivergenceError("every sample in the batch embedded to zero")

        logits = self.encoder.logits(src_state.f_g)
        l_s, grad_src = source_loss(logits[src_alive], batch.source_labels[src_alive])
        grad_logits = np.zeros_like(logits)
        grad_logits[src_alive] = grad_src

        l_i = 0.0
        grad_fg_inst = np.zeros_like(tgt_state.f_g)
        if self.mask.use_instance and tgt_alive.any():
            assert self.instance_bank is not None
            probs = self.instance_bank.read_probabilities_batch(
                tgt_state.f_g[tgt_alive], hp.alpha1
            )
            p_pu = p_pb = None
            if self.mask.use_parts:
                assert self.part_upper is not None and self.part_bottom is not None
                p_pu = self.part_upper.read_probabilities_batch(
                    tgt_state.f_pu[tgt_alive], hp.alpha1
                )
                p_pb = self.part_bottom.read_probabilities_batch(
                    tgt_state.f_pb[tgt_alive], hp.alpha1
                )
            selections: list[NeighborSelection] = []
            weights = []
            for i, query in enumerate(batch.target_indices[tgt_alive]):
                sel, w = self._select(probs[i], int(query))
                if self.mask.use_parts:
                    w = rectify_weights(w, p_pu[i], p_pb[i], sel, hp.gamma)
                selections.append(sel)
                weights.append(w)
            l_i, grad_alive = instance_loss(
                probs, selections, weights, self.instance_bank.slots, hp.alpha1
            )
            grad_fg_inst[tgt_alive] = grad_alive

        l_d = 0.0
        l_tri = 0.0
        grad_fg_dom = np.zeros_like(tgt_state.f_g)
        batch_labels = None
        if self.mask.use_domain and self.domain_bank is not None and self.labeling is not None:
            batch_labels = self.labeling.labels[batch.target_indices]
            keep = (batch_labels != NOISE) & tgt_alive
            if keep.any():
                p_d = self.domain_bank.read_probabilities_batch(
                    tgt_state.f_g[keep], hp.alpha1
                )
                l_d, l_tri, grad_kept = domain_loss(
                    p_d,
                    batch_labels[keep],
                    tgt_state.f_g[keep],
                    hp.triplet_margin,
                    self.domain_bank.slots,
                    hp.alpha1,
                )
                grad_fg_dom[keep] = grad_kept

        report = total_loss(l_s, l_i, l_d, l_tri, hp.lam, hp.beta)
        if not math.isfinite(report.total):
            raise DivergenceError(f"non-finite total loss {report.total}")

        if update:
            src_grads = self.encoder.backward(
                src_state, grad_logits=(1.0 - hp.lam) * grad_logits
            )
            tgt_grads = self.encoder.backward(
                tgt_state, grad_f_g=hp.lam * (grad_fg_inst + hp.beta * grad_fg_dom)
            )
            self.encoder.sgd_step(
                src_grads.add(tgt_grads), lr, enc.momentum, enc.weight_decay
            )
            self._write_memories(batch, tgt_state, rho, batch_labels)
        return report

    def _note_dead(self, src_state: ForwardState, tgt_state: ForwardState) -> None:
        dead_src = int((~src_state.alive).sum())
        dead_tgt = int((~tgt_state.alive).sum())
        if dead_src or dead_tgt:
            self.events.append(
                f"dropped dead samples from batch (source {dead_src}, target {dead_tgt})"
            )

    def _write_memories(
        self,
        batch: Batch,
        tgt_state: ForwardState,
        rho: float,
        batch_labels: np.ndarray | None,
    ) -> None:
        for i, gidx in enumerate(batch.target_indices):
            if not tgt_state.alive[i]:
                continue
            gidx = int(gidx)
            if self.instance_bank is not None:
                self.instance_bank.write_slot(gidx, tgt_state.f_g[i], rho)
            if self.part_upper is not None:
                self.part_upper.write_slot(gidx, tgt_state.f_pu[i], rho)
                self.part_bottom.write_slot(gidx, tgt_state.f_pb[i], rho)
            if self.domain_bank is not None and batch_labels is not None:
                label = int(batch_labels[i])
                if label != NOISE:
                    self.domain_bank.write_slot(label, tgt_state.f_g[i], rho)

    # -- metrics --------------------------------------------------------------

    def all_selections(self, f_g_all: np.ndarray) -> list[NeighborSelection] | None:
        if not self.mask.use_instance:
            return None
        assert self.instance_bank is not None
        hp = self.config.hyper
        if self.mask.use_guidance and self.sim is not None:
            return [
                reorder_and_select(self.sim, i, hp.k)
                for i in range(self.target.num_samples)
            ]
        probs = self.instance_bank.read_probabilities_batch(f_g_all, hp.alpha1)
        return [
            raw_top_k_selection(probs[i], i, hp.k)
            for i in range(self.target.num_samples)
        ]

    def epoch_metrics(self, epoch: int, rho: float, lr: float, losses: LossReport) -> dict:
        state = self.encoder.forward(self.target.samples, strict=False)
        if self.mask.use_parts:
            emb = np.concatenate([state.f_g, state.f_pu, state.f_pb], axis=1)
        else:
            emb = state.f_g
        retrieval = evaluation.evaluate_retrieval(
            emb,
            emb,
            self.target.true_ids,
            self.target.true_ids,
            self.target.camera_ids,
            self.target.camera_ids,
        )
        selections = self.all_selections(state.f_g)
        nprec = cprec = float("nan")
        if selections is not None:
            nprec = evaluation.neighbor_precision(selections, self.target.true_ids)
            if self.target.confuser_ids.size:
                cprec = evaluation.neighbor_precision(
                    selections, self.target.true_ids, restrict_to=self.target.confuser_ids
                )
        purity = nfrac = float("nan")
        num_clusters = 0
        if self.labeling is not None:
            purity = evaluation.cluster_purity(self.labeling, self.target.true_ids)
            nfrac = evaluation.noise_fraction(self.labeling)
            num_clusters = self.labeling.num_clusters
        return {
            "epoch": epoch,
            "rho": rho,
            "lr": lr,
            "l_source": losses.l_source,
            "l_instance": losses.l_instance,
            "l_domain": losses.l_domain,
            "l_triplet": losses.l_triplet,
            "l_total": losses.total,
            "map": retrieval.map,
            "rank1": retrieval.rank1,
            "neighbor_precision": nprec,
            "confuser_neighbor_precision": cprec,
            "purity": purity,
            "noise_fraction": nfrac,
            "num_clusters": num_clusters,
        }


def _demote_dead_to_noise(labeling: PseudoLabeling, alive: np.ndarray) -> PseudoLabeling | None:
    """Zero-embedded (dead) samples carry no geometry; drop them from the
    pseudo labeling and renumber so every remaining cluster is real."""
    if alive.all():
        return labeling
    labels = labeling.labels.copy()
    labels[~alive] = NOISE
    kept = np.unique(labels[labels != NOISE])
    if kept.size == 0:
        return None
    remap = np.full(labeling.num_clusters, NOISE, dtype=np.intp)
    remap[kept] = np.arange(kept.size)
    labels = np.where(labels == NOISE, NOISE, remap[labels])
    members = [np.nonzero(labels == c)[0] for c in range(kept.size)]
    return PseudoLabeling(labels=labels, num_clusters=kept.size, member_lists=members)


@dataclass
class RunResult:
    variant: str
    metrics: list[dict]
    state: TrainerState

    @property
    def final(self) -> dict:
        return self.metrics[-1]


def resolve_mask(variant: str, guidance: bool = True) -> VariantMask:
    if variant not in VARIANTS:
        raise KeyError(f"unknown variant '{variant}', expected one of {sorted(VARIANTS)}")
    mask = VARIANTS[variant]
    if not guidance:
        mask = dataclasses.replace(mask, use_guidance=False)
    return mask


def run(
    config: TrainConfig,
    source: SynthDataset,
    target: SynthDataset,
    variant: str = "full",
    guidance: bool = True,
) -> RunResult:
    """Train one model end to end and log metrics once per epoch."""
    mask = resolve_mask(variant, guidance)
    state = TrainerState(config, source, target, mask)
    sched = config.schedule
    rows = []
    for epoch in range(1, sched.total_epochs + 1):
        rho = sched.rho(epoch)
        lr = sched.learning_rate(config.encoder.learning_rate, epoch)
        if mask.use_domain and sched.is_refresh_epoch(epoch):
            state.refresh_similarity(epoch)
        batches = make_batches(
            source, target, config.encoder.batch_size, state._epoch_batch_seeds[epoch - 1]
        )
        sums = np.zeros(5)
        for batch in batches:
            report = state.batch_step(batch, rho, lr)
            sums += (
                report.l_source,
                report.l_instance,
                report.l_domain,
                report.l_triplet,
                report.total,
            )
        mean = sums / len(batches)
        losses = LossReport(*mean)
        rows.append(state.epoch_metrics(epoch, rho, lr, losses))
    return RunResult(variant=variant, metrics=rows, state=state)


def run_ablation(
    config: TrainConfig,
    source: SynthDataset,
    target: SynthDataset,
    variants: tuple[str, ...] = ("baseline", "i", "i+p", "i+d", "full"),
) -> dict[str, RunResult]:
    """Run each variant with the identical seed and datasets."""
    return {v: run(config, source, target, variant=v) for v in variants}


# -- metric CSV ---------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def metrics_to_csv(rows: list[dict]) -> str:
    out = io.StringIO()
    out.write(",".join(METRIC_COLUMNS) + "\n")
    for row in rows:
        out.write(",".join(_fmt(row[c]) for c in METRIC_COLUMNS) + "\n")
    return out.getvalue()


# -- full training-state checkpoint -------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(result: RunResult, config: TrainConfig, path: str) -> None:
    """Self-contained JSON: encoder parameters, bank matrices, final
    labeling and a config echo, enough to recompute every dump artifact."""
    from . import config as config_mod

    state = result.state
    banks = {}
    for name, bank in (
        ("instance", state.instance_bank),
        ("part_upper", state.part_upper),
        ("part_bottom", state.part_bottom),
        ("domain", state.domain_bank),
    ):
        if bank is not None:
            banks[name] = {"level": bank.level.value, "slots": bank.slots.tolist()}
    payload = {
        "version": CHECKPOINT_VERSION,
        "variant": result.variant,
        "config": config_mod.to_dict(config),
        "encoder": state.encoder.to_dict(),
        "banks": banks,
        "labels": state.labeling.labels.tolist() if state.labeling else None,
        "events": state.events,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path: str) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    return payload
