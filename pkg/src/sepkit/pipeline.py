"""Training schedule and orchestration.

Three stages: embedding pretraining on the affinity loss, joint training of
embedding + separation nets on the weighted permutation objective, and a
discriminative fine-tune that additionally pushes non-chosen permutations
away. Learning rate decays when the dev objective worsens; training stops
once the relative dev improvement falls under the configured threshold
(after a minimum epoch count). The magnitude-input baseline reuses the same
loop with the permutation objective alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import clustering, datagen, dsp, losses, masking, metrics
from .config import ModelConfig, TrainConfig
from .errors import (
    InvalidConfig,
    StageOrderViolation,
    UnsupportedStage,
)
from .neural import tensor as T
from .neural.checkpoint import Checkpoint, file_hash, load_checkpoint, save_checkpoint
from .neural.models import (
    EmbeddingNet,
    EmbeddingSeparator,
    MagnitudeSeparator,
    mask_frames_to_set,
)
from .neural.optim import Adam
from .neural.tensor import Tensor

STFT_CONFIG = dsp.StftConfig()  # 32 ms Hamming window, 16 ms hop


@dataclass
class UttFeatures:
    """Cached per-utterance training features."""

    id: str
    mag: np.ndarray  # (T, F) mixture magnitude
    mag_norm: np.ndarray  # (T, F) standardized input
    targets: list[np.ndarray]  # S phase-sensitive targets (T, F)
    membership: np.ndarray  # (T*F, S) one-hot dominant source


def _entry_features(entry, base, stats, sample_rate):
    utt = datagen.load_utterance(entry, base, sample_rate=sample_rate)
    mix_spec = dsp.stft(utt.mixture, STFT_CONFIG)
    src_specs = [dsp.stft(r, STFT_CONFIG) for r in utt.references]
    return UttFeatures(
        id=entry.id,
        mag=mix_spec.magnitude,
        mag_norm=dsp.normalize_magnitude(mix_spec.magnitude, stats),
        targets=[masking.psa_target(s, mix_spec) for s in src_specs],
        membership=masking.dominant_membership(src_specs).onehot,
    )


def load_features(
    manifest_path: str | Path, split: str, stats: dsp.NormalizationStats, sample_rate: int
) -> list[UttFeatures]:
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    entries = [e for e in datagen.load_manifest(manifest_path) if e.split == split]
    return [_entry_features(e, base, stats, sample_rate) for e in entries]


def fit_train_normalization(manifest_path: str | Path, sample_rate: int) -> dsp.NormalizationStats:
    """Per-bin moments of the training-split mixture magnitudes."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    mags = []
    for entry in datagen.load_manifest(manifest_path):
        if entry.split != "train":
            continue
        utt = datagen.load_utterance(entry, base, sample_rate=sample_rate)
        mags.append(dsp.stft(utt.mixture, STFT_CONFIG).magnitude)
    return dsp.fit_normalization(mags)


def _rng_for(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def _batches(features: list[UttFeatures], order: np.ndarray, batch_size: int):
    """Yield index batches grouped by frame count (bucketing, no padding)."""
    by_len: dict[int, list[int]] = {}
    for idx in order:
        by_len.setdefault(features[idx].mag.shape[0], []).append(int(idx))
    for _, idxs in sorted(by_len.items()):
        for lo in range(0, len(idxs), batch_size):
            yield idxs[lo : lo + batch_size]


class _StageLoss:
    """Builds the per-batch loss node and component means for one stage."""

    def __init__(self, stage: str, train_cfg: TrainConfig, system: str):
        self.stage = stage
        self.cfg = train_cfg
        self.system = system  # "def" (embedding features) or "upit" baseline

    def batch_loss(self, model, feats: list[UttFeatures], training: bool, rng) -> losses.LossReport:
        x = Tensor(np.stack([f.mag_norm for f in feats], axis=1))
        n = len(feats)
        reports: list[losses.LossReport] = []
        nodes = []
        if self.stage == "dc":
            v_frames = model.forward_frames(x, training=training, rng=rng)
            for b, f in enumerate(feats):
                v = T.reshape(v_frames[:, b, :], (-1, model.embed_dim))
                j_dc = losses.dc_loss(v, f.membership)
                nodes.append(j_dc)
                reports.append(
                    losses.LossReport(
                        total=float(j_dc.data), j_dc=float(j_dc.data), phi_star=0.0,
                        dl_term=0.0, table=None, lambda_=1.0, alpha=0.0,
                    )
                )
        else:
            use_dl = self.stage == "dl"
            if self.system == "upit":
                mask_frames = model.forward_frames(x, training=training, rng=rng)
                v_frames = None
                num_sources = model.num_sources
                embed_dim = None
            else:
                v_frames, mask_frames = model.forward_frames(x, training=training, rng=rng)
                num_sources = model.num_sources
                embed_dim = model.embedding.embed_dim
            t_frames = x.data.shape[0]
            f_bins = x.data.shape[2]
            for b, f in enumerate(feats):
                masks = T.transpose(
                    T.reshape(mask_frames[:, b, :], (t_frames, num_sources, f_bins)), (1, 0, 2)
                )
                grid = losses.pairwise_psa_costs(masks, f.mag, f.targets)
                table = losses.permutation_table_from_grid(grid)
                if self.system == "upit":
                    rep = losses.joint_loss(0.0, table, lambda_=0.0)
                else:
                    v = T.reshape(v_frames[:, b, :], (-1, embed_dim))
                    j_dc = losses.dc_loss(v, f.membership)
                    rep = losses.joint_loss(
                        j_dc, table, lambda_=self.cfg.lambda_,
                        alpha=self.cfg.alpha if use_dl else 0.0, use_dl=use_dl,
                    )
                nodes.append(rep.node)
                reports.append(rep)

        total_node = nodes[0]
        for nd in nodes[1:]:
            total_node = total_node + nd
        total_node = total_node * (1.0 / n)

        mean = lambda key: float(np.mean([getattr(r, key) for r in reports]))  # noqa: E731
        return losses.LossReport(
            total=mean("total"), j_dc=mean("j_dc"), phi_star=mean("phi_star"),
            dl_term=mean("dl_term"), table=None,
            lambda_=self.cfg.lambda_, alpha=self.cfg.alpha, node=total_node,
        )

    def dataset_loss(self, model, features: list[UttFeatures], batch_size: int) -> float:
        """Eval-mode mean loss over a whole split."""
        total = 0.0
        order = np.arange(len(features))
        for batch in _batches(features, order, batch_size):
            feats = [features[i] for i in batch]
            rep = self.batch_loss(model, feats, training=False, rng=None)
            total += rep.total * len(feats)
        return total / len(features)


def _fixed_epochs(stage: str, cfg: TrainConfig) -> tuple[int, int]:
    """(min_epochs, max_epochs); the dc stage runs a fixed epoch count."""
    if stage == "dc":
        return cfg.dc_epochs, cfg.dc_epochs
    return cfg.min_epochs, cfg.max_epochs


@dataclass
class LrSchedule:
    """Decay-on-dev-increase learning rate plus relative-improvement stop.

    The rate shrinks by ``decay`` whenever the dev objective worsened;
    training stops once at least ``min_epochs`` ran and the relative dev
    improvement over the previous epoch fell below ``early_stop_rel``.
    """

    lr: float
    decay: float
    min_epochs: int
    early_stop_rel: float
    prev_dev: float | None = None

    def start(self, dev_loss: float) -> None:
        self.prev_dev = dev_loss

    def after_epoch(self, epoch: int, dev_loss: float) -> bool:
        """Update the rate; returns True when training should stop."""
        if self.prev_dev is None:
            raise InvalidConfig("schedule not started with an initial dev loss")
        if dev_loss > self.prev_dev:
            self.lr *= self.decay
        if self.prev_dev != 0:
            improvement = (self.prev_dev - dev_loss) / abs(self.prev_dev)
        else:
            improvement = 0.0
        self.prev_dev = dev_loss
        return epoch >= self.min_epochs and improvement < self.early_stop_rel


def _train_loop(
    model,
    stage_loss: _StageLoss,
    train_feats: list[UttFeatures],
    dev_feats: list[UttFeatures],
    cfg: TrainConfig,
    log: list[dict],
) -> Adam:
    adam = Adam(model.params, lr=cfg.lr_init)
    min_epochs, max_epochs = _fixed_epochs(stage_loss.stage, cfg)
    schedule = LrSchedule(
        lr=cfg.lr_init, decay=cfg.lr_decay,
        min_epochs=min_epochs, early_stop_rel=cfg.early_stop_rel,
    )

    dev_loss = stage_loss.dataset_loss(model, dev_feats, cfg.batch_utts)
    log.append({"type": "epoch", "stage": stage_loss.stage, "epoch": 0, "step": 0,
                "dev_loss": dev_loss, "lr": adam.lr, "train_loss": None})
    schedule.start(dev_loss)

    step = 0
    for epoch in range(1, max_epochs + 1):
        order = _rng_for(cfg.seed, 1, epoch).permutation(len(train_feats))
        epoch_losses = []
        for batch in _batches(train_feats, order, cfg.batch_utts):
            feats = [train_feats[i] for i in batch]
            drop_rng = _rng_for(cfg.seed, 2, epoch, step)
            model.zero_grad()
            rep = stage_loss.batch_loss(model, feats, training=True, rng=drop_rng)
            rep.node.backward()
            adam.step()
            step += 1
            epoch_losses.append(rep.total)
            entry = rep.to_dict()
            entry.update({"type": "step", "stage": stage_loss.stage, "epoch": epoch,
                          "step": step, "lr": adam.lr})
            log.append(entry)

        dev_loss = stage_loss.dataset_loss(model, dev_feats, cfg.batch_utts)
        log.append({"type": "epoch", "stage": stage_loss.stage, "epoch": epoch, "step": step,
                    "dev_loss": dev_loss, "lr": adam.lr,
                    "train_loss": float(np.mean(epoch_losses))})

        stop = schedule.after_epoch(epoch, dev_loss)
        adam.lr = schedule.lr
        if stop:
            break
    return adam


def _write_log(path: Path, log: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def _save_stage_checkpoint(
    path: Path, model, adam: Adam, stage: str, stats, cfg: TrainConfig,
    model_cfg: ModelConfig, num_sources: int,
    parent: Checkpoint | None, parent_path: Path | None,
) -> Checkpoint:
    lineage = list(parent.lineage) if parent is not None else []
    lineage.append({
        "stage": stage,
        "seed": cfg.seed,
        "parent": file_hash(parent_path) if parent_path else None,
    })
    ckpt = Checkpoint(
        model_kind=model.kind,
        model_config=model.config,
        stage=stage,
        params=model.param_arrays(),
        optimizer={"t": adam.t, "lr": adam.lr, "arrays": adam.state_arrays()},
        norm_stats=stats,
        lineage=lineage,
        meta={
            "num_sources": num_sources,
            "sample_rate": 8000,
            "stft": {
                "window_len_ms": STFT_CONFIG.window_len_ms,
                "hop_ms": STFT_CONFIG.hop_ms,
                "window_kind": STFT_CONFIG.window_kind,
            },
            "train_config": {
                "stage": stage, "lambda": cfg.lambda_, "alpha": cfg.alpha,
                "batch_utts": cfg.batch_utts, "lr_init": cfg.lr_init,
                "lr_decay": cfg.lr_decay, "min_epochs": cfg.min_epochs,
                "max_epochs": cfg.max_epochs, "early_stop_rel": cfg.early_stop_rel,
                "dc_epochs": cfg.dc_epochs, "seed": cfg.seed,
            },
            "system": "upit" if model.kind == "upit" else "def",
        },
    )
    save_checkpoint(path, ckpt)
    return ckpt


def train_stage(
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    manifest_path: str | Path,
    out_path: str | Path,
    init_checkpoint: str | Path | None = None,
    num_sources: int = 2,
    sample_rate: int = 8000,
    log_path: str | Path | None = None,
) -> Path:
    """Train one stage of the embedding-features system; returns the
    checkpoint path.

    Stage ``dc`` starts fresh, ``joint`` requires a dc checkpoint, ``dl``
    requires a joint checkpoint.
    """
    stage = train_cfg.stage
    manifest_path = Path(manifest_path)
    out_path = Path(out_path)

    parent = None
    parent_path = Path(init_checkpoint) if init_checkpoint is not None else None
    if parent_path is not None:
        parent = load_checkpoint(parent_path)

    if stage == "dc":
        if parent is not None:
            raise StageOrderViolation("the dc stage starts from scratch, not a checkpoint")
    elif stage == "joint":
        if parent is None or parent.stage != "dc":
            raise StageOrderViolation("the joint stage requires a dc checkpoint")
    elif stage == "dl":
        if parent is None or parent.stage != "joint" or parent.model_kind != "embed_sep":
            raise StageOrderViolation("the dl stage requires a joint checkpoint")

    if parent is not None and parent.norm_stats is not None:
        stats = parent.norm_stats
    else:
        stats = fit_train_normalization(manifest_path, sample_rate)
    num_bins = stats.num_bins

    if stage == "dc":
        model = EmbeddingNet(
            num_bins, units=model_cfg.units, num_layers=model_cfg.embed_layers,
            embed_dim=model_cfg.embed_dim, dropout=model_cfg.dropout, seed=train_cfg.seed,
        )
    else:
        model = EmbeddingSeparator(
            num_bins, units=model_cfg.units, embed_layers=model_cfg.embed_layers,
            embed_dim=model_cfg.embed_dim, num_sources=num_sources,
            dropout=model_cfg.dropout, concat_magnitude=model_cfg.concat_magnitude,
            seed=train_cfg.seed,
        )
        if stage == "joint":
            # adopt the pretrained embedding weights; separation net stays fresh
            for name, arr in parent.params.items():
                model.params[name].data = np.array(arr, copy=True)
        else:
            model.load_param_arrays(parent.params)

    train_feats = load_features(manifest_path, "train", stats, sample_rate)
    dev_feats = load_features(manifest_path, "dev", stats, sample_rate)
    if not train_feats or not dev_feats:
        raise InvalidConfig("manifest needs train and dev utterances")

    stage_loss = _StageLoss(stage, train_cfg, system="def")
    log: list[dict] = []
    adam = _train_loop(model, stage_loss, train_feats, dev_feats, train_cfg, log)
    if log_path is not None:
        _write_log(Path(log_path), log)
    _save_stage_checkpoint(
        out_path, model, adam, stage, stats, train_cfg, model_cfg, num_sources,
        parent, parent_path,
    )
    return out_path


def train_baseline(
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    manifest_path: str | Path,
    out_path: str | Path,
    num_sources: int = 2,
    sample_rate: int = 8000,
    log_path: str | Path | None = None,
) -> Path:
    """Magnitude-input baseline: same recurrent depth, permutation loss only."""
    manifest_path = Path(manifest_path)
    stats = fit_train_normalization(manifest_path, sample_rate)
    model = MagnitudeSeparator(
        stats.num_bins, units=model_cfg.units, num_layers=model_cfg.embed_layers + 1,
        num_sources=num_sources, dropout=model_cfg.dropout, seed=train_cfg.seed,
    )
    train_feats = load_features(manifest_path, "train", stats, sample_rate)
    dev_feats = load_features(manifest_path, "dev", stats, sample_rate)

    stage_loss = _StageLoss("joint", train_cfg, system="upit")
    log: list[dict] = []
    adam = _train_loop(model, stage_loss, train_feats, dev_feats, train_cfg, log)
    if log_path is not None:
        _write_log(Path(log_path), log)
    _save_stage_checkpoint(
        Path(out_path), model, adam, "joint", stats, train_cfg, model_cfg,
        num_sources, None, None,
    )
    return Path(out_path)


def _estimate_masks(ckpt: Checkpoint, model, mag_norm: np.ndarray) -> masking.MaskSet:
    x = Tensor(mag_norm[:, None, :])
    if ckpt.model_kind == "upit":
        frames = model.forward_frames(x)
    else:
        _, frames = model.forward_frames(x)
    masks = mask_frames_to_set(frames.data[:, 0, :], model.num_sources, mag_norm.shape[1])
    return masking.MaskSet(masks, kind="estimated")


def separate(
    checkpoint_path: str | Path,
    mixture: str | Path | dsp.AudioBuffer,
    out_dir: str | Path | None = None,
) -> list[dsp.AudioBuffer]:
    """Run the trained separator on one mixture; optionally write WAVs."""
    ckpt = load_checkpoint(checkpoint_path)
    if ckpt.stage == "dc":
        raise UnsupportedStage("a dc checkpoint has no mask head; use separate_dc_baseline")
    model = ckpt.build_model()
    sample_rate = int(ckpt.meta.get("sample_rate", 8000))
    audio = mixture if isinstance(mixture, dsp.AudioBuffer) else dsp.read_wav(mixture, sample_rate)
    mix_spec = dsp.stft(audio, STFT_CONFIG)
    mag_norm = dsp.normalize_magnitude(mix_spec.magnitude, ckpt.norm_stats)
    masks = _estimate_masks(ckpt, model, mag_norm)
    estimates = masking.reconstruct(mix_spec, masks)
    if out_dir is not None:
        _write_estimates(out_dir, mixture, estimates)
    return estimates


def separate_dc_baseline(
    checkpoint_path: str | Path,
    mixture: str | Path | dsp.AudioBuffer,
    out_dir: str | Path | None = None,
    num_sources: int | None = None,
) -> list[dsp.AudioBuffer]:
    """Cluster embeddings with K-means and reconstruct through binary masks."""
    ckpt = load_checkpoint(checkpoint_path)
    if ckpt.stage != "dc" or ckpt.model_kind != "embedding":
        raise UnsupportedStage("dc-baseline separation needs a dc embedding checkpoint")
    model = ckpt.build_model()
    sample_rate = int(ckpt.meta.get("sample_rate", 8000))
    k = num_sources or int(ckpt.meta.get("num_sources", 2))
    audio = mixture if isinstance(mixture, dsp.AudioBuffer) else dsp.read_wav(mixture, sample_rate)
    mix_spec = dsp.stft(audio, STFT_CONFIG)
    mag_norm = dsp.normalize_magnitude(mix_spec.magnitude, ckpt.norm_stats)
    v = model.embed(mag_norm)
    result = clustering.kmeans(v, k=k, seed=0)
    masks = clustering.masks_from_assignments(result, mix_spec.num_frames, mix_spec.num_bins)
    estimates = masking.reconstruct(mix_spec, masks)
    if out_dir is not None:
        _write_estimates(out_dir, mixture, estimates)
    return estimates


def _write_estimates(out_dir, mixture, estimates) -> None:
    out_dir = Path(out_dir)
    stem = Path(mixture).stem if isinstance(mixture, (str, Path)) else "mixture"
    for s, est in enumerate(estimates):
        dsp.write_wav(out_dir / f"{stem}_est{s}.wav", est)


def model_estimator(checkpoint_path: str | Path) -> metrics.Estimator:
    """metrics-compatible estimator closure for a trained checkpoint."""
    ckpt = load_checkpoint(checkpoint_path)
    model = ckpt.build_model()
    if ckpt.stage == "dc":
        k = int(ckpt.meta.get("num_sources", 2))

        def run_dc(utt: datagen.Utterance) -> list[dsp.AudioBuffer]:
            mix_spec = dsp.stft(utt.mixture, STFT_CONFIG)
            mag_norm = dsp.normalize_magnitude(mix_spec.magnitude, ckpt.norm_stats)
            result = clustering.kmeans(model.embed(mag_norm), k=k, seed=0)
            masks = clustering.masks_from_assignments(
                result, mix_spec.num_frames, mix_spec.num_bins
            )
            return masking.reconstruct(mix_spec, masks)

        return run_dc

    def run(utt: datagen.Utterance) -> list[dsp.AudioBuffer]:
        mix_spec = dsp.stft(utt.mixture, STFT_CONFIG)
        mag_norm = dsp.normalize_magnitude(mix_spec.magnitude, ckpt.norm_stats)
        masks = _estimate_masks(ckpt, model, mag_norm)
        return masking.reconstruct(mix_spec, masks)

    return run


def evaluate_checkpoint(
    checkpoint_path: str | Path,
    manifest_path: str | Path,
    splits: tuple[str, ...] = ("dev", "test"),
    modes: tuple[str, ...] = ("optimal", "default"),
    sample_rate: int = 8000,
) -> dict[tuple[str, str], metrics.CorpusReport]:
    return metrics.corpus_reports(
        manifest_path, model_estimator(checkpoint_path),
        splits=splits, modes=modes, sample_rate=sample_rate,
    )


def permutation_gap(
    checkpoint_path: str | Path, manifest_path: str | Path, split: str = "dev"
) -> float:
    """Mean (non-chosen minus chosen) permutation cost over a split.

    The discriminative fine-tune explicitly widens this gap.
    """
    ckpt = load_checkpoint(checkpoint_path)
    if ckpt.stage == "dc":
        raise UnsupportedStage("permutation gap needs a mask-producing checkpoint")
    model = ckpt.build_model()
    sample_rate = int(ckpt.meta.get("sample_rate", 8000))
    feats = load_features(Path(manifest_path), split, ckpt.norm_stats, sample_rate)
    gaps = []
    for f in feats:
        masks = _estimate_masks(ckpt, model, f.mag_norm)
        grid = losses.pairwise_psa_costs(masks, f.mag, f.targets)
        table = losses.permutation_table_from_grid(grid)
        chosen = table.costs[table.chosen]
        others = table.non_chosen_costs()
        gaps.append(float(np.mean(others)) - chosen)
    return float(np.mean(gaps))


def _aggregate(report: metrics.CorpusReport) -> dict:
    return {
        "mean_sdr_db": report.mean_sdr_db,
        "mean_sir_db": report.mean_sir_db,
        "mean_sar_db": report.mean_sar_db,
        "mean_sdr_improvement_db": report.mean_sdr_improvement_db,
        "num_infinite": report.num_infinite,
        "n": len(report.records),
    }


def _system_eval(ckpt_path: Path, manifest: Path, records_path: Path | None = None) -> dict:
    reports = evaluate_checkpoint(ckpt_path, manifest)
    if records_path is not None:
        metrics.write_report_json(records_path, list(reports.values()))
    return {
        split: {mode: _aggregate(reports[(split, mode)]) for mode in ("optimal", "default")}
        for split in ("dev", "test")
    }


def _mean_over_seeds(per_seed: dict) -> dict:
    out: dict = {}
    seeds = list(per_seed)
    for split in ("dev", "test"):
        out[split] = {}
        for mode in ("optimal", "default"):
            keys = per_seed[seeds[0]][split][mode]
            out[split][mode] = {
                k: float(np.mean([per_seed[s][split][mode][k] for s in seeds])) for k in keys
            }
    return out


def experiment(cfg, out_dir: str | Path) -> dict:
    """Train and evaluate the baseline and embedding-features systems.

    Per seed: fresh corpus, embedding pretrain, joint training (the lambda
    sweep runs on the first seed), discriminative fine-tune, magnitude
    baseline, then both-mode SDR/SIR/SAR evaluation on dev (closed
    condition) and test (open condition). Emits report.json and report.txt
    under ``out_dir`` and returns the report dict.
    """
    from dataclasses import replace

    from .config import RunConfig, config_hash, config_to_dict

    assert isinstance(cfg, RunConfig)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    exp = cfg.experiment

    per_seed: dict[str, dict] = {}
    sweep: dict[str, dict] = {}
    mechanism: dict[str, dict] = {}

    for seed in exp.seeds:
        seed_key = str(seed)
        seed_dir = out / f"seed{seed}"
        corpus_dir = seed_dir / "corpus"
        manifest = corpus_dir / "manifest.jsonl"
        if not manifest.exists():
            datagen.build_corpus(replace(cfg.data, seed=seed), corpus_dir)

        base_train = replace(cfg.train, seed=seed)
        dc_path = seed_dir / "dc.ckpt"
        train_stage(
            replace(base_train, stage="dc", dc_epochs=exp.dc_epochs),
            cfg.model, manifest, dc_path,
            num_sources=cfg.data.num_sources, sample_rate=cfg.sample_rate,
            log_path=seed_dir / "log_dc.jsonl",
        )

        lambdas = exp.lambdas if seed == exp.seeds[0] else (exp.dl_lambda,)
        joint_paths: dict[float, Path] = {}
        for lam in lambdas:
            jpath = seed_dir / f"joint_lam{lam:g}.ckpt"
            train_stage(
                replace(base_train, stage="joint", lambda_=lam,
                        min_epochs=exp.joint_min_epochs, max_epochs=exp.joint_max_epochs),
                cfg.model, manifest, jpath, init_checkpoint=dc_path,
                num_sources=cfg.data.num_sources, sample_rate=cfg.sample_rate,
                log_path=seed_dir / f"log_joint_lam{lam:g}.jsonl",
            )
            joint_paths[lam] = jpath

        dl_path = seed_dir / "dl.ckpt"
        train_stage(
            replace(base_train, stage="dl", lambda_=exp.dl_lambda,
                    min_epochs=exp.dl_min_epochs, max_epochs=exp.dl_max_epochs),
            cfg.model, manifest, dl_path, init_checkpoint=joint_paths[exp.dl_lambda],
            num_sources=cfg.data.num_sources, sample_rate=cfg.sample_rate,
            log_path=seed_dir / "log_dl.jsonl",
        )

        upit_path = seed_dir / "upit.ckpt"
        train_baseline(
            replace(base_train, stage="joint",
                    min_epochs=exp.baseline_min_epochs, max_epochs=exp.baseline_max_epochs),
            cfg.model, manifest, upit_path,
            num_sources=cfg.data.num_sources, sample_rate=cfg.sample_rate,
            log_path=seed_dir / "log_upit.jsonl",
        )

        per_seed[seed_key] = {
            "upit": _system_eval(upit_path, manifest, seed_dir / "records_upit.json"),
            "upit_def": _system_eval(
                joint_paths[exp.dl_lambda], manifest, seed_dir / "records_upit_def.json"
            ),
            "upit_def_dl": _system_eval(dl_path, manifest, seed_dir / "records_upit_def_dl.json"),
            "dc_kmeans": _system_eval(dc_path, manifest, seed_dir / "records_dc_kmeans.json"),
        }
        if seed == exp.seeds[0]:
            for lam in exp.lambdas:
                sweep[f"{lam:g}"] = _system_eval(joint_paths[lam], manifest)
        mechanism[seed_key] = {
            "gap_joint": permutation_gap(joint_paths[exp.dl_lambda], manifest),
            "gap_dl": permutation_gap(dl_path, manifest),
        }

    systems = {}
    for name in ("upit", "upit_def", "upit_def_dl", "dc_kmeans"):
        systems[name] = {
            "per_seed": {s: per_seed[s][name] for s in per_seed},
            "mean": _mean_over_seeds({s: per_seed[s][name] for s in per_seed}),
        }

    report = {
        "kind": "experiment",
        "config": config_to_dict(cfg),
        "config_hash": config_hash(cfg),
        "seeds": list(exp.seeds),
        "dl_lambda": exp.dl_lambda,
        "systems": systems,
        "lambda_sweep": {"seed": exp.seeds[0], "rows": sweep},
        "dl_mechanism": mechanism,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out / "report.txt").write_text(format_experiment_table(report) + "\n")
    return report


def format_experiment_table(report: dict) -> str:
    """Aligned text table: systems x assignment modes, means over seeds."""
    header = (
        f"{'method':<14}{'lambda':>8}{'split':>7}{'mode':>9}"
        f"{'SDR':>8}{'SIR':>8}{'SAR':>8}{'SDRi':>8}{'n':>6}"
    )
    lines = [header, "-" * len(header)]
    lam = {"upit": "-", "upit_def": f"{report['dl_lambda']:g}",
           "upit_def_dl": f"{report['dl_lambda']:g}", "dc_kmeans": "-"}
    for name, block in report["systems"].items():
        for split in ("dev", "test"):
            for mode in ("optimal", "default"):
                agg = block["mean"][split][mode]
                lines.append(
                    f"{name:<14}{lam[name]:>8}{split:>7}{mode:>9}"
                    f"{agg['mean_sdr_db']:>8.2f}{agg['mean_sir_db']:>8.2f}"
                    f"{agg['mean_sar_db']:>8.2f}{agg['mean_sdr_improvement_db']:>8.2f}"
                    f"{agg['n']:>6.0f}"
                )
    sweep = report.get("lambda_sweep", {}).get("rows", {})
    if sweep:
        lines.append("")
        lines.append(f"lambda sweep (seed {report['lambda_sweep']['seed']}, test/optimal):")
        for lam_key in sorted(sweep, key=float):
            agg = sweep[lam_key]["test"]["optimal"]
            lines.append(f"  lambda={lam_key:<6} SDR={agg['mean_sdr_db']:.2f} dB")
    return "\n".join(lines)
