"""Model assembly, AdamW, the two-stage training protocol, and evaluation.

Stage 1 trains encoders, adapters, and decoders on per-modality MAE against
the unimodal labels and snapshots the best-validation epoch. Stage 2 loads
that snapshot, freezes adapters and decoders, and trains everything else on
the multimodal task loss. Evaluation runs with every sentiment ratio fixed
to 1 and never reads the multimodal label on the forward path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from . import data as D
from .encoders import TextEncoder, FeatureEncoder
from .fusion import (
    MODALITIES,
    ConcatFuser,
    DynamicAttentionBlock,
    Projector,
    SentimentRatio,
    baseline_fuse,
    seed_fusion,
    sentiment_ratio,
    test_ratio,
)
from .knowledge import AdapterStack, SentimentDecoder, knowledge_enhance
from .metrics import MetricReport, compute_metrics
from .nn import MLP, merge_params
from .objectives import CorrelationEstimator, mae_loss, union_loss
from .snapshot import load_snapshot, save_snapshot
from .tensor import Tensor

ABLATIONS = {"no_KIP", "no_Adapter", "no_EKI", "no_SR", "no_DAF", "no_CE"}

# fixed component indices for the seed-splitting rule: every rng is
# default_rng(SeedSequence(config.seed, spawn_key=(index,)))
_COMPONENTS = {"model": 0, "pretrain": 1, "downstream": 2, "synth": 3}


def component_rng(seed: int, component: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_COMPONENTS[component],)))


@dataclass
class TrainConfig:
    stage: str = "downstream"
    # Table-2-style defaults (CH-SIMS column)
    batch_size: int = 32
    learning_rate: float = 3e-5
    epochs: int = 50
    k: float = 0.1
    alpha: float = 0.01
    n_blocks: int = 3
    d_f: int = 256
    t_f: int = 8
    taps: list[int] = field(default_factory=lambda: [3, 6, 9, 11])
    seed: int = 0
    ablations: list[str] = field(default_factory=list)
    label_range: tuple[float, float] = (-1.0, 1.0)
    # optimizer
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    # architecture
    d_text: int = 32
    d_vision: int = 16
    d_audio: int = 24
    text_layers: int = 12
    text_heads: int = 4
    nontext_layers: int = 2
    nontext_heads: int = 2
    cross_heads: int = 4
    decoder_hidden: int = 32
    vocab_size: int = 66
    text_len: int = 8
    vision_len: int = 8
    audio_len: int = 8
    max_text_len: int = 32
    max_feature_len: int = 64
    vision_input_dim: int = 8
    audio_input_dim: int = 8
    fusion_strategy: str = "dab"  # dab | addition | concat

    def validate(self):
        if self.stage not in ("pretrain", "downstream"):
            raise ValueError(f"unknown stage {self.stage!r}")
        unknown = set(self.ablations) - ABLATIONS
        if unknown:
            raise ValueError(f"unknown ablations {sorted(unknown)}")
        if self.fusion_strategy not in ("dab", "addition", "concat"):
            raise ValueError(f"unknown fusion strategy {self.fusion_strategy!r}")
        if self.k <= 0 or self.alpha < 0:
            raise ValueError("k must be positive and alpha nonnegative")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        cfg = cls(**obj)
        cfg.label_range = tuple(cfg.label_range)
        cfg.betas = tuple(cfg.betas)
        cfg.taps = list(cfg.taps)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_dict(json.loads(text))


def desk_profile(**overrides) -> TrainConfig:
    """Small configuration sized for CPU test runs."""
    base = dict(
        batch_size=16,
        learning_rate=1e-3,
        epochs=6,
        k=0.3,
        alpha=0.01,
        n_blocks=2,
        d_f=32,
        t_f=8,
        taps=[2, 4],
        d_text=32,
        d_vision=16,
        d_audio=24,
        text_layers=4,
        text_heads=4,
        nontext_layers=2,
        nontext_heads=2,
        cross_heads=4,
        decoder_hidden=32,
    )
    base.update(overrides)
    return TrainConfig.from_dict(base)


def paper_profile(**overrides) -> TrainConfig:
    """Table-2-style configuration (configuration-valid, not CPU-sized)."""
    base = dict(
        batch_size=32,
        learning_rate=3e-5,
        epochs=50,
        k=0.1,
        alpha=0.01,
        n_blocks=3,
        d_f=256,
        taps=[3, 6, 9, 11],
        text_layers=12,
    )
    base.update(overrides)
    return TrainConfig.from_dict(base)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

@dataclass
class FeatureBatch:
    """Model inputs only; carries no multimodal label by construction."""

    ids: list[str]
    text: np.ndarray  # (B, T_t) int
    vision: np.ndarray  # (B, T_v, d_v)
    audio: np.ndarray  # (B, T_a, d_a)
    unimodal_labels: dict[str, np.ndarray] | None = None  # stage-1 targets


def make_feature_batch(records: list[D.SampleRecord], with_unimodal: bool = False) -> FeatureBatch:
    batch = FeatureBatch(
        ids=[r.id for r in records],
        text=np.asarray([r.text for r in records], dtype=np.int64),
        vision=np.stack([r.vision for r in records]),
        audio=np.stack([r.audio for r in records]),
    )
    if with_unimodal:
        batch.unimodal_labels = {
            "text": np.asarray([[r.y_t] for r in records]),
            "vision": np.asarray([[r.y_v] for r in records]),
            "audio": np.asarray([[r.y_a] for r in records]),
        }
    return batch


def multimodal_labels(records: list[D.SampleRecord]) -> np.ndarray:
    return np.asarray([[r.y] for r in records])


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

class KudaModel:
    def __init__(self, config: TrainConfig):
        config.validate()
        self.config = config
        rng = component_rng(config.seed, "model")
        c = config
        self.encoders = {
            "text": TextEncoder(rng, c.vocab_size, c.max_text_len, c.d_text, c.text_layers, c.text_heads, c.taps, name="enc.text"),
            "vision": FeatureEncoder(rng, c.vision_input_dim, c.d_vision, c.max_feature_len, c.nontext_layers, c.nontext_heads, name="enc.vision"),
            "audio": FeatureEncoder(rng, c.audio_input_dim, c.d_audio, c.max_feature_len, c.nontext_layers, c.nontext_heads, name="enc.audio"),
        }
        dims = {"text": c.d_text, "vision": c.d_vision, "audio": c.d_audio}
        n_taps = {"text": len(c.taps), "vision": c.nontext_layers, "audio": c.nontext_layers}
        self.adapters = {m: AdapterStack(rng, dims[m], n_taps[m], f"know.{m}.adapter") for m in MODALITIES}
        self.decoders = {m: SentimentDecoder(rng, 2 * dims[m], c.decoder_hidden, f"know.{m}.decoder") for m in MODALITIES}
        lengths = {"text": c.text_len, "vision": c.vision_len, "audio": c.audio_len}
        self.projectors = {m: Projector(rng, lengths[m], 2 * dims[m], c.t_f, c.d_f, f"proj.{m}") for m in MODALITIES}
        self._proj_lengths = lengths
        self.blocks = [DynamicAttentionBlock(rng, c.d_f, c.cross_heads, f"dab{i}") for i in range(c.n_blocks)]
        # learned latent queries seeding the fusion stack: starting from the
        # additive seed instead puts every modality's content into F before
        # any attention runs, and the blocks then learn complementary
        # (anti-dominance) routing
        self.fusion_seed = T.param(rng.normal(0.0, 1.0, size=(c.t_f, c.d_f)), "fusion.seed")
        self.output = MLP(rng, [c.d_f, c.d_f, 1], "out")
        self.nce = CorrelationEstimator(rng, c.d_f)
        self.concat_fuser = ConcatFuser(rng, c.d_f)
        self.last_attention: list[dict[str, np.ndarray]] = []

    # -- parameter bookkeeping ------------------------------------------------

    def all_params(self) -> dict[str, Tensor]:
        layers = list(self.encoders.values()) + list(self.adapters.values()) + list(self.decoders.values())
        layers += list(self.projectors.values()) + self.blocks + [self.output, self.nce, self.concat_fuser]
        out = merge_params(*layers)
        out[self.fusion_seed.name] = self.fusion_seed
        return out

    def knowledge_params(self) -> dict[str, Tensor]:
        return {n: t for n, t in self.all_params().items() if n.startswith("know.")}

    def stage1_params(self) -> dict[str, Tensor]:
        return {n: t for n, t in self.all_params().items() if n.startswith(("know.", "enc."))}

    def load_params(self, flat: dict[str, np.ndarray], strict: bool = False):
        own = self.all_params()
        for name, arr in flat.items():
            if name not in own:
                if strict:
                    raise KeyError(f"snapshot parameter {name} not in model")
                continue
            if own[name].data.shape != arr.shape:
                raise ValueError(f"parameter {name}: snapshot shape {arr.shape} != model shape {own[name].data.shape}")
            own[name].data = arr.astype(np.float64).copy()

    def freeze_knowledge(self):
        for t in self.knowledge_params().values():
            t.requires_grad = False
            t.grad = None

    # -- forward passes -------------------------------------------------------

    def forward_unimodal(self, batch: FeatureBatch):
        """Per modality: knowledge-enhanced representation U and unimodal score."""
        out = {}
        inputs = {"text": batch.text, "vision": batch.vision, "audio": batch.audio}
        no_adapter = "no_Adapter" in self.config.ablations or "no_EKI" in self.config.ablations
        for m in MODALITIES:
            base, h, taps = self.encoders[m](inputs[m])
            if no_adapter:
                k = T.scale(h, 0.0)
            else:
                k = self.adapters[m](base, taps)
            u = knowledge_enhance(k, h)
            y_hat = self.decoders[m](u)
            out[m] = (u, y_hat)
        return out

    def _project(self, unimodal) -> dict[str, Tensor]:
        u_bars = {}
        for m in MODALITIES:
            u, _ = unimodal[m]
            seq_len = u.shape[-2]
            want = self._proj_lengths[m]
            if seq_len != want:
                raise ValueError(f"{m}: sequence length {seq_len} != projector length {want}")
            u_bars[m] = self.projectors[m](u)
        return u_bars

    def _fuse(self, u_bars: dict[str, Tensor], ratio: SentimentRatio) -> Tensor:
        strategy = self.config.fusion_strategy
        if "no_DAF" in self.config.ablations:
            strategy = "addition"
        self.last_attention = []
        if strategy != "dab":
            return baseline_fuse(strategy, u_bars, self.concat_fuser)
        f = self.fusion_seed
        for block in self.blocks:
            f = block(f, u_bars, ratio)
            self.last_attention.append({m: w.copy() for m, w in block.last_cross_weights.items()})
        return f

    def forward(self, batch: FeatureBatch, mode: str, y: np.ndarray | None = None):
        """Full multimodal pass. ``y`` is required (and read) only in train mode."""
        unimodal = self.forward_unimodal(batch)
        n = len(batch.ids)
        if mode == "train":
            if "no_SR" in self.config.ablations or "no_EKI" in self.config.ablations:
                ratio = test_ratio(n)
            else:
                if y is None:
                    raise ValueError("train mode needs the multimodal ground truth for sentiment ratios")
                ratio = sentiment_ratio({m: unimodal[m][1] for m in MODALITIES}, y, self.config.k)
        elif mode == "test":
            ratio = test_ratio(n)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        u_bars = self._project(unimodal)
        f_final = self._fuse(u_bars, ratio)
        y_hat = self.output(T.mean_axis(f_final, axis=-2))
        return {
            "y_hat": y_hat,
            "unimodal": unimodal,
            "u_bars": u_bars,
            "f_final": f_final,
            "ratio": ratio,
        }

    def predict(self, batch: FeatureBatch) -> np.ndarray:
        """Label-free evaluation entry point; ratios fixed to 1."""
        return self.forward(batch, mode="test")["y_hat"].data.reshape(-1).copy()


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class AdamW:
    """Decoupled weight decay, with global-norm gradient clipping."""

    def __init__(self, params: dict[str, Tensor], lr: float, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01, grad_clip=1.0):
        self.named = [(n, t) for n, t in sorted(params.items()) if t.requires_grad]
        for _, t in self.named:
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.m = {n: np.zeros_like(t.data) for n, t in self.named}
        self.v = {n: np.zeros_like(t.data) for n, t in self.named}
        self.t = 0

    def zero_grad(self):
        for _, t in self.named:
            t.zero_grad()

    def step(self):
        self.t += 1
        if self.grad_clip is not None:
            total = np.sqrt(sum(float((t.grad * t.grad).sum()) for _, t in self.named))
            if total > self.grad_clip:
                factor = self.grad_clip / (total + 1e-12)
                for _, t in self.named:
                    t.grad *= factor
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for n, t in self.named:
            g = t.grad
            self.m[n] = self.b1 * self.m[n] + (1.0 - self.b1) * g
            self.v[n] = self.b2 * self.v[n] + (1.0 - self.b2) * (g * g)
            m_hat = self.m[n] / bc1
            v_hat = self.v[n] / bc2
            t.data -= self.lr * self.weight_decay * t.data
            t.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# training stages
# ---------------------------------------------------------------------------

def _batches(records, batch_size, rng=None):
    order = np.arange(len(records))
    if rng is not None:
        rng.shuffle(order)
    for lo in range(0, len(order), batch_size):
        yield [records[i] for i in order[lo : lo + batch_size]]


def pretrain_stage(records: list[D.SampleRecord], config: TrainConfig):
    """Stage 1: train encoders+adapters+decoders on per-modality MAE.

    Returns (checkpoint, log): the checkpoint holds the adapter, decoder, and
    encoder parameters of the best-validation epoch.
    """
    model = KudaModel(config)
    train = D.split(records, "train")
    valid = D.split(records, "valid")
    if not train or not valid:
        raise ValueError("pretrain_stage needs train and valid splits")
    opt = AdamW(model.stage1_params(), config.learning_rate, config.betas, weight_decay=config.weight_decay, grad_clip=config.grad_clip)
    rng = component_rng(config.seed, "pretrain")
    log = []
    best = None
    for epoch in range(config.epochs):
        train_loss = 0.0
        n_batches = 0
        for chunk in _batches(train, config.batch_size, rng):
            batch = make_feature_batch(chunk, with_unimodal=True)
            unimodal = model.forward_unimodal(batch)
            loss = None
            for m in MODALITIES:
                term = mae_loss(unimodal[m][1], batch.unimodal_labels[m])
                loss = term if loss is None else T.add(loss, term)
            opt.zero_grad()
            loss.backward()
            opt.step()
            train_loss += loss.item()
            n_batches += 1
        val_mae = _unimodal_validation_mae(model, valid, config)
        log.append({"epoch": epoch, "train_loss": train_loss / n_batches, "val_mae": val_mae})
        if best is None or val_mae["mean"] < best[0]:
            snap = {n: t.data.copy() for n, t in model.stage1_params().items()}
            best = (val_mae["mean"], snap)
    return best[1], log


def _unimodal_validation_mae(model, valid, config, eval_batch=256):
    per_m = {m: [] for m in MODALITIES}
    for chunk in _batches(valid, eval_batch):
        batch = make_feature_batch(chunk, with_unimodal=True)
        unimodal = model.forward_unimodal(batch)
        for m in MODALITIES:
            err = np.abs(unimodal[m][1].data - batch.unimodal_labels[m])
            per_m[m].extend(err.reshape(-1).tolist())
    out = {m: float(np.mean(per_m[m])) for m in MODALITIES}
    out["mean"] = float(np.mean([out[m] for m in MODALITIES]))
    return out


def downstream_stage(records: list[D.SampleRecord], checkpoint: dict[str, np.ndarray] | None, config: TrainConfig):
    """Stage 2: load+freeze adapters/decoders, train everything else on L_task.

    With the no_KIP ablation the checkpoint is ignored and nothing is frozen.
    Returns (model, log); the model carries the best-validation parameters.
    """
    model = KudaModel(config)
    if "no_KIP" in config.ablations:
        checkpoint = None
    if checkpoint is not None:
        model.load_params(checkpoint)
        model.freeze_knowledge()
    train = D.split(records, "train")
    valid = D.split(records, "valid")
    if not train or not valid:
        raise ValueError("downstream_stage needs train and valid splits")
    alpha = 0.0 if "no_CE" in config.ablations else config.alpha
    opt = AdamW(model.all_params(), config.learning_rate, config.betas, weight_decay=config.weight_decay, grad_clip=config.grad_clip)
    rng = component_rng(config.seed, "downstream")
    log = []
    best = None
    for epoch in range(config.epochs):
        train_loss = 0.0
        n_batches = 0
        for chunk in _batches(train, config.batch_size, rng):
            if len(chunk) < 2:
                continue  # InfoNCE needs negatives
            batch = make_feature_batch(chunk)
            y = multimodal_labels(chunk)
            out = model.forward(batch, mode="train", y=y)
            l_reg = mae_loss(out["y_hat"], y)
            if alpha > 0.0:
                l_cor = model.nce(out["f_final"], out["u_bars"])
                loss = union_loss(l_reg, l_cor, alpha)
            else:
                loss = l_reg
            opt.zero_grad()
            loss.backward()
            opt.step()
            train_loss += loss.item()
            n_batches += 1
        val_mae = _multimodal_validation_mae(model, valid)
        log.append({"epoch": epoch, "train_loss": train_loss / n_batches, "val_mae": val_mae})
        if best is None or val_mae < best[0]:
            best = (val_mae, {n: t.data.copy() for n, t in model.all_params().items()})
    model.load_params(best[1])
    return model, log


def _multimodal_validation_mae(model, valid, eval_batch=256):
    errs = []
    for chunk in _batches(valid, eval_batch):
        preds = model.predict(make_feature_batch(chunk))
        errs.extend(np.abs(preds - multimodal_labels(chunk).reshape(-1)).tolist())
    return float(np.mean(errs))


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate(model: KudaModel, records: list[D.SampleRecord], eval_batch: int = 64):
    """Test-mode evaluation: metrics plus attention and pooled-feature dumps.

    Predictions are computed from a label-free ``FeatureBatch``; the labels
    enter only the metric computation afterwards.
    """
    preds = []
    attention_rows = []
    feature_rows = []
    for chunk in _batches(records, eval_batch):
        batch = make_feature_batch(chunk)
        out = model.forward(batch, mode="test")
        batch_preds = out["y_hat"].data.reshape(-1)
        preds.extend(batch_preds.tolist())
        for block_idx, per_mod in enumerate(model.last_attention):
            for m, weights in per_mod.items():
                for i, sid in enumerate(batch.ids):
                    attention_rows.append(
                        {
                            "sample_id": sid,
                            "block": block_idx,
                            "modality": m,
                            "weights": weights[i].tolist(),
                            "ratios": {mm: 1.0 for mm in MODALITIES},
                        }
                    )
        f_pooled = out["f_final"].data.mean(axis=-2)
        u_pooled = {m: out["u_bars"][m].data.mean(axis=-2) for m in MODALITIES}
        for i, sid in enumerate(batch.ids):
            feature_rows.append(
                {
                    "sample_id": sid,
                    "f_final": f_pooled[i].tolist(),
                    **{f"u_{m}": u_pooled[m][i].tolist() for m in MODALITIES},
                }
            )
    preds = np.asarray(preds)
    labels = multimodal_labels(records).reshape(-1)
    report = compute_metrics(preds, labels, model.config.label_range)
    return report, preds, attention_rows, feature_rows


def branch_attention_mass(attention_rows: list[dict]) -> dict[str, dict[str, float]]:
    """Per sample and modality: mean cross-attention mass on the branch's
    real keys (everything not routed to the branch's null key), averaged
    over query rows and blocks. This is the soft gate the fusion stack
    applies to each modality's contribution.
    """
    acc: dict[str, dict[str, list[float]]] = {}
    for row in attention_rows:
        w = np.asarray(row["weights"])
        mass = float(w[..., :-1].sum(axis=-1).mean())
        acc.setdefault(row["sample_id"], {}).setdefault(row["modality"], []).append(mass)
    return {sid: {m: float(np.mean(v)) for m, v in per_mod.items()} for sid, per_mod in acc.items()}


def dominant_attention_rate(records: list[D.SampleRecord], attention_rows: list[dict]) -> float:
    """Fraction of unique-dominant samples whose dominant branch has the
    highest aggregated cross-attention mass."""
    mass = branch_attention_mass(attention_rows)
    by_id = {r.id: r for r in records}
    hits, total = 0, 0
    for sid, per_mod in mass.items():
        dom = D.dominant_set(by_id[sid])
        if len(dom) != 1:
            continue
        m = next(iter(dom))
        total += 1
        if all(per_mod[m] > per_mod[o] for o in MODALITIES if o != m):
            hits += 1
    if total == 0:
        raise ValueError("no unique-dominant samples to score")
    return hits / total
