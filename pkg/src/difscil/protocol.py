"""FSCIL session protocol: base training, incremental updates, inference.

Session 0 trains the aggregator, the convolutional neck and the MLP head
with dot-regression on inversion/synthetic features, adding augmented
features for a short fine-tuning phase.  Every later session trains the MLP
head only, mixing few-shot and exemplar features with generative latent
replay under a linearly growing distillation coefficient.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import torch

from .aggregate import LayerAggregator
from .backbone import (
    CLASS_NAME_KIND,
    DiffusionBackbone,
    PromptEmbedding,
    tensor_checksum,
)
from .config import RunConfig
from .data import SampleRef, ToyShapesDataset, augment_image
from .features import FeatureExtractor, TimestepGrid, sample_seed
from .heads import (
    ConvNeck,
    MlpHead,
    TeacherSnapshot,
    classify,
    distill_loss,
    dr_loss,
    etf_prototypes,
)
from .prompts import ClassPromptEmbedding, PromptStore, init_embedding, optimize_embedding, render_prompt

CHECKPOINT_HEADER = "DIFSCIL-CK-v1"

DATASET_LAYOUTS = {
    "cub": {"base": 100, "sessions": 10, "ways": 10, "shots": 5},
    "mini": {"base": 60, "sessions": 8, "ways": 5, "shots": 5},
    "cifar": {"base": 60, "sessions": 8, "ways": 5, "shots": 5},
    # base_shots keeps the toy base session data-poor, the regime where
    # synthetic feature diversity actually matters
    "toy": {"base": 10, "sessions": 2, "ways": 2, "shots": 5, "base_shots": 6},
}


@dataclass
class SessionSpec:
    index: int
    class_ids: list[int]
    shots: int | None  # None: use the full base split
    ways: int
    refs: dict[int, list[SampleRef]] = field(default_factory=dict)


def build_sessions(dataset_spec, dataset: ToyShapesDataset | None = None) -> list[SessionSpec]:
    """Base + incremental session specs for a named layout or explicit counts."""
    if isinstance(dataset_spec, str):
        if dataset_spec not in DATASET_LAYOUTS:
            raise ValueError(f"unknown dataset layout {dataset_spec!r}")
        layout = DATASET_LAYOUTS[dataset_spec]
    else:
        layout = dict(dataset_spec)
    base, n_inc = layout["base"], layout["sessions"]
    ways, shots = layout["ways"], layout["shots"]
    base_shots = layout.get("base_shots")
    sessions = []
    next_id = 0
    for s in range(n_inc + 1):
        ids = list(range(next_id, next_id + (base if s == 0 else ways)))
        next_id = ids[-1] + 1
        refs = {}
        if dataset is not None:
            if next_id > dataset.num_classes:
                raise ValueError("layout requests more classes than the dataset has")
            for c in ids:
                refs[c] = dataset.train_refs(c, base_shots if s == 0 else shots)
        sessions.append(
            SessionSpec(s, ids, base_shots if s == 0 else shots, ways, refs)
        )
    seen = [c for sp in sessions for c in sp.class_ids]
    if len(seen) != len(set(seen)):
        raise ValueError("class ids overlap across sessions")
    return sessions


@dataclass
class DistillSchedule:
    beta_init: float
    S: int

    def __post_init__(self):
        if not 0.0 <= self.beta_init <= 1.0:
            raise ValueError("beta_init must lie in [0, 1]")


def beta_schedule(s: int, sched: DistillSchedule) -> float:
    """beta^s = beta_init + (s/S)(1 - beta_init), linear to beta^S = 1."""
    if not 1 <= s <= sched.S:
        raise ValueError(f"session {s} outside [1, {sched.S}]")
    return sched.beta_init + (s / sched.S) * (1.0 - sched.beta_init)


class ExemplarMemory:
    """Exactly one stored sample reference per encountered class."""

    def __init__(self):
        self._refs: dict[int, SampleRef] = {}

    def add(self, class_id: int, ref: SampleRef):
        if class_id in self._refs:
            raise ValueError(f"class {class_id} already has an exemplar")
        self._refs[class_id] = ref

    def get(self, class_id: int) -> SampleRef:
        return self._refs[class_id]

    def class_ids(self) -> list[int]:
        return sorted(self._refs)

    def __len__(self):
        return len(self._refs)


def update_memory(memory: ExemplarMemory, session: SessionSpec) -> ExemplarMemory:
    """Store the first sample (dataset order) of each new class."""
    for c in session.class_ids:
        if not session.refs.get(c):
            raise ValueError(f"session {session.index} has no data for class {c}")
        memory.add(c, session.refs[c][0])
    return memory


class DiffusionFscil:
    """Session-incremental learner over a frozen diffusion backbone.

    fit/predict-style surface: ``fit_base`` consumes session 0,
    ``fit_session`` each later session in order, ``predict`` classifies a
    single image over all classes seen so far.
    """

    def __init__(
        self,
        backbone: DiffusionBackbone,
        sessions: list[SessionSpec],
        dataset: ToyShapesDataset,
        cfg: RunConfig,
    ):
        self.backbone = backbone
        self.sessions = sessions
        self.dataset = dataset
        self.cfg = cfg
        self.seed = cfg.seed
        torch.manual_seed(cfg.seed)

        self.aggregator = LayerAggregator(
            backbone.tap_table, backbone.layer_range, cfg.c_agg
        )
        self.neck = ConvNeck(cfg.c_agg, cfg.c_agg, cfg.d_neck)
        self.head = MlpHead(cfg.d_neck, cfg.d_cls)
        k_total = sum(len(s.class_ids) for s in sessions)
        if cfg.d_cls < k_total - 1:
            raise ValueError("d_cls too small for the total class count")
        self.prototypes = etf_prototypes(k_total, cfg.d_cls, seed=cfg.seed)
        self.extractor = FeatureExtractor(
            backbone, self.aggregator, cfg.efficiency.generation_steps
        )
        T = backbone.schedule.T
        if cfg.single_t is not None:
            self.forced_t: int | None = max(2, round(cfg.single_t * T))
            self.grid = TimestepGrid(2, T)  # unused when forced_t is set
        else:
            self.forced_t = None
            self.grid = TimestepGrid(cfg.m, T)
        self.distill = DistillSchedule(cfg.beta_init, len(sessions) - 1)
        self.prompts = PromptStore()
        self.memory = ExemplarMemory()
        self.teacher: TeacherSnapshot | None = None
        self.current_session = -1

    # -- helpers ----------------------------------------------------------
    def _needs_prompts(self) -> bool:
        return self.cfg.features.aug or self.cfg.features.gen

    def _class_name_prompt(self, class_id: int) -> PromptEmbedding:
        name = self.dataset.class_names[class_id]
        return PromptEmbedding(
            self.backbone.token_embedding(name)[None], kind=CLASS_NAME_KIND
        )

    def _class_specific_prompt(self, class_id: int) -> PromptEmbedding:
        emb = self.prompts.get(class_id)
        return render_prompt("a photo of a {}", emb.label, self.backbone, emb)

    def _learn_prompts(self, session: SessionSpec):
        for c in session.class_ids:
            if c in self.prompts:
                continue
            label = self.dataset.class_names[c]
            images = [self.dataset.image(r) for r in session.refs[c]]
            emb = init_embedding(label, self.cfg.prompt.n_vec, self.backbone, c)
            emb = optimize_embedding(
                emb,
                images,
                self.backbone,
                lr=self.cfg.prompt.lr,
                warmup_iters=self.cfg.prompt.warmup_iters,
                iters=self.cfg.prompt.iters,
                batch=self.cfg.prompt.batch,
                seed=sample_seed(self.seed, c, 0, "prompt"),
            )
            self.prompts.add(emb)

    def _encode(self, ref: SampleRef, epoch: int, augment: bool):
        img = self.dataset.image(ref)
        if augment:
            img = augment_image(img, sample_seed(self.seed, ref.sample_id, epoch, "aug-img"))
        return self.backbone.encode_image(img)

    def _sample_features(self, ref: SampleRef, class_id: int, epoch: int,
                         augment: bool, use_aug: bool):
        """Per-sample training features (inv always, syn/aug per toggles)."""
        z0 = self._encode(ref, epoch, augment)
        feats = [self.extractor.extract_inv(z0)]
        if self.cfg.features.syn:
            feats.append(
                self.extractor.extract_syn(
                    z0,
                    self._class_name_prompt(class_id),
                    sample_seed(self.seed, ref.sample_id, epoch, "syn"),
                )
            )
        if use_aug and self.cfg.features.aug:
            feats.append(
                self.extractor.extract_aug(
                    z0,
                    self._class_specific_prompt(class_id),
                    self.grid,
                    sample_seed(self.seed, ref.sample_id, epoch, "augf"),
                    force_t=self.forced_t,
                )
            )
        return feats

    def _dr_step(self, batch, opt):
        feats, labels = [], []
        for f, y in batch:
            feats.append(f.data)
            labels.append(y)
        h = self.head(self.neck(torch.stack(feats)))
        loss = dr_loss(h, torch.tensor(labels), self.prototypes)
        opt.zero_grad()
        loss.backward()
        opt.step()
        return float(loss.detach())

    # -- protocol ---------------------------------------------------------
    def fit_base(self, session: SessionSpec | None = None) -> "DiffusionFscil":
        if self.current_session >= 0:
            raise RuntimeError("base session was already trained")
        session = session or self.sessions[0]
        if session.index != 0:
            raise ValueError("fit_base expects session 0")
        if self._needs_prompts():
            self._learn_prompts(session)

        opt = torch.optim.AdamW(
            [
                {"params": self.aggregator.parameters(), "lr": self.cfg.lr_agg},
                {"params": self.neck.parameters(), "lr": self.cfg.lr_agg},
                {"params": self.head.parameters(), "lr": self.cfg.lr_mlp},
            ],
            weight_decay=self.cfg.weight_decay,
        )
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(
            opt, T_max=self.cfg.base_epochs
        )
        pairs = [(r, c) for c in session.class_ids for r in session.refs[c]]
        g = torch.Generator().manual_seed(self.seed + 17)
        n_epochs = self.cfg.base_epochs
        aug_from = n_epochs - max(1, round(n_epochs * self.cfg.aug_epoch_frac))
        for epoch in range(n_epochs):
            use_aug = self.cfg.features.aug and epoch >= aug_from
            order = torch.randperm(len(pairs), generator=g).tolist()
            batch = []
            for i in order:
                ref, c = pairs[i]
                for f in self._sample_features(ref, c, epoch, True, use_aug):
                    batch.append((f, c))
                if len(batch) >= self.cfg.batch_size:
                    self._dr_step(batch, opt)
                    batch = []
            if batch:
                self._dr_step(batch, opt)
            sched.step()

        # freeze aggregator and neck for all later sessions
        self.aggregator.eval()
        self.neck.eval()
        for p in self.aggregator.parameters():
            p.requires_grad_(False)
        for p in self.neck.parameters():
            p.requires_grad_(False)
        self.teacher = TeacherSnapshot(self.neck, self.head)
        update_memory(self.memory, session)
        self.current_session = 0
        return self

    def fit_session(self, session: SessionSpec) -> "DiffusionFscil":
        if self.current_session < 0:
            raise RuntimeError("base session must be trained first")
        if session.index != self.current_session + 1:
            raise ValueError(
                f"expected session {self.current_session + 1}, got {session.index}"
            )
        if self._needs_prompts():
            self._learn_prompts(session)
        beta = 0.0 if self.cfg.no_distill else beta_schedule(session.index, self.distill)
        old_classes = [c for c in self.memory.class_ids()]
        new_pairs = [(r, c) for c in session.class_ids for r in session.refs[c]]
        mem_pairs = [(self.memory.get(c), c) for c in old_classes]

        opt = torch.optim.AdamW(
            self.head.parameters(), lr=self.cfg.lr_mlp,
            weight_decay=self.cfg.weight_decay,
        )
        g = torch.Generator().manual_seed(self.seed + 31 + session.index)
        iters = self.cfg.inc_iters
        if self.cfg.efficiency.max_iters:
            iters = min(iters, self.cfg.efficiency.max_iters)
        half = max(1, self.cfg.batch_size // 2)
        for it in range(iters):
            batch = []
            for _ in range(half):  # new few-shot samples (inv/syn/aug)
                ref, c = new_pairs[int(torch.randint(len(new_pairs), (1,), generator=g))]
                assert c in session.class_ids  # aug stays on current-session classes
                for f in self._sample_features(ref, c, it, False, True):
                    batch.append((f, c))
            for _ in range(half):  # memory exemplars (inv/syn only)
                ref, c = mem_pairs[int(torch.randint(len(mem_pairs), (1,), generator=g))]
                for f in self._sample_features(ref, c, it, False, False):
                    batch.append((f, c))
            feats = torch.stack([f.data for f, _ in batch])
            labels = torch.tensor([y for _, y in batch])
            h = self.head(self.neck(feats))
            loss = dr_loss(h, labels, self.prototypes)

            if self.cfg.features.gen and beta > 0.0:
                gen_feats = []
                for _ in range(self.cfg.replay_per_step):
                    c = old_classes[int(torch.randint(len(old_classes), (1,), generator=g))]
                    gen_feats.append(
                        self.extractor.extract_gen(
                            self._class_specific_prompt(c),
                            sample_seed(self.seed, c, it + 1000 * session.index, "gen"),
                        ).data
                    )
                loss = loss + beta * distill_loss(
                    torch.stack(gen_feats), self.teacher,
                    (self.neck, self.head), self.cfg.distill_head_only,
                )
            opt.zero_grad()
            loss.backward()
            opt.step()

        update_memory(self.memory, session)
        self.teacher = TeacherSnapshot(self.neck, self.head)
        self.current_session = session.index
        return self

    def fit(self) -> "DiffusionFscil":
        self.fit_base(self.sessions[0])
        for s in self.sessions[1:]:
            self.fit_session(s)
        return self

    # -- inference --------------------------------------------------------
    def seen_classes(self) -> list[int]:
        return [
            c
            for s in self.sessions[: self.current_session + 1]
            for c in s.class_ids
        ]

    def _inference_prompt(self) -> PromptEmbedding | None:
        if self.cfg.inference_prompt is None:
            return None
        return PromptEmbedding(
            self.backbone.token_embedding(self.cfg.inference_prompt)[None],
            kind=CLASS_NAME_KIND,
        )

    def predict(self, image: torch.Tensor) -> int:
        """Inversion-only inference over all classes seen so far."""
        if self.current_session < 0:
            raise RuntimeError("model is untrained")
        z0 = self.backbone.encode_image(image)
        with torch.no_grad():
            feat = self.extractor.extract_inv(z0, self._inference_prompt())
            h = self.head(self.neck(feat.data[None]))[0]
        return classify(h, self.prototypes, self.seen_classes())

    infer = predict

    # -- bookkeeping ------------------------------------------------------
    def trainable_parameter_names(self) -> set[str]:
        names = set()
        for prefix, mod in (
            ("aggregator", self.aggregator),
            ("neck", self.neck),
            ("head", self.head),
        ):
            for n, p in mod.named_parameters():
                if p.requires_grad:
                    names.add(f"{prefix}.{n}")
        return names

    def checksums(self) -> dict[str, str]:
        return {
            "backbone": self.backbone.checksum(),
            "aggregator": tensor_checksum(
                t for _, t in sorted(self.aggregator.state_dict().items())
            ),
            "neck": tensor_checksum(t for _, t in sorted(self.neck.state_dict().items())),
            "head": tensor_checksum(t for _, t in sorted(self.head.state_dict().items())),
        }

    def save_checkpoint(self, path):
        payload = {
            "header": CHECKPOINT_HEADER,
            "aggregator": self.aggregator.state_dict(),
            "neck": self.neck.state_dict(),
            "head": self.head.state_dict(),
            "teacher": None
            if self.teacher is None
            else {
                "neck": self.teacher.neck.state_dict(),
                "head": self.teacher.head.state_dict(),
            },
            "prototypes": self.prototypes,
            "prompts": self.prompts.state_dict(),
            "memory": {c: self.memory.get(c) for c in self.memory.class_ids()},
            "session": self.current_session,
            "config_hash": self.cfg.config_hash(),
        }
        torch.save(payload, path)

    def load_checkpoint(self, path):
        payload = torch.load(path, weights_only=False)
        if payload.get("header") != CHECKPOINT_HEADER:
            raise ValueError("not a framework checkpoint")
        self.aggregator.load_state_dict(payload["aggregator"])
        self.neck.load_state_dict(payload["neck"])
        self.head.load_state_dict(payload["head"])
        # The prototype frame is seeded at construction time, so a trainer
        # built with a different seed must adopt the saved frame to classify
        # consistently.
        self.prototypes = payload["prototypes"]
        if payload["teacher"] is not None:
            self.teacher = TeacherSnapshot(self.neck, self.head)
            self.teacher.neck.load_state_dict(payload["teacher"]["neck"])
            self.teacher.head.load_state_dict(payload["teacher"]["head"])
        self.prompts = PromptStore()
        for rec in payload["prompts"]["records"]:
            self.prompts.add(
                ClassPromptEmbedding(rec["class_id"], rec["label"], rec["vectors"], frozen=True)
            )
        self.memory = ExemplarMemory()
        for c, ref in payload["memory"].items():
            self.memory.add(c, ref)
        self.current_session = payload["session"]
        if self.current_session >= 0:
            self.aggregator.eval()
            self.neck.eval()
            for p in self.aggregator.parameters():
                p.requires_grad_(False)
            for p in self.neck.parameters():
                p.requires_grad_(False)
        return self
