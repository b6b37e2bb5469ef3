import pytest
import torch

from difscil.backbone import MockBackbone
from difscil.config import PromptConfig, toy_run_config
from difscil.data import SampleRef, ToyShapesDataset
from difscil.protocol import (
    DATASET_LAYOUTS,
    DiffusionFscil,
    DistillSchedule,
    ExemplarMemory,
    SessionSpec,
    beta_schedule,
    build_sessions,
    update_memory,
)


class TestBuildSessions:
    def test_cub_layout(self):
        sessions = build_sessions("cub")
        assert len(sessions) == 11
        assert sessions[0].class_ids == list(range(100))
        assert sessions[0].shots is None
        for s in sessions[1:]:
            assert len(s.class_ids) == 10 and s.shots == 5
        assert sessions[-1].class_ids[-1] == 199

    def test_mini_and_cifar_layouts(self):
        for name in ("mini", "cifar"):
            sessions = build_sessions(name)
            assert len(sessions) == 9
            assert len(sessions[0].class_ids) == 60
            assert sessions[-1].class_ids[-1] == 99

    def test_toy_layout(self):
        sessions = build_sessions("toy")
        assert [len(s.class_ids) for s in sessions] == [10, 2, 2]
        assert sessions[-1].class_ids[-1] == 13

    def test_ids_partition_the_range(self):
        sessions = build_sessions("cub")
        seen = [c for s in sessions for c in s.class_ids]
        assert seen == list(range(200))

    def test_unknown_layout_rejected(self):
        with pytest.raises(ValueError):
            build_sessions("imagenet21k")

    def test_refs_filled_from_dataset(self):
        ds = ToyShapesDataset(16, train_per_class=6, test_per_class=2)
        sessions = build_sessions("toy", ds)
        assert len(sessions[0].refs[0]) == 6  # full base split
        assert len(sessions[1].refs[10]) == 5  # 5-shot
        for s in sessions:
            for c in s.class_ids:
                assert all(r.class_id == c for r in s.refs[c])

    def test_layout_bigger_than_dataset_rejected(self):
        ds = ToyShapesDataset(16, train_per_class=6, test_per_class=2)
        with pytest.raises(ValueError):
            build_sessions("mini", ds)


class TestBetaSchedule:
    def test_linear_oracle(self):
        sched = DistillSchedule(0.1, 10)
        for s in range(1, 11):
            assert beta_schedule(s, sched) == pytest.approx(0.1 + (s / 10) * 0.9)

    def test_final_session_reaches_one(self):
        assert beta_schedule(8, DistillSchedule(0.5, 8)) == pytest.approx(1.0)

    def test_zero_init_is_pure_ramp(self):
        sched = DistillSchedule(0.0, 4)
        assert [beta_schedule(s, sched) for s in range(1, 5)] == pytest.approx(
            [0.25, 0.5, 0.75, 1.0]
        )

    def test_out_of_range_session_rejected(self):
        sched = DistillSchedule(0.1, 5)
        for s in (0, 6):
            with pytest.raises(ValueError):
                beta_schedule(s, sched)

    def test_invalid_beta_init_rejected(self):
        with pytest.raises(ValueError):
            DistillSchedule(1.5, 5)


class TestExemplarMemory:
    def test_one_per_class(self):
        mem = ExemplarMemory()
        mem.add(3, SampleRef(3, 0, "train"))
        with pytest.raises(ValueError):
            mem.add(3, SampleRef(3, 1, "train"))
        assert len(mem) == 1 and mem.class_ids() == [3]

    def test_update_memory_takes_first_sample(self):
        ds = ToyShapesDataset(16, train_per_class=6, test_per_class=2)
        sessions = build_sessions("toy", ds)
        mem = ExemplarMemory()
        update_memory(mem, sessions[0])
        update_memory(mem, sessions[1])
        assert len(mem) == 12
        assert mem.get(10) == sessions[1].refs[10][0]

    def test_empty_class_rejected(self):
        spec = SessionSpec(1, [5], 5, 1, refs={5: []})
        with pytest.raises(ValueError):
            update_memory(ExemplarMemory(), spec)


def small_trainer(seed=0, **cfg_kw):
    backbone = MockBackbone(seed=0)
    ds = ToyShapesDataset(backbone.input_shape[-1], train_per_class=4, test_per_class=2)
    cfg_kw = {"c_agg": 12, "d_neck": 16, "d_cls": 16, **cfg_kw}
    cfg = toy_run_config(
        seed=seed,
        backbone="mock",
        batch_size=4,
        base_epochs=2,
        inc_iters=3,
        replay_per_step=2,
        prompt=PromptConfig(lr=1e-2, warmup_iters=2, iters=4, batch=1, n_vec=2),
        **cfg_kw,
    )
    cfg.efficiency.generation_steps = 4
    sessions = build_sessions("toy", ds)
    return DiffusionFscil(backbone, sessions, ds, cfg), sessions


class TestProtocolRuns:
    @pytest.fixture(scope="class")
    def fitted(self):
        trainer, sessions = small_trainer()
        trainer.fit()
        return trainer, sessions

    def test_backbone_never_changes(self, fitted):
        trainer, _ = fitted
        fresh = MockBackbone(seed=0)
        assert trainer.backbone.checksum() == fresh.checksum()

    def test_only_head_trainable_after_base(self, fitted):
        trainer, _ = fitted
        names = trainer.trainable_parameter_names()
        assert names and all(n.startswith("head.") for n in names)

    def test_memory_and_prompts_cover_all_classes(self, fitted):
        trainer, _ = fitted
        assert trainer.memory.class_ids() == list(range(14))
        assert trainer.prompts.class_ids() == list(range(14))

    def test_seen_classes_complete(self, fitted):
        trainer, _ = fitted
        assert trainer.seen_classes() == list(range(14))

    def test_predict_returns_seen_class(self, fitted):
        trainer, sessions = fitted
        ref = sessions[2].refs[13][0]
        pred = trainer.predict(trainer.dataset.image(ref))
        assert pred in range(14)

    def test_session_order_enforced(self):
        trainer, sessions = small_trainer()
        with pytest.raises(RuntimeError):
            trainer.fit_session(sessions[1])
        trainer.fit_base(sessions[0])
        with pytest.raises(ValueError):
            trainer.fit_session(sessions[2])
        with pytest.raises(RuntimeError):
            trainer.fit_base(sessions[0])

    def test_predict_before_training_rejected(self):
        trainer, _ = small_trainer()
        with pytest.raises(RuntimeError):
            trainer.predict(torch.zeros(trainer.backbone.input_shape))

    def test_run_is_bit_reproducible(self):
        a, _ = small_trainer(seed=3)
        b, _ = small_trainer(seed=3)
        a.fit()
        b.fit()
        assert a.checksums() == b.checksums()

    def test_seed_changes_the_run(self, fitted):
        trainer, _ = fitted
        other, _ = small_trainer(seed=1)
        other.fit()
        assert other.checksums()["head"] != trainer.checksums()["head"]

    def test_aggregator_frozen_during_incremental(self):
        trainer, sessions = small_trainer()
        trainer.fit_base(sessions[0])
        snap = trainer.checksums()
        trainer.fit_session(sessions[1])
        after = trainer.checksums()
        assert after["aggregator"] == snap["aggregator"]
        assert after["neck"] == snap["neck"]
        assert after["head"] != snap["head"]

    def test_checkpoint_round_trip(self, fitted, tmp_path):
        trainer, sessions = fitted
        path = tmp_path / "ck.pt"
        trainer.save_checkpoint(path)
        fresh, _ = small_trainer(seed=99)
        fresh.load_checkpoint(path)
        assert fresh.checksums() == trainer.checksums()
        assert fresh.current_session == trainer.current_session
        assert fresh.memory.class_ids() == trainer.memory.class_ids()
        ref = sessions[1].refs[11][0]
        img = trainer.dataset.image(ref)
        assert fresh.predict(img) == trainer.predict(img)

    def test_bad_checkpoint_header_rejected(self, tmp_path):
        path = tmp_path / "bad.pt"
        torch.save({"header": "nope"}, path)
        trainer, _ = small_trainer()
        with pytest.raises(ValueError):
            trainer.load_checkpoint(path)

    def test_prototypes_never_move(self, fitted):
        trainer, _ = fitted
        from difscil.heads import etf_prototypes

        assert torch.equal(
            trainer.prototypes, etf_prototypes(14, trainer.cfg.d_cls, seed=trainer.cfg.seed)
        )

    def test_too_small_classifier_dim_rejected(self):
        with pytest.raises(ValueError):
            small_trainer(d_cls=8)
