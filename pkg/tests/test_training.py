import struct

import numpy as np
import pytest
import torch

from handsynth.core import encode_transcript
from handsynth.training import (
    CHECKPOINT_MAGIC,
    CheckpointError,
    ConfigError,
    ModelConfig,
    Trainer,
    TrainingConfig,
    identity_loss,
    load_checkpoint,
    load_training_config,
    lr_at,
)

from toydata import make_toy_dataset, micro_model_config, toy_atlas, toy_training_config


@pytest.fixture(scope="module")
def toy():
    return make_toy_dataset()


def micro_trainer(toy, **config_overrides):
    return Trainer(toy, toy_atlas(), micro_model_config(), toy_training_config(**config_overrides))


def params_snapshot(module):
    return {name: p.detach().clone() for name, p in module.named_parameters()}


def assert_params_equal(module, snapshot):
    for name, p in module.named_parameters():
        assert torch.equal(p.detach(), snapshot[name]), f"parameter {name} changed"


def assert_params_differ(module, snapshot):
    assert any(not torch.equal(p.detach(), snapshot[name])
               for name, p in module.named_parameters())


class TestTrainingConfig:
    def test_defaults_match_contract(self):
        cfg = TrainingConfig()
        assert cfg.lam == 0.1
        assert cfg.base_lr == 1e-4 and cfg.final_lr == 1e-5
        assert cfg.decay_start_iter == 300000 and cfg.decay_len_iter == 300000
        assert cfg.adam_beta1 == 0.5 and cfg.adam_beta2 == 0.999
        assert cfg.batch_size == 128 and cfg.max_decode_len == 25
        assert all([cfg.join_adv, cfg.idt, cfg.char_content, cfg.char_adv, cfg.join_id])

    def test_bad_lr_ordering_rejected(self):
        with pytest.raises(ConfigError):
            TrainingConfig(base_lr=1e-5, final_lr=1e-4)

    def test_config_file_round_trip(self, tmp_path):
        path = tmp_path / "train.cfg"
        path.write_text(
            "# comment\nbatch_size = 8\nidt = false\nlam = 0.25\nseed = 3\n",
            encoding="utf-8")
        cfg = load_training_config(path)
        assert cfg.batch_size == 8
        assert cfg.idt is False
        assert cfg.lam == 0.25
        assert cfg.seed == 3

    def test_unknown_key_named(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("no_such_field=1\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="no_such_field"):
            load_training_config(path)


class TestLearningRateSchedule:
    def test_start_value(self):
        assert lr_at(0, TrainingConfig()) == 1e-4

    def test_end_of_ramp(self):
        assert lr_at(600000, TrainingConfig()) == pytest.approx(1e-5)

    def test_midpoint(self):
        assert lr_at(450000, TrainingConfig()) == pytest.approx(5.5e-5)

    def test_hold_before_and_after(self):
        cfg = TrainingConfig()
        assert lr_at(299999, cfg) == 1e-4
        assert lr_at(10**7, cfg) == pytest.approx(1e-5)

    def test_monotone_nonincreasing(self):
        cfg = TrainingConfig()
        values = [lr_at(i, cfg) for i in range(0, 700000, 12345)]
        assert all(a >= b for a, b in zip(values, values[1:]))


class TestIdentityLoss:
    def test_identity_map_gives_zero(self):
        img = torch.rand(2, 3, 64, 48) * 2 - 1
        assert identity_loss(lambda x, z: x, img, None).item() == 0.0

    def test_opposite_constants_give_four(self):
        img = -torch.ones(1, 3, 64, 48)
        loss = identity_loss(lambda x, z: torch.ones_like(x), img, None)
        assert loss.item() == pytest.approx(4.0, rel=1e-6)

    def test_range_bound(self):
        torch.manual_seed(0)
        img = torch.rand(1, 3, 64, 48) * 2 - 1
        out = torch.rand(1, 3, 64, 48) * 2 - 1
        loss = identity_loss(lambda x, z: out, img, None)
        assert 0.0 <= loss.item() <= 4.0


class TestDStep:
    def test_generator_and_bank_untouched(self, toy):
        tr = micro_trainer(toy)
        batch = tr.make_batch()
        gen_before = params_snapshot(tr.gen)
        bank_before = params_snapshot(tr.bank)
        tr.d_step(batch)
        assert_params_equal(tr.gen, gen_before)
        assert_params_equal(tr.bank, bank_before)

    def test_discriminator_actually_updates(self, toy):
        tr = micro_trainer(toy)
        batch = tr.make_batch()
        disc_before = params_snapshot(tr.disc)
        tr.d_step(batch)
        assert_params_differ(tr.disc, disc_before)

    def test_single_switch_single_term(self, toy):
        tr = micro_trainer(toy, idt=False, char_content=False, char_adv=False, join_id=False)
        report = tr.d_step(tr.make_batch())
        assert set(report) == {"join_adv"}

    def test_empty_batch_rejected(self, toy):
        tr = micro_trainer(toy)
        with pytest.raises(ValueError):
            tr.make_batch([])

    def test_d_loss_decreases_on_toy_set(self, toy):
        finals, initials = [], []
        for seed in range(5):
            tr = micro_trainer(toy, seed=seed, batch_size=8)
            losses = []
            for _ in range(50):
                batch = tr.make_batch()
                report = tr.d_step(batch)
                losses.append(sum(report.values()))
            assert all(np.isfinite(losses))
            initials.append(np.mean(losses[:5]))
            finals.append(np.mean(losses[-5:]))
        assert np.median(finals) < np.median(initials)


class TestGStep:
    def test_discriminator_untouched(self, toy):
        tr = micro_trainer(toy)
        batch = tr.make_batch()
        disc_before = params_snapshot(tr.disc)
        tr.g_step(batch)
        assert_params_equal(tr.disc, disc_before)

    def test_generator_and_bank_update(self, toy):
        tr = micro_trainer(toy)
        batch = tr.make_batch()
        gen_before = params_snapshot(tr.gen)
        tr.g_step(batch)
        assert_params_differ(tr.gen, gen_before)

    def test_idt_only_reduces_identity_loss(self, toy):
        tr = micro_trainer(toy, join_adv=False, char_content=False,
                           char_adv=False, join_id=False, batch_size=4)
        batch = tr.make_batch()
        first = tr.g_step(batch)["idt"]
        for _ in range(99):
            last = tr.g_step(batch)["idt"]
        assert last < first

    def test_batched_writer_column_moves_absent_stays(self, toy):
        tr = Trainer(make_toy_dataset(num_writers=3), toy_atlas(),
                     micro_model_config(), toy_training_config(batch_size=4))
        before = tr.bank.embedding.weight.detach().clone()
        # batch drawn only from writers 0 and 1 (first 40 samples are w0, next 20 w1)
        batch = tr.make_batch([0, 1, 21, 22])
        assert set(batch.writer_idx.tolist()) == {0, 1}
        tr.g_step(batch)
        after = tr.bank.embedding.weight.detach()
        assert not torch.equal(after[0], before[0])
        assert not torch.equal(after[1], before[1])
        assert torch.equal(after[2], before[2])


class TestAblationSwitchPlumbing:
    CONFIGS = [
        {"join_adv"},
        {"join_adv", "idt"},
        {"join_adv", "idt", "char_content"},
        {"join_adv", "idt", "char_content", "char_adv"},
        {"join_adv", "idt", "char_content", "char_adv", "join_id"},
    ]
    ALL = {"join_adv", "idt", "char_content", "char_adv", "join_id"}

    def test_each_row_is_pure_configuration(self, toy):
        for enabled in self.CONFIGS:
            flags = {name: name in enabled for name in self.ALL}
            tr = micro_trainer(toy, batch_size=4, **flags)
            batch = tr.make_batch()
            d_report = tr.d_step(batch)
            g_report = tr.g_step(batch)
            assert set(d_report) == enabled - {"idt"}
            assert set(g_report) == enabled


class TestDeterminism:
    def test_fixed_seed_reproduces_loss_trajectory(self, toy):
        def run():
            tr = micro_trainer(toy, batch_size=4)
            rows = []
            tr.train(4, on_iteration=lambda it, d, g: rows.append((it, d, g)))
            return rows

        assert run() == run()


class TestBatchAssembly:
    def test_lexicon_overrides_print_text(self, toy):
        tr = Trainer(toy, toy_atlas(), micro_model_config(),
                     toy_training_config(batch_size=4), lexicon=["ab"])
        batch = tr.make_batch()
        expected = encode_transcript("ab", toy.charset)
        assert all(batch.print_labels[i].tolist() == expected for i in range(4))

    def test_transcript_longer_than_decode_len_rejected(self, toy):
        tr = micro_trainer(toy)
        tr.config.max_decode_len = 2
        with pytest.raises(ValueError, match="max_decode_len"):
            tr.make_batch([9])  # "abc" needs 4 steps

    def test_labels_padded_with_eos(self, toy):
        tr = micro_trainer(toy)
        batch = tr.make_batch([0, 9])  # "a" and "abc"
        eos = toy.charset.eos_index
        assert batch.labels.shape[1] == 4
        assert batch.labels[0].tolist() == [0, eos, eos, eos]
        assert batch.lengths.tolist() == [2, 4]


class TestCheckpointContainer:
    def probe(self, trainer):
        torch.manual_seed(123)
        x = torch.rand(1, 3, 64, 48) * 2 - 1
        z = torch.zeros(1, trainer.bank.dim)
        trainer.gen.eval()
        with torch.no_grad():
            out = trainer.gen(x, z)
        trainer.gen.train()
        return out

    def test_round_trip_bit_identical_forward(self, toy, tmp_path):
        tr = micro_trainer(toy, batch_size=4)
        tr.train(2)
        before = self.probe(tr)
        path = tmp_path / "ckpt.slgn"
        tr.save(path)
        ckpt = load_checkpoint(path)
        torch.manual_seed(123)
        x = torch.rand(1, 3, 64, 48) * 2 - 1
        with torch.no_grad():
            after = ckpt.generator(x, torch.zeros(1, ckpt.bank.dim))
        assert torch.equal(before, after)

    def test_metadata_restored(self, toy, tmp_path):
        tr = micro_trainer(toy, batch_size=4)
        tr.train(3)
        path = tmp_path / "ckpt.slgn"
        tr.save(path)
        ckpt = load_checkpoint(path)
        assert ckpt.iteration == 3
        assert ckpt.charset.symbols == toy.charset.symbols
        assert ckpt.writer_ids == ["w0", "w1"]
        assert ckpt.training_config.batch_size == 4
        assert ckpt.model_config == micro_model_config()

    def test_magic_bytes_present(self, toy, tmp_path):
        tr = micro_trainer(toy)
        path = tmp_path / "ckpt.slgn"
        tr.save(path)
        assert path.read_bytes()[:4] == CHECKPOINT_MAGIC == b"SLGN"

    def test_wrong_magic_rejected(self, toy, tmp_path):
        tr = micro_trainer(toy)
        path = tmp_path / "ckpt.slgn"
        tr.save(path)
        data = path.read_bytes()
        path.write_bytes(b"XXXX" + data[4:])
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_future_version_rejected(self, toy, tmp_path):
        tr = micro_trainer(toy)
        path = tmp_path / "ckpt.slgn"
        tr.save(path)
        data = bytearray(path.read_bytes())
        data[4:8] = struct.pack("<I", 2)
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_truncated_file_rejected(self, toy, tmp_path):
        tr = micro_trainer(toy)
        path = tmp_path / "ckpt.slgn"
        tr.save(path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_restore_continues_iteration_count(self, toy, tmp_path):
        tr = micro_trainer(toy, batch_size=4)
        tr.train(2)
        path = tmp_path / "ckpt.slgn"
        tr.save(path)
        tr2 = Trainer.restore(path, toy, toy_atlas())
        assert tr2.iteration == 2
        tr2.train(1)
        assert tr2.iteration == 3

    def test_restore_rejects_mismatched_writers(self, toy, tmp_path):
        tr = micro_trainer(toy)
        path = tmp_path / "ckpt.slgn"
        tr.save(path)
        other = make_toy_dataset(num_writers=3)
        with pytest.raises(CheckpointError, match="writer"):
            Trainer.restore(path, other, toy_atlas())


class TestLossLog:
    def test_one_based_lines_with_enabled_terms(self, toy, tmp_path):
        log = tmp_path / "loss_log.txt"
        tr = Trainer(toy, toy_atlas(), micro_model_config(),
                     toy_training_config(batch_size=4, char_adv=False), log_path=str(log))
        tr.train(3)
        lines = log.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 3
        assert lines[0].split()[0] == "1"
        assert lines[2].split()[0] == "3"
        names = {tok.split("=")[0] for tok in lines[0].split()[1:]}
        assert names == {"d_char_content", "d_join_adv", "d_join_id",
                         "g_char_content", "g_join_adv", "g_join_id", "g_idt"}

    def test_resume_appends_continuing_numbers(self, toy, tmp_path):
        log = tmp_path / "loss_log.txt"
        ckpt = tmp_path / "ckpt.slgn"
        tr = Trainer(toy, toy_atlas(), micro_model_config(),
                     toy_training_config(batch_size=4), log_path=str(log))
        tr.train(2, checkpoint_path=str(ckpt))
        tr2 = Trainer.restore(ckpt, toy, toy_atlas(), log_path=str(log))
        tr2.train(2)
        numbers = [line.split()[0] for line in log.read_text(encoding="utf-8").splitlines()]
        assert numbers == ["1", "2", "3", "4"]


class TestInterrupt:
    def test_stop_request_finishes_iteration_and_checkpoints(self, toy, tmp_path):
        ckpt = tmp_path / "ckpt.slgn"
        tr = micro_trainer(toy, batch_size=4)
        stop_at = 2

        def on_iteration(it, d, g):
            if it == stop_at:
                tr.request_stop()

        status = tr.train(10, checkpoint_path=str(ckpt), on_iteration=on_iteration)
        assert status == "interrupted"
        assert tr.iteration == stop_at
        assert load_checkpoint(ckpt).iteration == stop_at
