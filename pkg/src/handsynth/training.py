"""Alternating GAN optimization, loss aggregation, and checkpointing.

Each iteration runs one discriminator step (fakes generated without
gradient into the generator) and one generator step (discriminator frozen,
gradients flow to the generator and the style bank). Per-term loss switches
select which objectives participate, so ablation rows are pure
configuration. Checkpoints are single binary containers with magic bytes,
a format version, and length-prefixed named sections.
"""

import dataclasses
import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .core import Charset, encode_transcript
from .discriminators import (
    DualDiscriminator,
    adv_g_loss,
    char_adv_losses,
    char_content_loss,
    join_adv_losses,
    join_id_loss,
)
from .generator import GeneratorNet
from .render import normalize_size, render_text
from .stylebank import StyleBank

CHECKPOINT_MAGIC = b"SLGN"
CHECKPOINT_VERSION = 1


class ConfigError(Exception):
    """Raised for malformed configuration files or field values."""


class CheckpointError(Exception):
    """Raised for unreadable, truncated, or incompatible checkpoint files."""


def _scale_width(value, factor):
    return max(4, int(round(value * factor)))


@dataclass(frozen=True)
class ModelConfig:
    """Channel widths and depths for all three networks."""

    gen_channels: tuple = (16, 32, 64, 128, 256)
    gen_res_blocks: int = 6
    style_dim: int = 256
    fusion_after: int = 3
    trunk_channels: tuple = (16, 64, 128, 128)
    char_channels: tuple = (192, 256, 256)
    char_hidden: int = 256
    char_embed: int = 256
    attn_dim: int = 256
    join_adv_channels: tuple = (64, 16)
    join_cls_channels: tuple = (192, 256)

    @classmethod
    def scaled(cls, factor):
        """Same topology with every width multiplied by `factor` (min 4)."""
        base = cls()
        sw = lambda v: _scale_width(v, factor)
        return cls(
            gen_channels=tuple(sw(c) for c in base.gen_channels),
            gen_res_blocks=base.gen_res_blocks,
            style_dim=sw(base.style_dim),
            fusion_after=base.fusion_after,
            trunk_channels=tuple(sw(c) for c in base.trunk_channels),
            char_channels=tuple(sw(c) for c in base.char_channels),
            char_hidden=sw(base.char_hidden),
            char_embed=sw(base.char_embed),
            attn_dim=sw(base.attn_dim),
            join_adv_channels=tuple(sw(c) for c in base.join_adv_channels),
            join_cls_channels=tuple(sw(c) for c in base.join_cls_channels),
        )

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        kwargs = dict(d)
        for f in dataclasses.fields(cls):
            if f.name in kwargs and isinstance(kwargs[f.name], list):
                kwargs[f.name] = tuple(kwargs[f.name])
        return cls(**kwargs)


@dataclass
class TrainingConfig:
    lam: float = 0.1
    base_lr: float = 1e-4
    final_lr: float = 1e-5
    decay_start_iter: int = 300000
    decay_len_iter: int = 300000
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 128
    max_decode_len: int = 25
    join_adv: bool = True
    idt: bool = True
    idt_weight: float = 1.0
    char_content: bool = True
    char_adv: bool = True
    join_id: bool = True
    seed: int = 0
    train_width: int = 400
    interval_px: int = 0
    interval_jitter: int = 0
    checkpoint_every: int = 10000

    def __post_init__(self):
        if not 0 < self.final_lr <= self.base_lr:
            raise ConfigError("need 0 < final_lr <= base_lr")
        if self.train_width % 16 != 0:
            raise ConfigError("train_width must be a multiple of 16")
        if self.idt_weight <= 0:
            raise ConfigError("idt_weight must be positive")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


_BOOL_WORDS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def load_training_config(path):
    """Parse a UTF-8 key=value file whose keys mirror TrainingConfig fields."""
    by_name = {f.name: f for f in dataclasses.fields(TrainingConfig)}
    values = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in by_name:
                raise ConfigError(f"line {lineno}: unknown config key {key!r}")
            ftype = by_name[key].type
            try:
                if ftype == "bool" or ftype is bool:
                    values[key] = _BOOL_WORDS[raw.lower()]
                elif ftype == "int" or ftype is int:
                    values[key] = int(raw)
                else:
                    values[key] = float(raw)
            except (KeyError, ValueError):
                raise ConfigError(f"line {lineno}: bad value {raw!r} for {key}") from None
    return TrainingConfig(**values)


def lr_at(iteration, config):
    """Learning rate schedule: hold, linear ramp, hold.

    base_lr up to decay_start_iter, then linear interpolation to final_lr
    over decay_len_iter iterations, then final_lr forever.
    """
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    if iteration < config.decay_start_iter:
        return config.base_lr
    progress = (iteration - config.decay_start_iter) / config.decay_len_iter
    if progress >= 1.0:
        return config.final_lr
    return config.base_lr + (config.final_lr - config.base_lr) * progress


def identity_loss(gen, i_real, z):
    """Mean squared pixel error of G(I_real, z) against I_real itself."""
    out = gen(i_real, z)
    if out.shape != i_real.shape:
        raise ValueError(f"shape mismatch: {tuple(out.shape)} vs {tuple(i_real.shape)}")
    return F.mse_loss(out, i_real)


def set_requires_grad(module, flag):
    for p in module.parameters():
        p.requires_grad_(flag)


@dataclass
class Batch:
    i_real: torch.Tensor  # (B, 3, 64, W)
    labels: torch.Tensor  # (B, T) padded with EOS
    lengths: torch.Tensor  # (B,) true label lengths (|Y|+1)
    writer_idx: torch.Tensor  # (B,)
    i_print: torch.Tensor  # (B, 3, 64, W)
    print_labels: torch.Tensor
    print_lengths: torch.Tensor


def _pad_labels(seqs, eos):
    t = max(len(s) for s in seqs)
    out = torch.full((len(seqs), t), eos, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.tensor(s, dtype=torch.long)
    lengths = torch.tensor([len(s) for s in seqs], dtype=torch.long)
    return out, lengths


def _step_mask(lengths, t):
    return torch.arange(t)[None, :] < lengths[:, None]


class Trainer:
    """Owns the three networks, their optimizers, and the loss log."""

    def __init__(self, dataset, atlas, model_config=None, config=None,
                 lexicon=None, log_path=None):
        if len(dataset) == 0:
            raise ValueError("dataset is empty")
        self.dataset = dataset
        self.atlas = atlas
        self.model_config = model_config or ModelConfig()
        self.config = config or TrainingConfig()
        self.charset = dataset.charset
        self.writer_ids = list(dataset.writer_index)
        self.lexicon = list(lexicon) if lexicon else None
        self.log_path = log_path
        self.iteration = 0
        self.stop_requested = False
        self._print_cache = {}

        torch.manual_seed(self.config.seed)
        self.rng = np.random.default_rng(self.config.seed)

        mc = self.model_config
        self.gen = GeneratorNet(mc.gen_channels, mc.gen_res_blocks,
                                mc.style_dim, mc.fusion_after)
        self.disc = DualDiscriminator(
            self.charset.num_classes, len(self.writer_ids),
            mc.trunk_channels, mc.char_channels, mc.char_hidden,
            mc.char_embed, mc.attn_dim, mc.join_adv_channels, mc.join_cls_channels)
        self.bank = StyleBank(len(self.writer_ids), mc.style_dim)

        betas = (self.config.adam_beta1, self.config.adam_beta2)
        self.opt_g = torch.optim.Adam(self.gen.parameters(), lr=self.config.base_lr, betas=betas)
        self.opt_d = torch.optim.Adam(self.disc.parameters(), lr=self.config.base_lr, betas=betas)
        # sparse gradients so absent writers' columns get exactly zero update
        self.opt_bank = torch.optim.SparseAdam(self.bank.parameters(),
                                               lr=self.config.base_lr, betas=betas)

    def request_stop(self):
        self.stop_requested = True

    ### batch assembly

    def _render_print(self, text, interval):
        key = (text, interval)
        cached = self._print_cache.get(key)
        if cached is None:
            img = render_text(text, self.atlas, interval)
            cached = torch.from_numpy(normalize_size(img, self.config.train_width))
            self._print_cache[key] = cached
        return cached

    def make_batch(self, indices=None):
        """Assemble a training batch; samples drawn uniformly by default."""
        cfg = self.config
        if indices is None:
            indices = self.rng.integers(0, len(self.dataset), size=cfg.batch_size)
        indices = list(indices)
        if not indices:
            raise ValueError("empty batch")
        interval = cfg.interval_px
        if cfg.interval_jitter > 0:
            interval += int(self.rng.integers(0, cfg.interval_jitter + 1))

        reals, labels, writers, print_texts = [], [], [], []
        for i in indices:
            s = self.dataset.samples[int(i)]
            seq = encode_transcript(s.transcript, self.charset)
            if len(seq) > cfg.max_decode_len:
                raise ValueError(
                    f"transcript {s.transcript!r} exceeds max_decode_len={cfg.max_decode_len}")
            reals.append(torch.from_numpy(normalize_size(s.image, cfg.train_width)))
            labels.append(seq)
            writers.append(self.dataset.writer_index[s.writer_id])
            print_texts.append(s.transcript)
        if self.lexicon:
            picks = self.rng.integers(0, len(self.lexicon), size=len(indices))
            print_texts = [self.lexicon[int(p)] for p in picks]

        print_labels = [encode_transcript(t, self.charset) for t in print_texts]
        for t, seq in zip(print_texts, print_labels):
            if len(seq) > cfg.max_decode_len:
                raise ValueError(f"lexicon word {t!r} exceeds max_decode_len={cfg.max_decode_len}")
        prints = [self._render_print(t, interval) for t in print_texts]

        eos = self.charset.eos_index
        lab, lens = _pad_labels(labels, eos)
        plab, plens = _pad_labels(print_labels, eos)
        return Batch(
            i_real=torch.stack(reals),
            labels=lab, lengths=lens,
            writer_idx=torch.tensor(writers, dtype=torch.long),
            i_print=torch.stack(prints),
            print_labels=plab, print_lengths=plens,
        )

    ### alternating steps

    def _enabled(self):
        c = self.config
        return {"join_adv": c.join_adv, "idt": c.idt, "char_content": c.char_content,
                "char_adv": c.char_adv, "join_id": c.join_id}

    def d_step(self, batch):
        """Discriminator update; the generator and bank are left untouched."""
        if batch.i_real.shape[0] == 0:
            raise ValueError("empty batch")
        on = self._enabled()
        report = {}
        terms = []

        trunk_real = self.disc.trunk_features(batch.i_real)
        trunk_fake = None
        if on["char_adv"] or on["join_adv"]:
            # fakes for the D side carry no gradient into G or the bank
            with torch.no_grad():
                z = self.bank.lookup_batch(batch.writer_idx)
                i_fake = self.gen(batch.i_print, z)
            trunk_fake = self.disc.trunk_features(i_fake)

        if on["char_content"] or on["char_adv"]:
            real_logits, real_adv, _ = self.disc.char.decode(trunk_real, batch.labels)
            if on["char_content"]:
                loss = char_content_loss(real_logits, batch.labels, batch.lengths)
                report["char_content"] = loss.item()
                terms.append(loss)
            if on["char_adv"]:
                _, fake_adv, _ = self.disc.char.decode(trunk_fake, batch.print_labels)
                rmask = _step_mask(batch.lengths, real_adv.shape[1])
                fmask = _step_mask(batch.print_lengths, fake_adv.shape[1])
                loss, _ = char_adv_losses(real_adv[rmask], fake_adv[fmask], self.config.lam)
                report["char_adv"] = loss.item()
                terms.append(loss)
        if on["join_adv"]:
            loss, _ = join_adv_losses(self.disc.join.adversary(trunk_real),
                                      self.disc.join.adversary(trunk_fake))
            report["join_adv"] = loss.item()
            terms.append(loss)
        if on["join_id"]:
            loss = join_id_loss(self.disc.join.writer_logits(trunk_real), batch.writer_idx)
            report["join_id"] = loss.item()
            terms.append(loss)

        if terms:
            self.opt_d.zero_grad(set_to_none=True)
            sum(terms).backward()
            self.opt_d.step()
        return report

    def g_step(self, batch):
        """Generator and style-bank update; discriminator weights frozen."""
        if batch.i_real.shape[0] == 0:
            raise ValueError("empty batch")
        on = self._enabled()
        report = {}
        terms = []

        set_requires_grad(self.disc, False)
        try:
            z = self.bank.lookup_batch(batch.writer_idx)
            needs_fake = on["char_content"] or on["char_adv"] or on["join_adv"] or on["join_id"]
            if needs_fake:
                i_fake = self.gen(batch.i_print, z)
                trunk_fake = self.disc.trunk_features(i_fake)

            if on["char_content"] or on["char_adv"]:
                fake_logits, fake_adv, _ = self.disc.char.decode(trunk_fake, batch.print_labels)
                if on["char_content"]:
                    loss = char_content_loss(fake_logits, batch.print_labels, batch.print_lengths)
                    report["char_content"] = loss.item()
                    terms.append(loss)
                if on["char_adv"]:
                    fmask = _step_mask(batch.print_lengths, fake_adv.shape[1])
                    loss = adv_g_loss(fake_adv[fmask], self.config.lam)
                    report["char_adv"] = loss.item()
                    terms.append(loss)
            if on["join_adv"]:
                loss = adv_g_loss(self.disc.join.adversary(trunk_fake))
                report["join_adv"] = loss.item()
                terms.append(loss)
            if on["join_id"]:
                loss = join_id_loss(self.disc.join.writer_logits(trunk_fake), batch.writer_idx)
                report["join_id"] = loss.item()
                terms.append(loss)
            if on["idt"]:
                loss = self.config.idt_weight * identity_loss(self.gen, batch.i_real, z)
                report["idt"] = loss.item()
                terms.append(loss)

            if terms:
                self.opt_g.zero_grad(set_to_none=True)
                self.opt_bank.zero_grad(set_to_none=True)
                sum(terms).backward()
                self.opt_g.step()
                self.opt_bank.step()
        finally:
            set_requires_grad(self.disc, True)
        return report

    ### loop plumbing

    def _set_lr(self, lr):
        for opt in (self.opt_g, self.opt_d, self.opt_bank):
            for group in opt.param_groups:
                group["lr"] = lr

    def _log(self, iteration, d_report, g_report):
        if not self.log_path:
            return
        parts = [str(iteration)]
        parts += [f"d_{k}={v:.6f}" for k, v in d_report.items()]
        parts += [f"g_{k}={v:.6f}" for k, v in g_report.items()]
        with open(self.log_path, "a", encoding="utf-8") as f:
            f.write(" ".join(parts) + "\n")

    def train(self, iterations, checkpoint_path=None, on_iteration=None):
        """Run the alternating loop for `iterations` further iterations.

        Returns "completed", or "interrupted" when a stop was requested; in
        both cases a final checkpoint is written when a path is given.
        """
        self.gen.train()
        self.disc.train()
        target = self.iteration + iterations
        status = "completed"
        while self.iteration < target:
            self._set_lr(lr_at(self.iteration, self.config))
            batch = self.make_batch()
            d_report = self.d_step(batch)
            g_report = self.g_step(batch)
            self.iteration += 1
            self._log(self.iteration, d_report, g_report)
            if on_iteration is not None:
                on_iteration(self.iteration, d_report, g_report)
            if checkpoint_path and self.config.checkpoint_every > 0 \
                    and self.iteration % self.config.checkpoint_every == 0:
                self.save(checkpoint_path)
            if self.stop_requested:
                status = "interrupted"
                break
        if checkpoint_path:
            self.save(checkpoint_path)
        return status

    ### checkpoint container

    def save(self, path):
        meta = {
            "iteration": self.iteration,
            "charset": "".join(self.charset.symbols),
            "writer_ids": self.writer_ids,
            "model_config": self.model_config.to_dict(),
            "training_config": self.config.to_dict(),
        }
        sections = [("meta", json.dumps(meta).encode("utf-8"))]
        for name, obj in (("generator", self.gen.state_dict()),
                          ("discriminator", self.disc.state_dict()),
                          ("stylebank", self.bank.state_dict()),
                          ("opt_g", self.opt_g.state_dict()),
                          ("opt_d", self.opt_d.state_dict()),
                          ("opt_bank", self.opt_bank.state_dict())):
            buf = io.BytesIO()
            torch.save(obj, buf)
            sections.append((name, buf.getvalue()))
        write_checkpoint_file(path, sections)

    @classmethod
    def restore(cls, path, dataset, atlas, lexicon=None, log_path=None):
        """Rebuild a trainer, including optimizer state, from a checkpoint."""
        ckpt = load_checkpoint(path)
        if list(dataset.writer_index) != ckpt.writer_ids:
            raise CheckpointError("dataset writers do not match the checkpoint")
        trainer = cls(dataset, atlas, ckpt.model_config, ckpt.training_config,
                      lexicon=lexicon, log_path=log_path)
        trainer.gen.load_state_dict(ckpt.generator.state_dict())
        trainer.disc.load_state_dict(ckpt.discriminator.state_dict())
        trainer.bank.load_state_dict(ckpt.bank.state_dict())
        trainer.opt_g.load_state_dict(ckpt.optimizer_states["opt_g"])
        trainer.opt_d.load_state_dict(ckpt.optimizer_states["opt_d"])
        trainer.opt_bank.load_state_dict(ckpt.optimizer_states["opt_bank"])
        trainer.iteration = ckpt.iteration
        return trainer


def write_checkpoint_file(path, sections):
    """Atomically write a sectioned container: magic, version, sections."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(struct.pack("<I", CHECKPOINT_VERSION))
            for name, payload in sections:
                encoded = name.encode("utf-8")
                f.write(struct.pack("<I", len(encoded)))
                f.write(encoded)
                f.write(struct.pack("<Q", len(payload)))
                f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_checkpoint_sections(path):
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"not a checkpoint file (bad magic bytes): {path}")
        raw = f.read(4)
        if len(raw) < 4:
            raise CheckpointError(f"truncated checkpoint header: {path}")
        version = struct.unpack("<I", raw)[0]
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"checkpoint format version {version} not supported (reader is version {CHECKPOINT_VERSION})")
        sections = {}
        while True:
            head = f.read(4)
            if not head:
                break
            if len(head) < 4:
                raise CheckpointError(f"truncated section header: {path}")
            name_len = struct.unpack("<I", head)[0]
            name = f.read(name_len)
            size_raw = f.read(8)
            if len(name) < name_len or len(size_raw) < 8:
                raise CheckpointError(f"truncated section header: {path}")
            payload_len = struct.unpack("<Q", size_raw)[0]
            payload = f.read(payload_len)
            if len(payload) < payload_len:
                raise CheckpointError(
                    f"truncated checkpoint: section {name.decode('utf-8', 'replace')!r} is incomplete")
            sections[name.decode("utf-8")] = payload
        return sections


@dataclass
class Checkpoint:
    iteration: int
    charset: Charset
    writer_ids: list
    writer_index: dict = field(init=False)
    model_config: ModelConfig = None
    training_config: TrainingConfig = None
    generator: GeneratorNet = None
    discriminator: DualDiscriminator = None
    bank: StyleBank = None
    optimizer_states: dict = None

    def __post_init__(self):
        self.writer_index = {w: i for i, w in enumerate(self.writer_ids)}


def load_checkpoint(path):
    """Load and rebuild everything stored in a checkpoint container."""
    sections = read_checkpoint_sections(path)
    required = {"meta", "generator", "discriminator", "stylebank"}
    missing = required - set(sections)
    if missing:
        raise CheckpointError(f"checkpoint is missing sections: {sorted(missing)}")
    try:
        meta = json.loads(sections["meta"].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable checkpoint metadata: {e}") from None

    charset = Charset(tuple(meta["charset"]))
    mc = ModelConfig.from_dict(meta["model_config"])
    tc = TrainingConfig.from_dict(meta["training_config"])
    gen = GeneratorNet(mc.gen_channels, mc.gen_res_blocks, mc.style_dim, mc.fusion_after)
    disc = DualDiscriminator(charset.num_classes, len(meta["writer_ids"]),
                             mc.trunk_channels, mc.char_channels, mc.char_hidden,
                             mc.char_embed, mc.attn_dim,
                             mc.join_adv_channels, mc.join_cls_channels)
    bank = StyleBank(len(meta["writer_ids"]), mc.style_dim)

    def load_state(name):
        return torch.load(io.BytesIO(sections[name]), map_location="cpu", weights_only=True)

    gen.load_state_dict(load_state("generator"))
    disc.load_state_dict(load_state("discriminator"))
    bank.load_state_dict(load_state("stylebank"))
    gen.eval()
    disc.eval()

    opt_states = {}
    for name in ("opt_g", "opt_d", "opt_bank"):
        if name in sections:
            opt_states[name] = load_state(name)

    return Checkpoint(
        iteration=meta["iteration"], charset=charset, writer_ids=meta["writer_ids"],
        model_config=mc, training_config=tc, generator=gen, discriminator=disc,
        bank=bank, optimizer_states=opt_states,
    )
