"""Dual discriminators with a shared convolutional trunk.

The trunk is four conv/instance-norm/PReLU/average-pool stages. On top of
it sit two heads: a separated-character discriminator (attention decoder
over the feature grid with content and adversarial outputs per step) and a
cursive-join discriminator (patch adversary plus a writer classifier).
Least-squares adversarial losses and the content/writer likelihood losses
live here as plain functions.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import IMAGE_HEIGHT
from .generator import init_weights

TRUNK_CHANNELS = (16, 64, 128, 128)
CHAR_CHANNELS = (192, 256, 256)
JOIN_ADV_CHANNELS = (64, 16)
JOIN_CLS_CHANNELS = (192, 256)
CHAR_ADV_WEIGHT = 0.1


def _conv_in_prelu(cin, cout):
    return [nn.Conv2d(cin, cout, 3, 1, 1), nn.InstanceNorm2d(cout, affine=True), nn.PReLU()]


def build_trunk(channels=TRUNK_CHANNELS):
    """Shared feature extractor: 3x64xW -> Cx4x(W/16)."""
    layers = []
    cin = 3
    for cout in channels:
        layers += _conv_in_prelu(cin, cout)
        layers.append(nn.AvgPool2d(2))
        cin = cout
    return nn.Sequential(*layers)


class CharHead(nn.Module):
    """Attention decoder over the feature grid, one step per character.

    Each step attends over all grid positions (weights softmax-normalized,
    so they sum to 1), feeds the attended feature and the previous label
    embedding to a GRU cell, and emits class logits plus a scalar
    adversarial score. Teacher forcing uses a learned start token at step 0.
    """

    def __init__(self, num_classes, in_channels=TRUNK_CHANNELS[-1],
                 channels=CHAR_CHANNELS, hidden=256, embed=256, attn_dim=256):
        super().__init__()
        self.num_classes = num_classes
        self.start_token = num_classes  # extra embedding row
        c1, c2, c3 = channels
        self.extend = nn.Sequential(
            *_conv_in_prelu(in_channels, c1),
            nn.AvgPool2d((2, 1)),
            *_conv_in_prelu(c1, c2),
            *_conv_in_prelu(c2, c3),
        )
        self.embed = nn.Embedding(num_classes + 1, embed)
        self.gru = nn.GRUCell(embed + c3, hidden)
        self.proj_h = nn.Conv2d(c3, attn_dim, 1)
        self.proj_s = nn.Linear(hidden, attn_dim)
        self.score = nn.Conv2d(attn_dim, 1, 1, bias=False)
        self.w_y = nn.Linear(hidden, num_classes)
        self.w_adv = nn.Linear(hidden, 1)
        self.hidden = hidden

    def _attend(self, feats, proj_feats, state):
        b, c, h, w = feats.shape
        e = self.score(torch.tanh(proj_feats + self.proj_s(state)[:, :, None, None]))
        alpha = F.softmax(e.view(b, h * w), dim=1)
        attended = torch.bmm(feats.view(b, c, h * w), alpha.unsqueeze(2)).squeeze(2)
        return attended, alpha.view(b, h, w)

    def _step(self, prev_label, feats, proj_feats, state):
        attended, alpha = self._attend(feats, proj_feats, state)
        state = self.gru(torch.cat([self.embed(prev_label), attended], dim=1), state)
        return state, self.w_y(state), self.w_adv(state).squeeze(1), alpha

    def decode(self, trunk_feats, teacher_labels):
        """Teacher-forced decode; labels are (B, T) with EOS last.

        Returns per-step class logits (B, T, num_classes), adversarial
        scores (B, T), and attention maps (B, T, h, w).
        """
        if teacher_labels.dim() != 2 or teacher_labels.shape[1] == 0:
            raise ValueError("teacher labels must be a nonempty (B, T) sequence")
        if (teacher_labels[:, -1] != self.num_classes - 1).any():
            raise ValueError("teacher label sequences must end with EOS")
        feats = self.extend(trunk_feats)
        proj_feats = self.proj_h(feats)
        b, t_max = teacher_labels.shape
        state = trunk_feats.new_zeros(b, self.hidden)
        start = torch.full((b,), self.start_token, dtype=torch.long, device=trunk_feats.device)
        logits, adv, maps = [], [], []
        for t in range(t_max):
            prev = start if t == 0 else teacher_labels[:, t - 1]
            state, step_logits, step_adv, alpha = self._step(prev, feats, proj_feats, state)
            logits.append(step_logits)
            adv.append(step_adv)
            maps.append(alpha)
        return torch.stack(logits, 1), torch.stack(adv, 1), torch.stack(maps, 1)

    @torch.no_grad()
    def read(self, trunk_feats, max_steps):
        """Free-running greedy decode, feeding back argmax predictions."""
        feats = self.extend(trunk_feats)
        proj_feats = self.proj_h(feats)
        b = trunk_feats.shape[0]
        state = trunk_feats.new_zeros(b, self.hidden)
        prev = torch.full((b,), self.start_token, dtype=torch.long, device=trunk_feats.device)
        eos = self.num_classes - 1
        logits = []
        for _ in range(max_steps):
            state, step_logits, _, _ = self._step(prev, feats, proj_feats, state)
            logits.append(step_logits)
            prev = step_logits.argmax(dim=1)
            if bool((prev == eos).all()):
                break
        return torch.stack(logits, 1)


class JoinHead(nn.Module):
    """Patch adversary and writer classifier over the shared trunk."""

    def __init__(self, num_writers, in_channels=TRUNK_CHANNELS[-1],
                 adv_channels=JOIN_ADV_CHANNELS, cls_channels=JOIN_CLS_CHANNELS):
        super().__init__()
        self.num_writers = num_writers
        a1, a2 = adv_channels
        # ceil-mode pools so 25 -> 13 -> 7 columns on the 400-wide input
        self.adversary_net = nn.Sequential(
            *_conv_in_prelu(in_channels, a1),
            nn.AvgPool2d(2, ceil_mode=True),
            *_conv_in_prelu(a1, a2),
            nn.Conv2d(a2, 1, 3, 1, 1),
        )
        s1, s2 = cls_channels
        self.classifier_net = nn.Sequential(
            *_conv_in_prelu(in_channels, s1),
            nn.AvgPool2d(2, ceil_mode=True),
            *_conv_in_prelu(s1, s2),
            nn.AvgPool2d(2, ceil_mode=True),
            nn.Conv2d(s2, num_writers, 3, 1, 1),
            nn.AdaptiveAvgPool2d(1),
        )

    def adversary(self, trunk_feats):
        """Per-patch scores, (B, 1, 2, 13) on a width-400 input."""
        return self.adversary_net(trunk_feats)

    def writer_logits(self, trunk_feats):
        """Writer-identity logits, (B, num_writers)."""
        return self.classifier_net(trunk_feats).flatten(1)


class DualDiscriminator(nn.Module):
    """Shared trunk with the character and cursive-join heads on top.

    Pass an image through `trunk_features` once and feed the result to the
    head methods so both heads consume the identical activations.
    """

    def __init__(self, num_classes, num_writers,
                 trunk_channels=TRUNK_CHANNELS,
                 char_channels=CHAR_CHANNELS, char_hidden=256,
                 char_embed=256, attn_dim=256,
                 join_adv_channels=JOIN_ADV_CHANNELS,
                 join_cls_channels=JOIN_CLS_CHANNELS):
        super().__init__()
        self.trunk = build_trunk(trunk_channels)
        self.char = CharHead(num_classes, trunk_channels[-1], char_channels,
                             char_hidden, char_embed, attn_dim)
        self.join = JoinHead(num_writers, trunk_channels[-1],
                             join_adv_channels, join_cls_channels)
        self.apply(init_weights)

    def trunk_features(self, image):
        if image.dim() != 4 or image.shape[1] != 3 or image.shape[2] != IMAGE_HEIGHT:
            raise ValueError(f"expected (B, 3, {IMAGE_HEIGHT}, W) input, got {tuple(image.shape)}")
        if image.shape[3] % 16 != 0:
            raise ValueError(f"input width must be a multiple of 16, got {image.shape[3]}")
        return self.trunk(image)

    def char_decode(self, image, teacher_labels):
        return self.char.decode(self.trunk_features(image), teacher_labels)

    def char_read(self, image, max_steps=25):
        return self.char.read(self.trunk_features(image), max_steps)

    def join_adv(self, image):
        return self.join.adversary(self.trunk_features(image))

    def join_id(self, image):
        return self.join.writer_logits(self.trunk_features(image))


### loss functions


def char_content_loss(step_logits, labels, lengths=None):
    """Sum over decode steps of -log p(label_t), averaged over the batch.

    `lengths` masks out steps past each sample's own EOS when sequences in
    the batch are padded to a common length.
    """
    if step_logits.shape[:2] != labels.shape:
        raise ValueError(
            f"step count mismatch: logits {tuple(step_logits.shape[:2])}, labels {tuple(labels.shape)}"
        )
    b, t = labels.shape
    nll = F.cross_entropy(step_logits.reshape(b * t, -1), labels.reshape(b * t),
                          reduction="none").view(b, t)
    if lengths is not None:
        mask = torch.arange(t, device=labels.device)[None, :] < torch.as_tensor(
            lengths, device=labels.device)[:, None]
        nll = nll * mask
    return nll.sum(dim=1).mean()


def adv_losses(real_scores, fake_scores, weight=1.0):
    """Least-squares adversarial pair.

    d_loss = weight * (mean[fake^2] + mean[(1 - real)^2])
    g_loss = weight * mean[(1 - fake)^2]
    """
    d_loss = weight * (fake_scores.pow(2).mean() + (1.0 - real_scores).pow(2).mean())
    g_loss = weight * (1.0 - fake_scores).pow(2).mean()
    return d_loss, g_loss


def adv_g_loss(fake_scores, weight=1.0):
    """Generator side alone: weight * mean[(1 - fake)^2]."""
    return weight * (1.0 - fake_scores).pow(2).mean()


def char_adv_losses(real_scores, fake_scores, weight=CHAR_ADV_WEIGHT):
    """Character-level adversarial pair; the 0.1 weight applies to both sides."""
    return adv_losses(real_scores, fake_scores, weight)


def join_adv_losses(real_grid, fake_grid):
    """Join-level adversarial pair, mean over the patch grid, unit weight."""
    return adv_losses(real_grid, fake_grid, 1.0)


def join_id_loss(writer_logits, writer_indices):
    """-log p(writer), averaged over the batch."""
    idx = torch.as_tensor(writer_indices, dtype=torch.long, device=writer_logits.device)
    if idx.dim() == 0:
        idx = idx.unsqueeze(0)
    n = writer_logits.shape[1]
    if idx.numel() and (idx.min() < 0 or idx.max() >= n):
        raise ValueError(f"writer index out of range 0..{n - 1}")
    return F.cross_entropy(writer_logits, idx)
