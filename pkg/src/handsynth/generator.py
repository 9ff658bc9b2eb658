"""Encoder-residual-decoder generator for printed-to-handwritten transfer.

The encoder halves the spatial dims four times (3x64xW -> Cx4x(W/16)), six
residual blocks process the bottleneck, the writer style vector is fused in
after the third block, and a mirrored transposed-conv decoder restores the
input size with a Tanh output in [-1, 1].
"""

import torch
import torch.nn as nn

from .core import IMAGE_HEIGHT

GEN_CHANNELS = (16, 32, 64, 128, 256)
GEN_RES_BLOCKS = 6


def init_weights(module):
    """Conv kernels ~ N(0, 0.02), zero biases, unit normalization gains."""
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
        nn.init.normal_(module.weight, 0.0, 0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, (nn.BatchNorm2d, nn.InstanceNorm2d)):
        if module.weight is not None:
            nn.init.ones_(module.weight)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


class ResBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(channels, channels, 3, 1, 1),
            nn.BatchNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, 1, 1),
            nn.BatchNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class GeneratorNet(nn.Module):
    def __init__(self, channels=GEN_CHANNELS, res_blocks=GEN_RES_BLOCKS,
                 style_dim=256, fusion_after=3):
        super().__init__()
        if len(channels) != 5:
            raise ValueError("generator needs 5 encoder channel widths")
        if not 0 < fusion_after <= res_blocks:
            raise ValueError("fusion_after must be in 1..res_blocks")
        self.style_dim = style_dim
        self.fusion_after = fusion_after
        c1, c2, c3, c4, c5 = channels

        ### encoder: one stride-1 stem then four stride-2 reductions
        def down(cin, cout, k, s, p):
            return nn.Sequential(
                nn.Conv2d(cin, cout, k, s, p),
                nn.BatchNorm2d(cout),
                nn.ReLU(inplace=True),
            )

        self.encoder = nn.Sequential(
            down(3, c1, 5, 1, 2),
            down(c1, c2, 3, 2, 1),
            down(c2, c3, 3, 2, 1),
            down(c3, c4, 3, 2, 1),
            down(c4, c5, 3, 2, 1),
        )

        self.res_pre = nn.Sequential(*[ResBlock(c5) for _ in range(fusion_after)])
        # broadcast-concat the style vector, then project back to c5 maps
        self.fuse = nn.Conv2d(c5 + style_dim, c5, 1, 1, 0)
        self.res_post = nn.Sequential(*[ResBlock(c5) for _ in range(res_blocks - fusion_after)])

        ### decoder: four exact-doubling deconvs, then a shape-preserving head
        def up(cin, cout):
            return nn.Sequential(
                nn.ConvTranspose2d(cin, cout, 3, 2, 1, output_padding=1),
                nn.BatchNorm2d(cout),
                nn.ReLU(inplace=True),
            )

        self.decoder = nn.Sequential(up(c5, c4), up(c4, c3), up(c3, c2), up(c2, c1))
        self.head = nn.Sequential(nn.Conv2d(c1, 3, 5, 1, 2), nn.Tanh())

        self.apply(init_weights)

    def g_encode(self, image):
        """Encode a (B, 3, 64, W) batch to (B, C, 4, W/16) features."""
        if image.dim() != 4 or image.shape[1] != 3 or image.shape[2] != IMAGE_HEIGHT:
            raise ValueError(f"expected (B, 3, {IMAGE_HEIGHT}, W) input, got {tuple(image.shape)}")
        if image.shape[3] % 16 != 0:
            raise ValueError(f"input width must be a multiple of 16, got {image.shape[3]}")
        return self.encoder(image)

    def inject_style(self, features, z):
        """Fuse a style vector into a feature volume, preserving its shape."""
        if z.dim() == 1:
            z = z.unsqueeze(0).expand(features.shape[0], -1)
        if z.shape[1] != self.style_dim:
            raise ValueError(f"style vector has {z.shape[1]} dims, expected {self.style_dim}")
        tiled = z[:, :, None, None].expand(-1, -1, features.shape[2], features.shape[3])
        return self.fuse(torch.cat([features, tiled], dim=1))

    def forward(self, i_print, z):
        h = self.g_encode(i_print)
        h = self.res_pre(h)
        h = self.inject_style(h, z)
        h = self.res_post(h)
        return self.head(self.decoder(h))
