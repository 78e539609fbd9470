"""The baseline generator and its free-size rewrite are the same network.

Builds a small random-weight generator, rewrites it, and measures three
things: output agreement when the learned constant is fed back in, the
output size law for non-square feature inputs, and how far a one-pixel
feature shift moves the output.
"""

import torch

from varigan import (
    Generator,
    GeneratorSpec,
    receptive_radius,
    refactor,
    upsample_constant,
)

torch.manual_seed(0)

spec = GeneratorSpec.desk(256)
g = Generator(spec, seed=7)
gex = refactor(g)
print(f"spec: {spec.output_resolution}px output, upscale factor "
      f"M={spec.upscale_factor}, {spec.num_style_layers} style rows")

# same latent through both forms; f0 is the constant lifted to 32x32
z = torch.randn(2, spec.latent_dim)
w = g.map_latent(z)
f0 = upsample_constant(g).expand(2, -1, -1, -1)
with torch.no_grad():
    base = g.synthesize(w)
    lifted = gex(f0, w)
print(f"baseline vs rewrite, max abs deviation: {(base - lifted).abs().max():.2e}")

# free-size inputs: (h, w) features come out at (M*h, M*w)
for h, wd in ((32, 32), (40, 56), (64, 48)):
    f = torch.randn(1, spec.channels(4), h, wd)
    with torch.no_grad():
        y = gex(f, w[:1])
    print(f"f {h}x{wd} -> output {y.shape[-2]}x{y.shape[-1]}")

# shifting f by one pixel shifts the output by M pixels; away from the
# border the two images agree to float precision (the border needs room
# for the receptive radius, so use a roomier input)
f = torch.randn(1, spec.channels(4), 96, 96)
with torch.no_grad():
    a = gex(f, w[:1])
    b = gex(torch.roll(f, 1, dims=3), w[:1])
m = spec.upscale_factor
back = torch.roll(b, -m, dims=3)
margin = (receptive_radius(spec) + 1) * m
inner = (a - back)[..., margin:-margin, margin:-margin]
print(f"1px feature shift, interior deviation after shifting back "
      f"{m}px: {inner.abs().max():.2e}")
