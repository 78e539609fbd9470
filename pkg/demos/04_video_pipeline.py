"""Edit a short clip frame by frame and check identity drift.

Frames are synthesized by sliding the first-layer features sideways, which
stands in for camera motion. Every frame is encoded at full skip depth,
nudged along an editing direction, and re-synthesized; the identity
metrics then compare the edited clip against the original and against its
own first frame.
"""

from pathlib import Path

import torch

from varigan import (
    Encoder,
    EncoderSpec,
    FusionStack,
    Generator,
    GeneratorSpec,
    NoiseField,
    edit_latent,
    metric_id_consistency,
    metric_id_maintenance,
    refactor,
    save_frames,
    shift_feature,
)

out = Path(__file__).parent / "out" / "video"
out.mkdir(parents=True, exist_ok=True)
torch.manual_seed(0)

g = Generator(GeneratorSpec.desk(256), seed=3)
g.update_mean_latent(n=256, seed=3)
gex = refactor(g)
spec = g.spec
noise = NoiseField.fixed(3)

# a 6-frame clip: the same scene drifting 1 feature px per frame
w = g.map_latent(torch.randn(1, spec.latent_dim))
f = 0.1 * torch.randn(1, spec.channels(4), 16, 16)
with torch.no_grad():
    clip = torch.cat([gex(shift_feature(f, 0, t), w, noise=noise)
                      for t in range(6)])
save_frames(out / "original", clip)

# per-frame pipeline: encode with all skips, edit, synthesize
espec = EncoderSpec.desk(spec)
encoder = Encoder(espec)
encoder.set_latent_offset(g.w_avg)
fusion = FusionStack(spec, espec)
depth = 13
v = torch.randn(spec.latent_dim)
v = 1.5 * v / v.norm()
edited = []
with torch.no_grad():
    for frame in clip:
        x = frame.unsqueeze(0)
        fe, skips = encoder.encode_feature(x, depth)
        we = edit_latent(encoder.encode_style(x), v, 1.0)
        edited.append(gex(fe, we, noise=noise, skips=skips, fusion=fusion))
edited = torch.cat(edited)
save_frames(out / "edited", edited)

# untrained weights give weak reconstructions; the metrics still behave:
# consistency compares frames pairwise, maintenance tracks the first frame
print(f"identity consistency (edited vs original): "
      f"{metric_id_consistency(edited, clip):.4f}")
print(f"identity maintenance (within edited clip): "
      f"{metric_id_maintenance(edited):.4f}")
print(f"wrote {clip.shape[0]}+{edited.shape[0]} frames to {out}")
