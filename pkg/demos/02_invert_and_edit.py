"""Two-step inversion of a synthesized portrait, then edits on the result.

The target comes from the generator itself so the demo needs no data or
pretrained weights. Step I would normally be an encoder pass; here we
start Step II from a deliberately wrong init to watch the optimizer pull
the reconstruction in, then reuse the recovered latents for a latent-space
edit and two feature-space moves.
"""

from pathlib import Path

import torch

from varigan import (
    Generator,
    GeneratorSpec,
    InversionResult,
    edit_latent,
    invert_step2,
    refactor,
    rotate_feature,
    save_image,
    shift_feature,
)

out = Path(__file__).parent / "out" / "invert"
out.mkdir(parents=True, exist_ok=True)
torch.manual_seed(0)

g = Generator(GeneratorSpec.desk(256), seed=5)
g.update_mean_latent(n=256, seed=5)
gex = refactor(g)
spec = g.spec

# ground-truth latents and the image we pretend someone handed us
w_true = g.map_latent(torch.randn(1, spec.latent_dim))
f_true = 0.1 * torch.randn(1, spec.channels(4), 16, 16)
with torch.no_grad():
    target = gex(f_true, w_true)
save_image(out / "target.png", target[0])

# start from the average latent and random features
w0 = g.w_avg.view(1, 1, -1).expand(1, spec.num_style_layers, -1)
f0 = torch.randn_like(f_true)
result = invert_step2(gex, target, InversionResult(w0, f0), iterations=150)
print(f"optimization: loss {result.trace[0]:.4f} -> {min(result.trace):.4f} "
      f"over {result.iterations} iterations")
with torch.no_grad():
    recon = gex(result.f, result.w)
save_image(out / "reconstruction.png", recon[0])

# a latent edit: push all style rows along a random unit direction
v = torch.randn(spec.latent_dim)
v = v / v.norm()
with torch.no_grad():
    for scale in (-2.0, 2.0):
        y = gex(result.f, edit_latent(result.w, v, scale))
        save_image(out / f"edit_{scale:+.0f}.png", y[0])

# feature-space moves: translation and rotation act on f directly and
# carry the whole frame with them, background included
with torch.no_grad():
    y = gex(shift_feature(result.f, 0, 3), result.w)
    save_image(out / "shifted.png", y[0])
    y = gex(rotate_feature(result.f, 15.0), result.w)
    save_image(out / "rotated.png", y[0])
print(f"wrote target, reconstruction and 4 edits to {out}")
