"""Train the sketch-to-face harness for a handful of steps.

Pairs are synthesized from a frozen random-weight generator: each face is
reduced to a line drawing, and the encoder stack learns to go back. A few
dozen steps on CPU is enough to see the loss move; real runs use photos
and tens of thousands of steps.
"""

from pathlib import Path

import torch

from varigan import (
    Generator,
    GeneratorSpec,
    PairedSample,
    TaskSpec,
    compose_style,
    refactor,
    save_image,
    sketch_transform,
    synthesize_pairs,
    train_task,
)

out = Path(__file__).parent / "out" / "sketch"
out.mkdir(parents=True, exist_ok=True)
torch.manual_seed(0)

g = Generator(GeneratorSpec.desk(256), seed=9)
g.update_mean_latent(n=256, seed=9)

# faces at 96px and their synthetic sketches; the 256-spec generator maps
# a 96px encoder input back to 96px, so sources and targets line up
faces = synthesize_pairs(g, None, n=24, seed=100, image_size=96)
pairs = [PairedSample(sketch_transform(p.target), p.target) for p in faces]
save_image(out / "sketch_example.png", pairs[0].source)
save_image(out / "face_example.png", pairs[0].target)

task = TaskSpec.default("sketch")
result = train_task(task, g, pairs, steps=40, batch_size=2, seed=0,
                    log_path=out / "history.csv")
totals = result.totals
first = sum(totals[:5]) / 5
last = sum(totals[-5:]) / 5
print(f"sketch harness, 40 steps: mean total {first:.3f} -> {last:.3f} "
      f"(per-step values in history.csv)")

# run the trained stack on a held-out sketch; style rows past the split
# come from a reference face, so it also picks that face's colors
heldout = synthesize_pairs(g, None, n=2, seed=999, image_size=96)
sketch = sketch_transform(heldout[0].target).unsqueeze(0)
reference = heldout[1].target.unsqueeze(0)
gex = refactor(g)
with torch.no_grad():
    xt = result.translator(sketch)
    f, skips = result.encoder.encode_feature(xt, task.depth)
    w = compose_style(result.encoder.encode_style(xt),
                      result.encoder.encode_style(reference),
                      task.style_split)
    y = gex(f, w, skips=skips, fusion=result.fusion)
save_image(out / "heldout_sketch.png", sketch[0])
save_image(out / "heldout_output.png", y[0])
print(f"wrote examples and history to {out}")
