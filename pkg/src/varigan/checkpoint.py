"""Checkpoint archives and weight import.

Archives are .npz tensor maps with a JSON metadata sidecar. Generator keys
follow a documented scheme:

    mapping/dense{i}/{weight,bias}            i = 0..7
    mapping/w_avg
    synthesis/constant
    synthesis/layer{k}/{weight,bias,noise_scale,
                        style_affine/weight,style_affine/bias}
    synthesis/rgb{j}/{weight,bias,style_affine/weight,style_affine/bias}

with layer numbering layer1 = first conv, layer{2l}/layer{2l+1} = the up
and plain conv of level l, rgb0 = the 4px RGB head. Encoder-side modules are
stored under their own namespace as plain state dict keys.

External checkpoints in other layouts are imported through a rule table
(JSON data, not code): each rule is a source-key regex, a target template,
and an optional tensor transform. Shapes are validated strictly.
"""

from __future__ import annotations

import hashlib
import json
import re
from importlib import resources
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError
from .synthesis import Generator, GeneratorSpec

__all__ = [
    "save_archive",
    "load_archive",
    "parameter_checksum",
    "export_generator",
    "save_generator",
    "load_generator",
    "save_module",
    "load_module_state",
    "import_external",
    "load_mapping_table",
]

FORMAT_NAME = "varigan-checkpoint"
FORMAT_VERSION = 1


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def save_archive(path, tensors: dict[str, torch.Tensor], meta: dict) -> Path:
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(".npz")
    arrays = {k: v.detach().cpu().numpy() for k, v in tensors.items()}
    np.savez(path, **arrays)
    meta = dict(meta)
    meta.setdefault("format", FORMAT_NAME)
    meta.setdefault("version", FORMAT_VERSION)
    _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_archive(path) -> tuple[dict[str, torch.Tensor], dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no such checkpoint: {path}")
    with np.load(path) as z:
        tensors = {k: torch.from_numpy(np.array(z[k])) for k in z.files}
    side = _sidecar(path)
    if not side.exists():
        raise CheckpointError(f"missing metadata sidecar: {side}")
    meta = json.loads(side.read_text())
    if meta.get("format") != FORMAT_NAME:
        raise CheckpointError(f"{side}: not a {FORMAT_NAME} sidecar")
    return tensors, meta


def parameter_checksum(module: torch.nn.Module) -> str:
    """sha256 over all named parameters (names, shapes and values)."""
    h = hashlib.sha256()
    for name, p in sorted(module.named_parameters(), key=lambda kv: kv[0]):
        h.update(name.encode())
        h.update(str(tuple(p.shape)).encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def _generator_key_map(g: Generator) -> dict[str, str]:
    """archive key -> attribute path into g.state_dict()."""
    keys = {}
    for i in range(len(g.mapping.layers)):
        keys[f"mapping/dense{i}/weight"] = f"mapping.layers.{i}.weight"
        keys[f"mapping/dense{i}/bias"] = f"mapping.layers.{i}.bias"
    keys["mapping/w_avg"] = "w_avg"
    keys["synthesis/constant"] = "constant"

    def conv_keys(tag: str, attr: str):
        keys[f"synthesis/{tag}/weight"] = f"{attr}.weight"
        keys[f"synthesis/{tag}/bias"] = f"{attr}.bias"
        keys[f"synthesis/{tag}/noise_scale"] = f"{attr}.noise_scale"
        keys[f"synthesis/{tag}/style_affine/weight"] = f"{attr}.affine.weight"
        keys[f"synthesis/{tag}/style_affine/bias"] = f"{attr}.affine.bias"

    def rgb_keys(tag: str, attr: str):
        keys[f"synthesis/{tag}/weight"] = f"{attr}.weight"
        keys[f"synthesis/{tag}/bias"] = f"{attr}.bias"
        keys[f"synthesis/{tag}/style_affine/weight"] = f"{attr}.affine.weight"
        keys[f"synthesis/{tag}/style_affine/bias"] = f"{attr}.affine.bias"

    conv_keys("layer1", "conv1")
    rgb_keys("rgb0", "to_rgb1")
    for l in range(1, len(g.convs) + 1):
        conv_keys(f"layer{2 * l}", f"up_convs.{l - 1}")
        conv_keys(f"layer{2 * l + 1}", f"convs.{l - 1}")
        rgb_keys(f"rgb{l}", f"to_rgbs.{l - 1}")
    return keys


def export_generator(g: Generator) -> tuple[dict[str, torch.Tensor], dict]:
    sd = g.state_dict()
    tensors = {ak: sd[sk] for ak, sk in _generator_key_map(g).items()}
    meta = {
        "kind": "generator",
        "spec": g.spec.to_dict(),
        "checksum": parameter_checksum(g),
    }
    return tensors, meta


def save_generator(path, g: Generator) -> Path:
    tensors, meta = export_generator(g)
    return save_archive(path, tensors, meta)


def _fill_generator(g: Generator, tensors: dict[str, torch.Tensor], origin: str):
    sd = g.state_dict()
    new = {}
    for ak, sk in _generator_key_map(g).items():
        if ak not in tensors:
            raise CheckpointError(f"{origin}: missing tensor {ak!r}")
        t = tensors[ak]
        if tuple(t.shape) != tuple(sd[sk].shape):
            raise CheckpointError(
                f"{origin}: shape mismatch for {ak!r}: "
                f"checkpoint {tuple(t.shape)}, model {tuple(sd[sk].shape)}")
        new[sk] = t.to(sd[sk].dtype)
    sd.update(new)
    g.load_state_dict(sd)


def load_generator(path, spec: GeneratorSpec | None = None) -> Generator:
    tensors, meta = load_archive(path)
    if meta.get("kind") != "generator":
        raise CheckpointError(f"{path}: expected a generator checkpoint, got {meta.get('kind')!r}")
    if spec is None:
        spec = GeneratorSpec.from_dict(meta["spec"])
    g = Generator(spec, seed=0)
    _fill_generator(g, tensors, str(path))
    return g


def save_module(path, module: torch.nn.Module, kind: str, extra_meta: dict | None = None) -> Path:
    """Plain state-dict dump under a namespace, for encoder-side modules."""
    tensors = {f"{kind}/{k}": v for k, v in module.state_dict().items()}
    meta = {"kind": kind, "checksum": parameter_checksum(module)}
    if extra_meta:
        meta.update(extra_meta)
    return save_archive(path, tensors, meta)


def load_module_state(path, module: torch.nn.Module, kind: str) -> dict:
    tensors, meta = load_archive(path)
    if meta.get("kind") != kind:
        raise CheckpointError(f"{path}: expected kind {kind!r}, got {meta.get('kind')!r}")
    prefix = f"{kind}/"
    sd = {}
    for k, v in tensors.items():
        if not k.startswith(prefix):
            raise CheckpointError(f"{path}: unexpected key {k!r}")
        sd[k[len(prefix):]] = v
    try:
        module.load_state_dict(sd, strict=True)
    except RuntimeError as e:
        raise CheckpointError(f"{path}: {e}") from e
    return meta


# --- external layout import -------------------------------------------------

_TRANSFORMS = {
    None: lambda t: t,
    "none": lambda t: t,
    "squeeze0": lambda t: t.squeeze(0),
    "flatten": lambda t: t.reshape(-1),
}


def load_mapping_table(name_or_path="rosinality-stylegan2") -> dict:
    p = Path(str(name_or_path))
    if p.suffix == ".json" and p.exists():
        return json.loads(p.read_text())
    data = resources.files("varigan").joinpath(f"data/{name_or_path}.json")
    try:
        return json.loads(data.read_text())
    except FileNotFoundError:
        raise CheckpointError(f"unknown mapping table {name_or_path!r}")


def _eval_target(template: str, groups: tuple[str, ...]) -> str:
    """Fill {expr} holes where expr uses g1..gN as integers."""
    env = {f"g{i + 1}": int(v) for i, v in enumerate(groups) if v is not None}

    def sub(m):
        return str(eval(m.group(1), {"__builtins__": {}}, env))  # arithmetic on ints only

    return re.sub(r"\{([^}]+)\}", sub, template)


def import_external(state: dict[str, torch.Tensor], table: dict,
                    target: Generator, origin: str = "<external>") -> Generator:
    """Map an external state dict onto a generator via a rule table.

    Every external key must either match a rule or an ignore pattern, and
    every archive key of the target must end up filled (optional rules may
    leave their target at the built value). Shape mismatches name the key.
    """
    ignore = [re.compile(p) for p in table.get("ignore", [])]
    rules = [(re.compile(r["source"]), r) for r in table.get("rules", [])]
    mapped: dict[str, torch.Tensor] = {}
    for key, value in state.items():
        if any(p.fullmatch(key) for p in ignore):
            continue
        for pat, rule in rules:
            m = pat.fullmatch(key)
            if m:
                tgt = _eval_target(rule["target"], m.groups())
                if tgt in mapped:
                    raise CheckpointError(f"{origin}: {key!r} maps to already-filled {tgt!r}")
                t = value if isinstance(value, torch.Tensor) else torch.as_tensor(value)
                mapped[tgt] = _TRANSFORMS[rule.get("transform")](t)
                break
        else:
            raise CheckpointError(f"{origin}: no rule matches key {key!r}")
    optional = set()
    for _, rule in rules:
        if rule.get("optional"):
            optional.add(rule["target"])
    sd = target.state_dict()
    key_map = _generator_key_map(target)
    for ak in key_map:
        if ak not in mapped:
            if any(ak == _eval_target(t, ()) for t in optional if "{" not in t):
                mapped[ak] = sd[key_map[ak]]
            else:
                raise CheckpointError(f"{origin}: missing tensor {ak!r}")
    _fill_generator(target, mapped, origin)
    return target
