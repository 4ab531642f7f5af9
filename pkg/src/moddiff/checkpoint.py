"""Portable binary checkpoints for guidance and policy modules.

Layout: magic + version + header (kind, dims, seed, step counter,
kind-specific hyperparameters, schedule betas, per-subnetwork layer specs)
+ flat little-endian float64 parameter payload (per layer: weight matrix
row-major, then bias; subnetworks in declared order) + crc32.

Save -> load round trips are bit-identical. Composition legality is decided
by (state_dim, action_dim) equality alone, never by kind.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from . import nn
from .errors import CheckpointFormatError, CheckpointVersionError, InvalidInputError
from .guidance import DoubleQ, IqlGuidance
from .policy import DiffusionPolicy
from .schedule import schedule_from_betas

MAGIC = b"MODCKPT1"
FORMAT_VERSION = 1

KIND_CODES = {
    "guidance_double_q": 0,
    "guidance_iql": 1,
    "policy_dql": 2,
    "policy_idql": 3,
    "policy_edp": 4,
}
CODE_KINDS = {v: k for k, v in KIND_CODES.items()}
GUIDANCE_KINDS = ("guidance_double_q", "guidance_iql")
POLICY_KINDS = ("policy_dql", "policy_idql", "policy_edp")

_HIDDEN_CODES = {"relu": 0, "tanh": 1}
_OUTPUT_CODES = {"identity": 0, "tanh": 1}
_HIDDEN_NAMES = {v: k for k, v in _HIDDEN_CODES.items()}
_OUTPUT_NAMES = {v: k for k, v in _OUTPUT_CODES.items()}


def checkpoint_kind(module) -> str:
    if isinstance(module, DoubleQ):
        return "guidance_double_q"
    if isinstance(module, IqlGuidance):
        return "guidance_iql"
    if isinstance(module, DiffusionPolicy):
        return f"policy_{module.algorithm}"
    raise InvalidInputError(f"cannot checkpoint object of type {type(module).__name__}")


def _subnets(module) -> list[nn.Mlp]:
    if isinstance(module, DoubleQ):
        return [module.q1, module.q2, module.q1_target, module.q2_target]
    if isinstance(module, IqlGuidance):
        return [module.q, module.v]
    return [module.eps_net]


def _hypers(module) -> list[float]:
    if isinstance(module, DoubleQ):
        return [module.gamma, module.tau_ema]
    if isinstance(module, IqlGuidance):
        return [module.gamma, module.expectile, module.beta_weight, module.w_max]
    return [float(module.time_embed_dim), module.action_low, module.action_high]


def checkpoint_bytes(module) -> bytes:
    kind = checkpoint_kind(module)
    if kind not in KIND_CODES:
        raise InvalidInputError(f"unknown checkpoint kind {kind!r}")
    hypers = _hypers(module)
    betas = module.schedule.betas if isinstance(module, DiffusionPolicy) else np.empty(0)
    subnets = _subnets(module)

    parts = [
        MAGIC,
        struct.pack("<IB", FORMAT_VERSION, KIND_CODES[kind]),
        struct.pack("<IIqq", module.state_dim, module.action_dim,
                    int(module.seed), int(module.training_steps)),
        struct.pack("<I", len(hypers)),
        np.asarray(hypers, dtype="<f8").tobytes(),
        struct.pack("<I", len(betas)),
        np.ascontiguousarray(betas, dtype="<f8").tobytes(),
        struct.pack("<I", len(subnets)),
    ]
    for net in subnets:
        parts.append(struct.pack(
            "<BBI", _HIDDEN_CODES[net.hidden_activation],
            _OUTPUT_CODES[net.output_activation], len(net.layer_dims)))
        parts.append(struct.pack(f"<{len(net.layer_dims)}I", *net.layer_dims))
    for net in subnets:
        for w, b in zip(net.weights, net.biases):
            parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_checkpoint(module, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(module))


def _read_net_spec(body, off):
    hid, out, ndims = struct.unpack_from("<BBI", body, off)
    off += 6
    dims = list(struct.unpack_from(f"<{ndims}I", body, off))
    off += 4 * ndims
    return (dims, _HIDDEN_NAMES[hid], _OUTPUT_NAMES[out]), off


def module_from_bytes(buf: bytes):
    if len(buf) < len(MAGIC) + 9:
        raise CheckpointFormatError("checkpoint file truncated")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointFormatError("checkpoint checksum mismatch")
    if body[:8] != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    off = 8
    version, kind_code = struct.unpack_from("<IB", body, off)
    off += 5
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    if kind_code not in CODE_KINDS:
        raise CheckpointFormatError(f"unknown checkpoint kind code {kind_code}")
    kind = CODE_KINDS[kind_code]

    state_dim, action_dim, seed, training_steps = struct.unpack_from("<IIqq", body, off)
    off += struct.calcsize("<IIqq")
    (n_hyper,) = struct.unpack_from("<I", body, off)
    off += 4
    hypers = np.frombuffer(body, dtype="<f8", count=n_hyper, offset=off).tolist()
    off += 8 * n_hyper
    (n_betas,) = struct.unpack_from("<I", body, off)
    off += 4
    betas = np.frombuffer(body, dtype="<f8", count=n_betas, offset=off).copy()
    off += 8 * n_betas
    (n_subnets,) = struct.unpack_from("<I", body, off)
    off += 4

    specs = []
    for _ in range(n_subnets):
        spec, off = _read_net_spec(body, off)
        specs.append(spec)

    nets = []
    for dims, hid, out in specs:
        weights, biases = [], []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            w = np.frombuffer(body, dtype="<f8", count=d_out * d_in, offset=off).reshape(d_out, d_in).copy()
            off += 8 * d_out * d_in
            b = np.frombuffer(body, dtype="<f8", count=d_out, offset=off).copy()
            off += 8 * d_out
            weights.append(w)
            biases.append(b)
        nets.append(nn.Mlp(dims, weights, biases, hid, out))
    if off != len(body):
        raise CheckpointFormatError("checkpoint has trailing or missing bytes")

    if kind == "guidance_double_q":
        if len(nets) != 4 or len(hypers) != 2:
            raise CheckpointFormatError("malformed double-Q checkpoint")
        return DoubleQ(
            q1=nets[0], q2=nets[1], q1_target=nets[2], q2_target=nets[3],
            opt1=nn.adam_init(nets[0]), opt2=nn.adam_init(nets[1]),
            state_dim=state_dim, action_dim=action_dim,
            gamma=hypers[0], tau_ema=hypers[1],
            seed=seed, training_steps=training_steps, frozen=True)
    if kind == "guidance_iql":
        if len(nets) != 2 or len(hypers) != 4:
            raise CheckpointFormatError("malformed IQL checkpoint")
        return IqlGuidance(
            q=nets[0], v=nets[1],
            opt_q=nn.adam_init(nets[0]), opt_v=nn.adam_init(nets[1]),
            state_dim=state_dim, action_dim=action_dim,
            gamma=hypers[0], expectile=hypers[1], beta_weight=hypers[2], w_max=hypers[3],
            seed=seed, training_steps=training_steps, frozen=True)
    if len(nets) != 1 or len(hypers) != 3 or n_betas == 0:
        raise CheckpointFormatError("malformed policy checkpoint")
    return DiffusionPolicy(
        eps_net=nets[0],
        schedule=schedule_from_betas(betas),
        opt=nn.adam_init(nets[0]),
        state_dim=state_dim, action_dim=action_dim,
        time_embed_dim=int(hypers[0]), action_low=hypers[1], action_high=hypers[2],
        sampler_mode="one_step_edp" if kind == "policy_edp" else "full_reverse",
        algorithm=kind.removeprefix("policy_"),
        seed=seed, training_steps=training_steps)


def load_checkpoint(path):
    """Load a module; guidance comes back frozen, policies trainable."""
    with open(path, "rb") as fh:
        return module_from_bytes(fh.read())


def payload_bytes(path) -> bytes:
    """The raw parameter payload of a checkpoint file (for freeze diffing)."""
    module = load_checkpoint(path)
    return b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes()
        for net in _subnets(module)
        for arr in nn.param_arrays(net)
    )
