"""Transformer trajectory predictor and its multi-task / ablation variants."""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .nn import Tensor
from .vocab import DT, OBS_LEN, PRED_LEN, ActionClass, Tracklet, Vocabulary

STATE_WIDTH = 4  # x, y, vx, vy


class SpecError(ValueError):
    pass


class Task(str, enum.Enum):
    TP = "TP"
    MTL = "MTL"
    ActionOnly = "ActionOnly"


@dataclass
class ModelSpec:
    use_agent_class: bool = False
    use_actions_in_input: bool = False
    heads: int = 2
    encoder_layers: int = 1
    d_model: int = 32
    d_ff: int = 64
    embed_hidden: int = 64
    decoder_hidden: int = 64
    agent_embed_dim: int = 16
    task: Task = Task.TP
    action_vocab_size: int = 10
    agent_vocab_size: int = 5
    lam: float = 1.0

    def __post_init__(self):
        self.task = Task(self.task)

    def validate(self) -> None:
        widths = dict(heads=self.heads, d_model=self.d_model, d_ff=self.d_ff,
                      embed_hidden=self.embed_hidden, decoder_hidden=self.decoder_hidden,
                      agent_embed_dim=self.agent_embed_dim, action_vocab_size=self.action_vocab_size,
                      agent_vocab_size=self.agent_vocab_size)
        for k, v in widths.items():
            if int(v) != v or v < 1:
                raise SpecError(f"{k} must be a positive integer, got {v}")
        if self.encoder_layers < 0:
            raise SpecError("encoder_layers must be >= 0")
        if self.d_model % self.heads:
            raise SpecError(f"d_model {self.d_model} is not divisible by heads {self.heads}")
        if self.d_model % 2:
            raise SpecError("d_model must be even for the positional encoding")
        if not math.isfinite(self.lam) or self.lam < 0:
            raise SpecError(f"lambda must be finite and >= 0, got {self.lam}")

    @property
    def predicts_trajectory(self) -> bool:
        return self.task in (Task.TP, Task.MTL)

    @property
    def predicts_actions(self) -> bool:
        return self.task in (Task.MTL, Task.ActionOnly)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["task"] = self.task.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SpecError(f"unknown model spec field(s): {sorted(unknown)}")
        return cls(**d)

    def for_vocab(self, vocab: Vocabulary) -> "ModelSpec":
        d = self.to_dict()
        d.update(action_vocab_size=vocab.n_actions, agent_vocab_size=vocab.n_agent_classes)
        return ModelSpec.from_dict(d)


@dataclass
class Batch:
    """Model-ready arrays for a list of tracklets (positions are origin-relative)."""
    features: np.ndarray       # [B, 8, 4 (+N_A)]
    agent: np.ndarray          # [B]
    origin: np.ndarray         # [B, 2] last observed absolute position
    future_rel: np.ndarray     # [B, 12, 2]
    future_actions: np.ndarray  # [B, 12] vocabulary indices
    observed_actions: np.ndarray  # [B, 8]

    def __len__(self) -> int:
        return len(self.agent)

    def take(self, idx) -> "Batch":
        return Batch(self.features[idx], self.agent[idx], self.origin[idx], self.future_rel[idx],
                     self.future_actions[idx], self.observed_actions[idx])


def make_batch(tracklets: Sequence[Tracklet], vocab: Vocabulary, use_actions: bool,
               dtype=np.float64) -> Batch:
    n = len(tracklets)
    pos = np.empty((n, OBS_LEN + PRED_LEN, 2))
    vel = np.empty((n, OBS_LEN, 2))
    acts = np.empty((n, OBS_LEN + PRED_LEN), dtype=np.int64)
    agent = np.empty(n, dtype=np.int64)
    for i, tr in enumerate(tracklets):
        pos[i] = tr.positions()
        vel[i] = tr.velocities()[:OBS_LEN]
        acts[i] = [vocab.action_index(a) for a in tr.actions()]
        agent[i] = vocab.agent_index(tr.agent_class)
    origin = pos[:, OBS_LEN - 1].copy()
    rel = pos - origin[:, None, :]
    feats = [rel[:, :OBS_LEN], vel]
    if use_actions:
        feats.append(np.eye(vocab.n_actions)[acts[:, :OBS_LEN]])
    return Batch(np.concatenate(feats, axis=-1).astype(dtype), agent, origin,
                 rel[:, OBS_LEN:], acts[:, OBS_LEN:], acts[:, :OBS_LEN])


def integrate(last_position, velocities, dt: float = DT):
    """Cumulative Euler integration of future velocities from the last observed position.

    Works on tensors (differentiable) and on plain arrays; the time axis is -2.
    """
    last = np.asarray(last_position, dtype=np.float64)[..., None, :]
    if isinstance(velocities, Tensor):
        return nn.cumsum(velocities, axis=-2) * dt + last.astype(velocities.dtype)
    return last + dt * np.cumsum(np.asarray(velocities), axis=-2)


@dataclass
class PredictionOutput:
    velocities: np.ndarray              # [B, 12, 2]
    positions: np.ndarray               # [B, 12, 2] absolute
    action_probs: np.ndarray | None = None   # [B, 12, N_A]
    action_indices: np.ndarray | None = None  # [B, 12]
    actions: list[list[ActionClass]] | None = None


class Model(nn.Module):
    """Embedding MLP + positional encoding + transformer encoder, with one or two MLP decoders."""

    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=np.float32):
        spec.validate()
        self.spec = spec
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        n_in = STATE_WIDTH + (spec.action_vocab_size if spec.use_actions_in_input else 0)
        self.embed = nn.MLP([n_in, spec.embed_hidden, spec.d_model], rng, dtype)
        self.encoder = [nn.TransformerEncoderLayer(spec.d_model, spec.heads, spec.d_ff, rng, dtype)
                        for _ in range(spec.encoder_layers)]
        dec_in = OBS_LEN * spec.d_model
        if spec.use_agent_class:
            self.agent_embed = nn.Embedding(spec.agent_vocab_size, spec.agent_embed_dim, rng, dtype)
            dec_in += spec.agent_embed_dim
        h = spec.decoder_hidden
        if spec.predicts_trajectory:
            self.traj_decoder = nn.MLP([dec_in, h, h, PRED_LEN * 2], rng, dtype)
        if spec.predicts_actions:
            self.action_decoder = nn.MLP([dec_in, h, h, PRED_LEN * spec.action_vocab_size], rng,
                                         dtype)
        self.pos_encoding = nn.sinusoidal_positional_encoding(OBS_LEN, spec.d_model, dtype)
        for name, p in self.named_parameters():
            p.name = name

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            raise SpecError("checkpoint parameters do not match the model spec")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise SpecError(f"shape mismatch for {name}: {state[name].shape} vs {p.shape}")
            p.data[...] = state[name]

    def encode(self, features: Tensor, agent) -> Tensor:
        x = self.embed(features) + self.pos_encoding
        for layer in self.encoder:
            x = layer(x)
        z = x.reshape(x.shape[0], OBS_LEN * self.spec.d_model)
        if self.spec.use_agent_class:
            z = nn.concat([z, self.agent_embed(agent)], axis=-1)
        return z

    def forward(self, features, agent) -> tuple[Tensor | None, Tensor | None]:
        """Return (future velocities [B,12,2], action logits [B,12,N_A]); absent heads are None."""
        if not isinstance(features, Tensor):
            features = Tensor(np.asarray(features, dtype=self.dtype))
        z = self.encode(features, np.asarray(agent))
        b = features.shape[0]
        vel = logits = None
        if self.spec.predicts_trajectory:
            vel = self.traj_decoder(z).reshape(b, PRED_LEN, 2)
        if self.spec.predicts_actions:
            logits = self.action_decoder(z).reshape(b, PRED_LEN, self.spec.action_vocab_size)
        return vel, logits


def build_model(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> Model:
    return Model(spec, seed, dtype)


def param_count(model: nn.Module) -> int:
    return int(sum(p.data.size for p in model.parameters()))


def argmax_lowest(probs: np.ndarray) -> np.ndarray:
    """Argmax over the last axis; exact ties resolve to the lowest index."""
    return np.argmax(probs, axis=-1)


def predict(model: Model, tracklets: Sequence[Tracklet], vocab: Vocabulary) -> PredictionOutput:
    batch = make_batch(tracklets, vocab, model.spec.use_actions_in_input, model.dtype)
    return predict_batch(model, batch, vocab)


def predict_batch(model: Model, batch: Batch, vocab: Vocabulary | None = None) -> PredictionOutput:
    vel, logits = model(batch.features, batch.agent)
    b = len(batch)
    if vel is not None:
        v = vel.data.astype(np.float64)
        positions = integrate(batch.origin, v)
    else:
        v = np.full((b, PRED_LEN, 2), np.nan)
        positions = np.full((b, PRED_LEN, 2), np.nan)
    out = PredictionOutput(v, positions)
    if logits is not None:
        probs = nn.softmax(logits, axis=-1).data.astype(np.float64)
        out.action_probs = probs
        out.action_indices = argmax_lowest(probs)
        if vocab is not None:
            out.actions = [[vocab.decode_action(i) for i in row] for row in out.action_indices]
    return out


def default_spec(variant: str = "baseline", task: Task | str = Task.TP,
                 vocab: Vocabulary | None = None, **overrides) -> ModelSpec:
    """Named input-cue variants: baseline, agent, actions, both."""
    flags = {
        "baseline": (False, False),
        "agent": (True, False),
        "actions": (False, True),
        "both": (True, True),
    }
    if variant not in flags:
        raise SpecError(f"unknown variant {variant!r}")
    use_agent, use_actions = flags[variant]
    spec = ModelSpec(use_agent_class=use_agent, use_actions_in_input=use_actions, task=Task(task),
                     **overrides)
    return spec.for_vocab(vocab) if vocab is not None else spec
