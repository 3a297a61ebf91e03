"""Desk-scale trainable feature extractor.

A single linear map stands in for a convolutional backbone; the two part
heads are its column slices, the way part features of a deep model are
horizontal slices of the one shared feature computation:

    f_g  = l2(relu(W_g x))
    f_pu = l2(relu(W_g[:, :d/2] x_upper))
    f_pb = l2(relu(W_g[:, d/2:] x_bottom))

Part embeddings therefore train through every loss that trains the global
head, even though no loss term touches them directly. Each head applies
ReLU then L2 normalization, so embeddings live on the unit sphere and
every gradient is hand-derivable. A linear classifier on the global
embedding serves the labelled source branch.

The backward pass chains upstream embedding gradients through the sphere
projection (I - y y^T) / ||v||, the ReLU mask and the linear maps. It
reports the global-path and part-path gradients separately (w_g, w_u,
w_b); the optimizer folds the part-path gradients into the shared columns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError, ZeroVectorError

CHECKPOINT_VERSION = 1


@dataclass
class ForwardState:
    """Inputs, pre-activations and embeddings cached for the backward pass.

    ``alive`` marks samples whose three ReLU outputs all have nonzero norm;
    lenient forwards zero out the embeddings of dead samples instead of
    raising, and the trainer drops those samples from losses and writes.
    """

    x: np.ndarray
    z_g: np.ndarray
    z_u: np.ndarray
    z_b: np.ndarray
    f_g: np.ndarray
    f_pu: np.ndarray
    f_pb: np.ndarray
    alive: np.ndarray = None

    def __post_init__(self) -> None:
        if self.alive is None:
            self.alive = np.ones(self.x.shape[0], dtype=bool)


@dataclass
class ParamGrads:
    w_g: np.ndarray
    w_u: np.ndarray
    w_b: np.ndarray
    classifier: np.ndarray

    def scaled(self, factor: float) -> "ParamGrads":
        return ParamGrads(
            self.w_g * factor,
            self.w_u * factor,
            self.w_b * factor,
            self.classifier * factor,
        )

    def add(self, other: "ParamGrads") -> "ParamGrads":
        return ParamGrads(
            self.w_g + other.w_g,
            self.w_u + other.w_u,
            self.w_b + other.w_b,
            self.classifier + other.classifier,
        )


def _relu_l2_forward(
    w: np.ndarray, x: np.ndarray, strict: bool = True
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with np.errstate(over="ignore", invalid="ignore"):
        z = x @ w.T
        v = np.maximum(z, 0.0)
        norms = np.linalg.norm(v, axis=1)
    # overflowing norms mark a sample as unusable just like vanished ones
    alive = (norms >= 1e-12) & np.isfinite(norms)
    if strict and not alive.all():
        bad = int(np.argmin(alive))
        raise ZeroVectorError(f"ReLU output of sample {bad} is entirely zero")
    f = np.zeros_like(v)
    f[alive] = v[alive] / norms[alive, None]
    return z, f, alive


def _relu_l2_backward(
    w: np.ndarray, x: np.ndarray, z: np.ndarray, f: np.ndarray, grad_f: np.ndarray
) -> np.ndarray:
    """Gradient of sum(grad_f * f) with respect to w, for f = l2(relu(w x)).

    Dead rows (zero ReLU output, lenient forward) carry zero embeddings and
    must arrive with zero upstream gradients; the norm floor below only
    keeps their 0/0 from becoming NaN.
    """
    v = np.maximum(z, 0.0)
    norms = np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-30)
    # tangent projection: components of grad_f parallel to f do not move f
    radial = np.sum(grad_f * f, axis=1, keepdims=True)
    grad_v = (grad_f - radial * f) / norms
    grad_z = grad_v * (z > 0.0)
    return grad_z.T @ x


class Encoder:
    """Parameter container with forward, analytic backward and momentum SGD."""

    def __init__(
        self,
        d_in: int,
        embed_dim: int,
        num_classes: int,
        seed: int | np.random.SeedSequence = 0,
    ) -> None:
        if d_in % 2 != 0:
            raise InvalidConfigError(f"d_in must be even, got {d_in}")
        self.d_in = d_in
        self.embed_dim = embed_dim
        self.num_classes = num_classes
        rng = np.random.default_rng(seed)
        self.w_g = self._init(rng, embed_dim, d_in)
        self.classifier = self._init(rng, num_classes, embed_dim)
        self._velocity: ParamGrads | None = None

    @property
    def w_u(self) -> np.ndarray:
        """Upper-part head: the global map's first-half columns (shared)."""
        return self.w_g[:, : self.d_in // 2]

    @property
    def w_b(self) -> np.ndarray:
        """Bottom-part head: the global map's second-half columns (shared)."""
        return self.w_g[:, self.d_in // 2 :]

    @staticmethod
    def _init(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols))

    def forward(self, x: np.ndarray, strict: bool = True) -> ForwardState:
        """Embed a batch. With ``strict`` (the default) a sample whose ReLU
        output dies in any head raises ZeroVectorError; lenient mode instead
        zeroes that sample's embeddings and reports it via ``state.alive``."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        half = self.d_in // 2
        z_g, f_g, ok_g = _relu_l2_forward(self.w_g, x, strict)
        z_u, f_pu, ok_u = _relu_l2_forward(self.w_u, x[:, :half], strict)
        z_b, f_pb, ok_b = _relu_l2_forward(self.w_b, x[:, half:], strict)
        alive = ok_g & ok_u & ok_b
        for f in (f_g, f_pu, f_pb):
            f[~alive] = 0.0
        return ForwardState(
            x=x, z_g=z_g, z_u=z_u, z_b=z_b, f_g=f_g, f_pu=f_pu, f_pb=f_pb, alive=alive
        )

    def logits(self, f_g: np.ndarray) -> np.ndarray:
        return f_g @ self.classifier.T

    def backward(
        self,
        state: ForwardState,
        grad_f_g: np.ndarray | None = None,
        grad_f_pu: np.ndarray | None = None,
        grad_f_pb: np.ndarray | None = None,
        grad_logits: np.ndarray | None = None,
    ) -> ParamGrads:
        """Parameter gradients for a batch, given upstream embedding/logit grads."""
        b = state.x.shape[0]
        half = self.d_in // 2
        g_fg = np.zeros_like(state.f_g) if grad_f_g is None else np.asarray(grad_f_g)
        grad_cls = np.zeros_like(self.classifier)
        if grad_logits is not None:
            grad_logits = np.asarray(grad_logits)
            grad_cls = grad_logits.T @ state.f_g
            g_fg = g_fg + grad_logits @ self.classifier
        gw_g = _relu_l2_backward(self.w_g, state.x, state.z_g, state.f_g, g_fg)
        if grad_f_pu is not None:
            gw_u = _relu_l2_backward(
                self.w_u, state.x[:, :half], state.z_u, state.f_pu, np.asarray(grad_f_pu)
            )
        else:
            gw_u = np.zeros_like(self.w_u)
        if grad_f_pb is not None:
            gw_b = _relu_l2_backward(
                self.w_b, state.x[:, half:], state.z_b, state.f_pb, np.asarray(grad_f_pb)
            )
        else:
            gw_b = np.zeros_like(self.w_b)
        return ParamGrads(w_g=gw_g, w_u=gw_u, w_b=gw_b, classifier=grad_cls)

    def sgd_step(
        self,
        grads: ParamGrads,
        learning_rate: float,
        momentum: float = 0.0,
        weight_decay: float = 0.0,
    ) -> None:
        """Classical momentum update: v <- m v + (g + wd p); p <- p - lr v.

        The part-path gradients address the same storage as the global map's
        column halves, so they are folded into the w_g update first.
        """
        half = self.d_in // 2
        g_wg = grads.w_g.copy()
        g_wg[:, :half] += grads.w_u
        g_wg[:, half:] += grads.w_b
        if self._velocity is None:
            self._velocity = {
                "w_g": np.zeros_like(self.w_g),
                "classifier": np.zeros_like(self.classifier),
            }
        for name, g in (("w_g", g_wg), ("classifier", grads.classifier)):
            p = getattr(self, name)
            v = momentum * self._velocity[name] + (g + weight_decay * p)
            self._velocity[name] = v
            p -= learning_rate * v

    # -- checkpoint io ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "d_in": self.d_in,
            "embed_dim": self.embed_dim,
            "num_classes": self.num_classes,
            "w_g": self.w_g.tolist(),
            "classifier": self.classifier.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Encoder":
        if data.get("version") != CHECKPOINT_VERSION:
            raise InvalidConfigError(
                f"unsupported checkpoint version {data.get('version')!r}"
            )
        enc = cls(data["d_in"], data["embed_dim"], data["num_classes"], seed=0)
        enc.w_g = np.asarray(data["w_g"], dtype=np.float64)
        enc.classifier = np.asarray(data["classifier"], dtype=np.float64)
        return enc

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load_file(cls, path: str) -> "Encoder":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
