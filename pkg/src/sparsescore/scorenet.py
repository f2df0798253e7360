"""Score network: ReLU MLP over [x, time features] with exact gradients.

The model computes ``s(x, t)``, a d-vector; the effective score used by
training and sampling is ``kappa * s(x, t)`` with a single trainable
scale ``kappa``.  Two mechanisms keep the hypothesis class small:

* an output cap that rescales ``s`` so ``||s||_1 <= output_l1_cap``
  (differentiable almost everywhere, exact by construction), and
* Euclidean projection of all parameters onto an l1 ball, applied by the
  trainer after each update when enabled.

Gradients are reverse-mode by hand (no autodiff dependency) and are
checked against finite differences in the tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def fourier_features(t, freqs: np.ndarray) -> np.ndarray:
    """Sinusoidal time embedding ``[sin(2 pi f t), cos(2 pi f t)]``.

    Args:
        t: Scalar or shape-(n,) array of times.
        freqs: Frozen frequency vector, shape (width/2,).

    Returns:
        Feature matrix of shape (n, 2 * len(freqs)), entries in [-1, 1].
    """
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    ang = 2.0 * np.pi * t_arr[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def draw_frequencies(width: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Draw the frozen Gaussian frequencies for a feature width."""
    if width < 2 or width % 2 != 0:
        raise ValueError("time-feature width must be an even integer >= 2")
    return rng.standard_normal(width // 2) * scale


@dataclass
class GradientBundle:
    """Gradients shaped like the owning model's parameters.

    Attributes:
        d_weights: One (dW, db) pair per layer.
        d_kappa: Gradient of the scale.
    """

    d_weights: list
    d_kappa: float = 0.0


@dataclass
class ScoreModel:
    """Parameter state of the score network.

    Attributes:
        weights: List of (W, b) pairs; W maps row vectors, shape
            (fan_in, fan_out).
        kappa: Positive scale multiplying the network output.
        freqs: Frozen Fourier frequencies for the time embedding.
        l1_radius: Radius of the parameter l1 ball used by projection.
        output_l1_cap: Bound enforced on ``||s(x, t)||_1``.
        cap_enabled: Whether the output cap is applied.
    """

    weights: list
    kappa: float
    freqs: np.ndarray
    l1_radius: float = 1.0
    output_l1_cap: float = 1.0
    cap_enabled: bool = True

    @property
    def dim(self) -> int:
        return self.weights[-1][0].shape[1]

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in self.weights)

    def theta_l1(self) -> float:
        """l1 norm of the flattened parameter tuple."""
        return float(
            sum(np.abs(w).sum() + np.abs(b).sum() for w, b in self.weights)
        )

    def forward(self, x, t):
        """Network output ``s(x, t)`` (without the kappa factor).

        Args:
            x: Point (d,) or batch (n, d).
            t: Matching scalar or shape-(n,) times.

        Returns:
            Array with the same leading shape as ``x``.
        """
        xb = np.atleast_2d(np.asarray(x, dtype=float))
        tb = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=float)), (xb.shape[0],))
        s, _ = _forward_cached(self, xb, tb)
        return s[0] if np.asarray(x).ndim == 1 else s

    def effective_score(self, x, t):
        """``kappa * s(x, t)`` — the score estimate fed to the sampler."""
        return self.kappa * self.forward(x, t)

    def backward(self, x, t, upstream) -> GradientBundle:
        """Gradient of ``<upstream, kappa * s(x, t)>`` in all parameters.

        Covers the cap branch (pass-through inside the ball, rescaled
        outside) and uses subgradient 0 at ReLU kinks and at zeroed
        output coordinates.

        Args:
            x: Point (d,) or batch (n, d); batches sum their
                contributions.
            t: Matching times.
            upstream: Cotangent with the same shape as ``forward(x, t)``.
        """
        xb = np.atleast_2d(np.asarray(x, dtype=float))
        tb = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=float)), (xb.shape[0],))
        up = np.atleast_2d(np.asarray(upstream, dtype=float))
        if up.shape != (xb.shape[0], self.dim):
            raise ValueError(f"upstream shape {up.shape} does not match {xb.shape}")
        s, cache = _forward_cached(self, xb, tb)
        bundle = _backward_from_cache(self, cache, self.kappa * up)
        bundle.d_kappa = float(np.sum(up * s))
        return bundle


def init_model(
    dim: int,
    hidden: tuple = (64, 64, 64),
    time_feat_dim: int = 16,
    freq_scale: float = 30.0,
    l1_radius: float = 1.0,
    output_l1_cap: float = 1.0,
    cap_enabled: bool = True,
    kappa: float = 1.0,
    rng: np.random.Generator | None = None,
) -> ScoreModel:
    """Create a freshly initialized model.

    Draw order (frequencies first, then layer weights input to output) is
    fixed so a seeded generator reproduces the model bit for bit.
    """
    if kappa <= 0.0:
        raise ValueError("kappa must be > 0")
    rng = rng if rng is not None else np.random.default_rng(0)
    freqs = draw_frequencies(time_feat_dim, freq_scale, rng)
    sizes = [dim + time_feat_dim, *hidden, dim]
    weights = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        b = np.zeros(fan_out)
        weights.append((w, b))
    return ScoreModel(
        weights=weights,
        kappa=float(kappa),
        freqs=freqs,
        l1_radius=float(l1_radius),
        output_l1_cap=float(output_l1_cap),
        cap_enabled=bool(cap_enabled),
    )


def _forward_cached(model: ScoreModel, xb: np.ndarray, tb: np.ndarray):
    """Batched forward pass keeping every intermediate for backprop."""
    feats = fourier_features(tb, model.freqs)
    h = np.concatenate([xb, feats], axis=1)
    pre = []  # pre-activations per hidden layer
    post = [h]  # layer inputs
    n_layers = len(model.weights)
    for i, (w, b) in enumerate(model.weights):
        z = h @ w + b
        if i < n_layers - 1:
            pre.append(z)
            h = np.maximum(z, 0.0)
            post.append(h)
        else:
            raw = z
    if model.cap_enabled:
        n1 = np.abs(raw).sum(axis=1, keepdims=True)
        scale = 1.0 / np.maximum(1.0, n1 / model.output_l1_cap)
    else:
        n1 = None
        scale = np.ones((xb.shape[0], 1))
    s = raw * scale
    cache = {"pre": pre, "post": post, "raw": raw, "scale": scale, "n1": n1}
    return s, cache


def _backward_from_cache(
    model: ScoreModel, cache: dict, upstream: np.ndarray
) -> GradientBundle:
    """Reverse pass for ``sum_rows <upstream_row, s_row>``; kappa excluded."""
    raw, scale = cache["raw"], cache["scale"]
    if model.cap_enabled:
        # s = raw * scale with scale = cap/||raw||_1 on the active branch
        active = (scale < 1.0).astype(float)
        inner = np.sum(upstream * raw, axis=1, keepdims=True)
        d_raw = upstream * scale - active * (scale / np.maximum(cache["n1"], 1e-300)) * inner * np.sign(raw)
    else:
        d_raw = upstream

    d_weights = [None] * len(model.weights)
    grad = d_raw
    for i in range(len(model.weights) - 1, -1, -1):
        w, _ = model.weights[i]
        h_in = cache["post"][i]
        dw = h_in.T @ grad
        db = grad.sum(axis=0)
        d_weights[i] = (dw, db)
        if i > 0:
            grad = (grad @ w.T) * (cache["pre"][i - 1] > 0.0)
    return GradientBundle(d_weights=d_weights, d_kappa=0.0)


def project_l1_vector(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection of a flat vector onto the l1 ball.

    Sort-based exact threshold (soft-threshold with the smallest tau such
    that ``sum(max(|v| - tau, 0)) == radius``); identity inside the ball.
    """
    if radius <= 0.0:
        raise ValueError("radius must be > 0")
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, u.size + 1)
    rho = idx[u - (css - radius) / idx > 0.0][-1]
    tau = (css[rho - 1] - radius) / rho
    return np.sign(v) * np.maximum(a - tau, 0.0)


def project_l1(weights: list, radius: float) -> list:
    """Project the flattened parameter tuple onto the l1 ball of ``radius``.

    Returns a new list of (W, b) pairs with the original shapes.
    """
    flat = np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in weights])
    proj = project_l1_vector(flat, radius)
    out = []
    pos = 0
    for w, b in weights:
        new_w = proj[pos : pos + w.size].reshape(w.shape)
        pos += w.size
        new_b = proj[pos : pos + b.size].reshape(b.shape)
        pos += b.size
        out.append((new_w, new_b))
    return out


def save_checkpoint(model: ScoreModel, path, config_hash: str = "") -> None:
    """Write the model to a versioned JSON checkpoint (exact round trip)."""
    doc = {
        "version": 1,
        "config_hash": config_hash,
        "kappa": model.kappa,
        "freqs": model.freqs.tolist(),
        "l1_radius": model.l1_radius,
        "output_l1_cap": model.output_l1_cap,
        "cap_enabled": model.cap_enabled,
        "layers": [
            {
                "w": {"shape": list(w.shape), "data": w.ravel().tolist()},
                "b": {"shape": list(b.shape), "data": b.ravel().tolist()},
            }
            for w, b in model.weights
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)


def load_checkpoint(path) -> ScoreModel:
    """Load a checkpoint written by :func:`save_checkpoint`."""
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("version") != 1:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    weights = []
    for layer in doc["layers"]:
        w = np.array(layer["w"]["data"], dtype=float).reshape(layer["w"]["shape"])
        b = np.array(layer["b"]["data"], dtype=float).reshape(layer["b"]["shape"])
        weights.append((w, b))
    return ScoreModel(
        weights=weights,
        kappa=float(doc["kappa"]),
        freqs=np.array(doc["freqs"], dtype=float),
        l1_radius=float(doc["l1_radius"]),
        output_l1_cap=float(doc["output_l1_cap"]),
        cap_enabled=bool(doc["cap_enabled"]),
    )
