"""From-scratch forecasters: persistence, MLP, and LSTM with manual backprop.

Both neural models map an encoded input window to one output per (station,
horizon) pair, so all horizons are predicted jointly by a single network.
Parameters live in plain name->array dicts; gradients come from hand-written
backward passes, verified against central finite differences by
:func:`gradient_check`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

CHECKPOINT_FORMAT = "gapcast-checkpoint"
CHECKPOINT_VERSION = 1


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class MlpModel:
    """Fully-connected net: rectifier hidden layers, identity output.

    ``hidden_sizes=[]`` gives a plain affine map, which represents a linear
    task exactly.
    """

    kind = "mlp"

    def __init__(self, input_size: int, hidden_sizes: Sequence[int], output_size: int,
                 rng: Optional[np.random.Generator] = None):
        self.sizes = [input_size, *hidden_sizes, output_size]
        rng = rng or np.random.default_rng(0)
        self.params: dict[str, np.ndarray] = {}
        for i, (fin, fout) in enumerate(zip(self.sizes, self.sizes[1:])):
            self.params[f"W{i}"] = glorot_uniform(rng, fin, fout, (fin, fout))
            self.params[f"b{i}"] = np.zeros(fout)

    @property
    def input_size(self) -> int:
        return self.sizes[0]

    @property
    def output_size(self) -> int:
        return self.sizes[-1]

    def forward_cached(self, x: np.ndarray):
        acts = [x]
        n_layers = len(self.sizes) - 1
        h = x
        for i in range(n_layers):
            z = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            h = np.maximum(z, 0.0) if i < n_layers - 1 else z
            acts.append(h)
        return h, acts

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_cached(x)[0]

    def backward(self, cache, d_out: np.ndarray) -> dict[str, np.ndarray]:
        acts = cache
        grads = {}
        n_layers = len(self.sizes) - 1
        delta = d_out
        for i in reversed(range(n_layers)):
            if i < n_layers - 1:
                delta = delta * (acts[i + 1] > 0)  # rectifier mask
            grads[f"W{i}"] = acts[i].T @ delta
            grads[f"b{i}"] = delta.sum(axis=0)
            delta = delta @ self.params[f"W{i}"].T
        return grads

    def meta(self) -> dict:
        return {"kind": self.kind, "sizes": self.sizes}

    @classmethod
    def from_meta(cls, meta: dict) -> "MlpModel":
        sizes = meta["sizes"]
        return cls(sizes[0], sizes[1:-1], sizes[-1])


class LstmModel:
    """Single-layer LSTM over the window's hourly steps, affine readout.

    Gate layout in the stacked weight matrices is [input, forget, cell,
    output]; the forget-gate bias starts at 1.0 so early training does not
    wash out the cell state.
    """

    kind = "lstm"

    def __init__(self, input_size: int, hidden_size: int, output_size: int,
                 rng: Optional[np.random.Generator] = None):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.output_size = output_size
        rng = rng or np.random.default_rng(0)
        h = hidden_size
        wx = np.concatenate(
            [glorot_uniform(rng, input_size, h, (input_size, h)) for _ in range(4)], axis=1
        )
        wh = np.concatenate(
            [glorot_uniform(rng, h, h, (h, h)) for _ in range(4)], axis=1
        )
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0
        self.params = {
            "Wx": wx,
            "Wh": wh,
            "b": b,
            "Wy": glorot_uniform(rng, h, output_size, (h, output_size)),
            "by": np.zeros(output_size),
        }

    def forward_cached(self, x: np.ndarray):
        """x has shape (batch, steps, input_size)."""
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise ValueError(f"expected (B, T, {self.input_size}) input, got {x.shape}")
        batch, steps, _ = x.shape
        hsz = self.hidden_size
        h = np.zeros((batch, hsz))
        c = np.zeros((batch, hsz))
        cache = []
        for t in range(steps):
            z = x[:, t, :] @ self.params["Wx"] + h @ self.params["Wh"] + self.params["b"]
            gi = sigmoid(z[:, :hsz])
            gf = sigmoid(z[:, hsz : 2 * hsz])
            gc = np.tanh(z[:, 2 * hsz : 3 * hsz])
            go = sigmoid(z[:, 3 * hsz :])
            c_next = gf * c + gi * gc
            tanh_c = np.tanh(c_next)
            cache.append((x[:, t, :], h, c, gi, gf, gc, go, tanh_c))
            c = c_next
            h = go * tanh_c
        y = h @ self.params["Wy"] + self.params["by"]
        return y, (cache, h)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_cached(x)[0]

    def backward(self, cache, d_out: np.ndarray) -> dict[str, np.ndarray]:
        steps_cache, h_final = cache
        hsz = self.hidden_size
        grads = {name: np.zeros_like(p) for name, p in self.params.items()}
        grads["Wy"] = h_final.T @ d_out
        grads["by"] = d_out.sum(axis=0)
        dh = d_out @ self.params["Wy"].T
        dc = np.zeros_like(dh)
        for x_t, h_prev, c_prev, gi, gf, gc, go, tanh_c in reversed(steps_cache):
            do = dh * tanh_c
            dc = dc + dh * go * (1.0 - tanh_c**2)
            di = dc * gc
            dg = dc * gi
            df = dc * c_prev
            dz = np.concatenate(
                [
                    di * gi * (1.0 - gi),
                    df * gf * (1.0 - gf),
                    dg * (1.0 - gc**2),
                    do * go * (1.0 - go),
                ],
                axis=1,
            )
            grads["Wx"] += x_t.T @ dz
            grads["Wh"] += h_prev.T @ dz
            grads["b"] += dz.sum(axis=0)
            dh = dz @ self.params["Wh"].T
            dc = dc * gf
        return grads

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "input_size": self.input_size,
            "hidden_size": self.hidden_size,
            "output_size": self.output_size,
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "LstmModel":
        return cls(meta["input_size"], meta["hidden_size"], meta["output_size"])


Model = MlpModel | LstmModel


def clone_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in params.items()}


def masked_mse(preds: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over mask-present targets, and its gradient.

    Adding a masked target to a batch never changes the value.
    """
    w = mask.astype(float)
    count = w.sum()
    if count == 0:
        raise ValueError("loss needs at least one present target")
    diff = np.where(mask, preds - targets, 0.0)
    loss = float((diff**2).sum() / count)
    return loss, 2.0 * diff / count


def gradient_check(
    model: Model,
    x: np.ndarray,
    targets: np.ndarray,
    target_mask: np.ndarray,
    epsilon: float = 1e-4,
    n_coords: int = 50,
    seed: int = 0,
) -> float:
    """Max relative error of analytic gradients vs central finite differences.

    Samples at least ``n_coords`` parameter coordinates across all tensors.
    """
    preds, cache = model.forward_cached(x)
    _, d_out = masked_mse(preds, targets, target_mask)
    grads = model.backward(cache, d_out)

    rng = np.random.default_rng(seed)
    names = sorted(model.params)
    worst = 0.0
    for _ in range(n_coords):
        name = names[rng.integers(len(names))]
        p = model.params[name]
        flat = rng.integers(p.size)
        idx = np.unravel_index(flat, p.shape)
        orig = p[idx]
        p[idx] = orig + epsilon
        up, _ = masked_mse(model.forward(x), targets, target_mask)
        p[idx] = orig - epsilon
        down, _ = masked_mse(model.forward(x), targets, target_mask)
        p[idx] = orig
        numeric = (up - down) / (2.0 * epsilon)
        analytic = grads[name][idx]
        denom = max(abs(numeric), abs(analytic), 1e-8)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst


def save_checkpoint(model: Model, path, extra: Optional[dict] = None) -> None:
    """Versioned checkpoint carrying metadata plus exact float64 parameters."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": model.meta(),
        "extra": extra or {},
    }
    arrays = {f"param_{k}": v for k, v in model.params.items()}
    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> tuple[Model, dict]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
        kind = meta["model"]["kind"]
        cls = {"mlp": MlpModel, "lstm": LstmModel}[kind]
        model = cls.from_meta(meta["model"])
        for key in data.files:
            if key.startswith("param_"):
                model.params[key[len("param_"):]] = data[key]
    return model, meta["extra"]
