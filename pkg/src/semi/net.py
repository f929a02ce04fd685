"""Small dense networks on top of the autodiff core.

Parameters live in a ``ParameterSet``, an ordered name-to-array mapping
that supports flattening to a single vector (for checkpoints and the
gradient checker) and prefix-based merging (for jointly optimizing
several networks).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass
class MlpSpec:
    """Architecture of a fully connected network."""

    in_dim: int
    hidden: tuple[int, ...]
    out_dim: int
    activation: str = "tanh"

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.in_dim, *self.hidden, self.out_dim]
        return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]


class ParameterSet:
    """Ordered mapping from parameter names to float64 arrays."""

    def __init__(self, arrays: dict[str, np.ndarray] | None = None):
        self._arrays: dict[str, np.ndarray] = {}
        if arrays:
            for name, arr in arrays.items():
                self._arrays[name] = np.asarray(arr, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, value) -> None:
        self._arrays[name] = np.asarray(value, dtype=np.float64)

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __len__(self) -> int:
        return len(self._arrays)

    def names(self) -> list[str]:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def copy(self) -> "ParameterSet":
        return ParameterSet({k: v.copy() for k, v in self._arrays.items()})

    def flatten(self) -> np.ndarray:
        if not self._arrays:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self._arrays.values()])

    def unflatten(self, vec: np.ndarray) -> None:
        """Overwrite all arrays in place from a flat vector (inverse of flatten)."""
        vec = np.asarray(vec, dtype=np.float64)
        offset = 0
        for name, arr in self._arrays.items():
            n = arr.size
            self._arrays[name] = vec[offset : offset + n].reshape(arr.shape).copy()
            offset += n
        if offset != vec.size:
            raise ValueError(f"flat vector has {vec.size} entries, expected {offset}")

    def size(self) -> int:
        return sum(v.size for v in self._arrays.values())

    def with_prefix(self, prefix: str) -> "ParameterSet":
        return ParameterSet({f"{prefix}{k}": v for k, v in self._arrays.items()})

    def subset(self, prefix: str, strip: bool = True) -> "ParameterSet":
        """Parameters whose names start with ``prefix``; shares the arrays."""
        out = ParameterSet()
        for k, v in self._arrays.items():
            if k.startswith(prefix):
                out._arrays[k[len(prefix) :] if strip else k] = v
        return out

    def merge(self, other: "ParameterSet") -> None:
        """Adopt ``other``'s arrays (shared, not copied); names must be new."""
        for k, v in other._arrays.items():
            if k in self._arrays:
                raise ValueError(f"duplicate parameter name {k!r}")
            self._arrays[k] = v


def init_mlp(spec: MlpSpec, rng: np.random.Generator) -> ParameterSet:
    """Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)), zero biases."""
    params = ParameterSet()
    for i, (fan_in, fan_out) in enumerate(spec.layer_dims):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"W{i}"] = rng.uniform(-a, a, size=(fan_in, fan_out))
        params[f"b{i}"] = np.zeros(fan_out)
    return params


_ACTIVATIONS = {"tanh": ad.tanh, "relu": ad.relu}


def mlp_forward(spec: MlpSpec, params: ParameterSet, x, nodes: dict | None = None, prefix: str = ""):
    """Run the network. 1-D input is promoted to a single-row batch.

    Parameters are looked up as ``{prefix}W0``, ``{prefix}b0``, ... so one
    ParameterSet can hold several networks. When ``nodes`` is given,
    parameters are wrapped as graph Nodes (recorded there under their
    prefixed names) so gradients can be taken; with ``nodes=None`` this
    is a plain numpy forward pass.
    """
    act = _ACTIVATIONS[spec.activation]
    squeeze = False
    if not isinstance(x, ad.Node):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
            squeeze = True
    h = x
    n_layers = len(spec.layer_dims)
    for i in range(n_layers):
        W, b = params[f"{prefix}W{i}"], params[f"{prefix}b{i}"]
        if nodes is not None:
            W = nodes.setdefault(f"{prefix}W{i}", ad.Node(W))
            b = nodes.setdefault(f"{prefix}b{i}", ad.Node(b))
        h = ad.add(ad.matmul(h, W), b)
        if i < n_layers - 1:
            h = act(h)
    if squeeze and not isinstance(h, ad.Node):
        h = h[0]
    return h


def wrap_params(params: ParameterSet) -> dict[str, ad.Node]:
    """Graph Nodes for every parameter, keyed by name."""
    return {name: ad.Node(arr) for name, arr in params.items()}


def collect_grads(nodes: dict[str, ad.Node], params: ParameterSet) -> ParameterSet:
    """Gradients for ``params`` out of wrapped nodes; missing grads are zero."""
    grads = ParameterSet()
    for name, arr in params.items():
        node = nodes.get(name)
        if node is not None and node.grad is not None:
            grads[name] = node.grad
        else:
            grads[name] = np.zeros_like(arr)
    return grads


def value_and_grad(loss_fn, params: ParameterSet):
    """Evaluate ``loss_fn(params, nodes)`` and return (scalar loss, grads).

    ``loss_fn`` must route every parameter it uses through the ``nodes``
    dict (as ``mlp_forward`` does) and return a scalar Node.
    """
    nodes: dict[str, ad.Node] = {}
    loss = loss_fn(params, nodes)
    ad.backward(loss)
    return float(loss.value), collect_grads(nodes, params)


def grad_check(loss_fn, params: ParameterSet, eps: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
    """
    _, grads = value_and_grad(loss_fn, params)
    analytic = grads.flatten()
    flat = params.flatten()
    numeric = np.zeros_like(flat)

    def eval_at(vec):
        probe = params.copy()
        probe.unflatten(vec)
        nodes: dict[str, ad.Node] = {}
        return float(loss_fn(probe, nodes).value)

    for i in range(flat.size):
        v_plus = flat.copy()
        v_plus[i] += eps
        v_minus = flat.copy()
        v_minus[i] -= eps
        numeric[i] = (eval_at(v_plus) - eval_at(v_minus)) / (2.0 * eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
