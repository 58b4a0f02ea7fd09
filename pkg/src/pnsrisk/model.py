"""Gaussian representation encoder, linear labeler, and their surrogates.

The encoder is a three-layer perceptron producing the posterior mean of
a diagonal Gaussian over representations; the variance is either a
learned per-dimension vector shared across inputs or a fixed constant.
Sampling is reparameterized (mean + sd * eps) so gradients reach the
encoder parameters.  The labeler is sign(w.c), with the tie w.c = 0
mapped to label 1.

Two differentiable surrogates stand in for the indicator quantities:

* sufficiency surrogate: mean softplus(-ytil * w.c), ytil = 2y - 1,
* agreement surrogate:   mean of p*q + (1-p)*(1-q) over draw pairs,
  p = sigmoid(w.c), q = sigmoid(w.cbar),

both of which approach the indicators as |w.c| grows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, affine, constant, elu, parameter, sigmoid, softplus

__all__ = [
    "Mlp",
    "GaussianEncoder",
    "LinearHead",
    "GaussianPrior",
    "predict",
    "surrogate_sf",
    "surrogate_m",
    "clone_perturbed",
    "save_checkpoint",
    "load_checkpoint",
]


class Mlp:
    """in -> 128 -> 32 -> out, ELU between layers, linear output."""

    def __init__(self, in_dim, out_dim, hidden=(128, 32), rng=None, prefix="mlp"):
        if rng is None:
            rng = np.random.default_rng(0)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.hidden = tuple(hidden)
        dims = (in_dim, *self.hidden, out_dim)
        self.weights = []
        self.biases = []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            w = parameter(rng.standard_normal((a, b)) / np.sqrt(a), name=f"{prefix}.w{i}")
            self.weights.append(w)
            self.biases.append(parameter(np.zeros(b), name=f"{prefix}.b{i}"))

    def forward(self, x):
        if not isinstance(x, Tensor):
            x = constant(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = affine(h, w, b)
            if i != last:
                h = elu(h)
        return h

    def forward_np(self, x):
        """Graph-free forward for evaluation and Monte Carlo estimation."""
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.data + b.data
            if i != last:
                h = np.where(h > 0.0, h, np.expm1(np.minimum(h, 0.0)))
        return h

    def parameters(self):
        out = {}
        for w, b in zip(self.weights, self.biases):
            out[w.name] = w
            out[b.name] = b
        return out


@dataclass(frozen=True)
class GaussianPrior:
    """Diagonal Gaussian the posteriors are pulled toward.  Plain arrays:
    priors take no part in optimization."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "var", np.asarray(self.var, dtype=np.float64))
        if self.mean.shape != self.var.shape or self.mean.ndim != 1:
            raise ValueError("prior mean and var must be matching vectors")
        if np.any(self.var <= 0.0):
            raise ValueError("prior variance must be strictly positive")

    @classmethod
    def standard(cls, dim):
        return cls(np.zeros(dim), np.ones(dim))


class GaussianEncoder:
    """Diagonal-Gaussian posterior over representations.

    fixed_var=None learns log-variance per dimension (one vector shared
    across inputs); a float freezes the variance at that value.
    """

    def __init__(self, in_dim, rep_dim=64, hidden=(128, 32), rng=None,
                 fixed_var=None, prefix="enc"):
        if rng is None:
            rng = np.random.default_rng(0)
        self.in_dim = in_dim
        self.rep_dim = rep_dim
        self.prefix = prefix
        self.mlp = Mlp(in_dim, rep_dim, hidden=hidden, rng=rng, prefix=f"{prefix}.mean")
        if fixed_var is None:
            self.log_var = parameter(np.zeros(rep_dim), name=f"{prefix}.log_var")
            self.fixed_var = None
        else:
            if fixed_var <= 0.0:
                raise ValueError("fixed_var must be strictly positive")
            self.log_var = None
            self.fixed_var = float(fixed_var)

    def encode(self, x):
        """Posterior mean as a graph node, shape (n, rep_dim)."""
        return self.mlp.forward(x)

    def var_np(self):
        if self.fixed_var is not None:
            return np.full(self.rep_dim, self.fixed_var)
        return np.exp(self.log_var.data)

    def encode_np(self, x):
        mean = self.mlp.forward_np(x)
        return mean, np.broadcast_to(self.var_np(), mean.shape)

    def draw(self, mean, eps):
        """Reparameterized draw mean + sd * eps from an existing mean
        node; eps enters as a constant so gradients flow to the mean
        network and the log-variance."""
        eps_t = constant(np.asarray(eps, dtype=np.float64))
        if eps_t.data.shape != mean.data.shape:
            raise ValueError(f"eps shape {eps_t.data.shape} != mean shape {mean.data.shape}")
        if self.fixed_var is not None:
            return mean + eps_t * np.sqrt(self.fixed_var)
        sd = (self.log_var * 0.5).exp()
        return mean + eps_t * sd

    def sample(self, x, eps):
        return self.draw(self.encode(x), eps)

    def sample_np(self, x, n_draws, gen):
        """n_draws graph-free draws per input row, shape (n_draws, n, rep)."""
        mean, var = self.encode_np(x)
        eps = gen.standard_normal((n_draws,) + mean.shape)
        return mean[None, :, :] + np.sqrt(var)[None, :, :] * eps

    def kl_node(self, mean, prior):
        """Mean-over-batch KL(q(.|x) || prior) as a graph node.

        Closed form for diagonal Gaussians; the variance part is shared
        across the batch because the posterior variance does not depend
        on x.
        """
        n, rep = mean.data.shape
        inv_pv = 1.0 / prior.var
        diff = mean - constant(prior.mean)
        mean_part = (diff * diff * constant(inv_pv)).sum(axis=1).mean()
        log_pv_sum = float(np.log(prior.var).sum())
        if self.fixed_var is not None:
            var_part = constant(
                log_pv_sum
                - rep * np.log(self.fixed_var)
                + float((self.fixed_var * inv_pv).sum())
                - rep
            )
        else:
            var_part = (
                (self.log_var.exp() * constant(inv_pv)).sum()
                - self.log_var.sum()
                + constant(log_pv_sum - rep)
            )
        return (var_part + mean_part) * 0.5

    def parameters(self):
        out = self.mlp.parameters()
        if self.log_var is not None:
            out[self.log_var.name] = self.log_var
        return out


class LinearHead:
    """Linear labeler over representations: logit = c @ w + b."""

    def __init__(self, rep_dim, rng=None, bias=False, prefix="head"):
        if rng is None:
            rng = np.random.default_rng(0)
        self.rep_dim = rep_dim
        self.w = parameter(rng.standard_normal(rep_dim) / np.sqrt(rep_dim), name=f"{prefix}.w")
        self.b = parameter(np.zeros(1), name=f"{prefix}.b") if bias else None

    def logits(self, c):
        z = c @ self.w
        if self.b is not None:
            z = z + self.b
        return z

    def logits_np(self, c):
        z = np.asarray(c, dtype=np.float64) @ self.w.data
        if self.b is not None:
            z = z + self.b.data[0]
        return z

    def parameters(self):
        out = {self.w.name: self.w}
        if self.b is not None:
            out[self.b.name] = self.b
        return out


def predict(head, encoder, x):
    """Hard labels from the posterior mean: 1 where the logit is >= 0.

    The tie logit == 0 maps to label 1.
    """
    mean, _ = encoder.encode_np(x)
    return (head.logits_np(mean) >= 0.0).astype(np.int64)


def _ytil(y):
    y = np.asarray(y)
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return y.astype(np.float64) * 2.0 - 1.0


def surrogate_sf(head, c, y):
    """Differentiable stand-in for P(sign(w.c) != y): mean softplus of the
    margin deficit.  Equals ln 2 at w.c = 0 and decays to the indicator
    as the margin grows."""
    z = head.logits(c)
    return softplus(z * constant(-_ytil(y))).mean()


def surrogate_m(head, c, c_bar):
    """Differentiable stand-in for the probability that the two routes
    agree in sign: mean over pairs of p*q + (1-p)*(1-q)."""
    p = sigmoid(head.logits(c))
    q = sigmoid(head.logits(c_bar))
    one = constant(1.0)
    return (p * q + (one - p) * (one - q)).mean()


def clone_perturbed(encoder, rng, scale=0.01):
    """Fresh encoder with the same architecture whose parameters start a
    small random step away from the source's."""
    twin = GaussianEncoder(
        encoder.in_dim,
        rep_dim=encoder.rep_dim,
        hidden=encoder.mlp.hidden,
        rng=np.random.default_rng(0),
        fixed_var=encoder.fixed_var,
        prefix=f"{encoder.prefix}_twin",
    )
    src = list(encoder.parameters().values())
    dst = list(twin.parameters().values())
    for s, d in zip(src, dst):
        d.data = s.data + scale * rng.standard_normal(s.data.shape)
    return twin


# ---- checkpoint format ----
#
# Plain text, bit-exact through float hex:
#
#   pnsrisk-checkpoint 1
#   meta <key> <value>
#   param <name> <d0> [<d1> ...]
#   <up to 8 hex floats per line, row-major, until the shape is filled>

_MAGIC = "pnsrisk-checkpoint 1"


def save_checkpoint(path, params, meta=None):
    """params: {name: Tensor or ndarray}; meta: {str: str}."""
    lines = [_MAGIC]
    for key, value in (meta or {}).items():
        if " " in str(key):
            raise ValueError("meta keys must not contain spaces")
        lines.append(f"meta {key} {value}")
    for name, value in params.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
        dims = " ".join(str(d) for d in arr.shape) if arr.ndim else "0"
        lines.append(f"param {name} {dims}")
        flat = arr.reshape(-1)
        for start in range(0, flat.size, 8):
            lines.append(" ".join(float(v).hex() for v in flat[start : start + 8]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path):
    """Returns ({name: ndarray}, {meta key: value})."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    params = {}
    meta = {}
    i = 1
    while i < len(lines):
        tokens = lines[i].split()
        if tokens[0] == "meta":
            meta[tokens[1]] = " ".join(tokens[2:])
            i += 1
            continue
        if tokens[0] != "param":
            raise ValueError(f"{path}: unexpected line {i + 1}: {lines[i]!r}")
        name = tokens[1]
        shape = tuple(int(d) for d in tokens[2:])
        if shape == (0,):
            shape = ()
        count = int(np.prod(shape)) if shape else 1
        values = []
        i += 1
        while len(values) < count:
            values.extend(float.fromhex(tok) for tok in lines[i].split())
            i += 1
        params[name] = np.array(values, dtype=np.float64).reshape(shape)
    return params, meta
