"""Network construction: the mapping/extractor/head collection and its two
optimization groups (extractors vs. recognition/discrimination heads)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, ShapeError
from .tensor import Tensor, batchnorm, dropout


@dataclass
class LayerSpec:
    kind: str  # dense | batchnorm | activation | dropout
    width: int = 0
    activation: str = ""
    rate: float = 0.0


@dataclass
class NetworkSpec:
    in_dim: int
    layers: list[LayerSpec]

    def to_json(self) -> dict:
        return {
            "in_dim": self.in_dim,
            "layers": [vars(l) for l in self.layers],
        }

    @staticmethod
    def from_json(obj: dict) -> "NetworkSpec":
        return NetworkSpec(obj["in_dim"], [LayerSpec(**l) for l in obj["layers"]])


class Network:
    """Sequential network instantiated from a NetworkSpec."""

    def __init__(self, spec: NetworkSpec, rng: np.random.Generator):
        self.spec = spec
        self.params: list[Tensor] = []
        self._layers = []
        width = spec.in_dim
        for layer in spec.layers:
            if layer.kind == "dense":
                bound = 1.0 / np.sqrt(width)
                w = Tensor(rng.uniform(-bound, bound, size=(width, layer.width)), requires_grad=True)
                b = Tensor(np.zeros(layer.width), requires_grad=True)
                self.params += [w, b]
                self._layers.append(("dense", (w, b)))
                width = layer.width
            elif layer.kind == "batchnorm":
                scale = Tensor(np.ones(width), requires_grad=True)
                shift = Tensor(np.zeros(width), requires_grad=True)
                self.params += [scale, shift]
                state = {
                    "scale": scale,
                    "shift": shift,
                    "running_mean": np.zeros(width),
                    "running_var": np.ones(width),
                }
                self._layers.append(("batchnorm", state))
            elif layer.kind == "activation":
                self._layers.append(("activation", layer.activation))
            elif layer.kind == "dropout":
                self._layers.append(("dropout", layer.rate))
            else:
                raise ConfigError(f"unknown layer kind {layer.kind!r}")
        self.out_dim = width

    def forward(
        self,
        x: Tensor,
        mode: str = "infer",
        rng: np.random.Generator | None = None,
        update_stats: bool = True,
        dropout_off: bool = False,
    ) -> Tensor:
        if x.data.ndim != 2 or x.data.shape[1] != self.spec.in_dim:
            raise ShapeError(
                f"expected input width {self.spec.in_dim}, got {x.data.shape}"
            )
        for kind, payload in self._layers:
            if kind == "dense":
                w, b = payload
                x = x @ w + b
            elif kind == "batchnorm":
                x = batchnorm(
                    x,
                    payload["scale"],
                    payload["shift"],
                    payload["running_mean"],
                    payload["running_var"],
                    mode=mode,
                    update_stats=update_stats and mode == "train",
                )
            elif kind == "activation":
                if payload == "tanh":
                    x = x.tanh()
                elif payload == "relu":
                    x = x.relu()
                elif payload == "swish":
                    x = x.swish()
                elif payload == "softmax":
                    x = x.softmax_rows()
                else:
                    raise ConfigError(f"unknown activation {payload!r}")
            elif kind == "dropout":
                if mode == "train" and not dropout_off:
                    x = dropout(x, payload, rng, mode)
        return x

    __call__ = forward

    def bn_buffers(self) -> list[np.ndarray]:
        out = []
        for kind, payload in self._layers:
            if kind == "batchnorm":
                out += [payload["running_mean"], payload["running_var"]]
        return out


def mapping_spec(d: int, width: int, drop_rate: float) -> NetworkSpec:
    """Input mapping network: dense, batchnorm, swish, dropout.

    The source design places the dropout after a pooling stage that a
    fully-connected stack does not have; here it follows the activation.
    """
    return NetworkSpec(
        d,
        [
            LayerSpec("dense", width=width),
            LayerSpec("batchnorm"),
            LayerSpec("activation", activation="swish"),
            LayerSpec("dropout", rate=drop_rate),
        ],
    )


def extractor_spec(in_dim: int, width: int) -> NetworkSpec:
    return NetworkSpec(
        in_dim,
        [LayerSpec("dense", width=width), LayerSpec("activation", activation="tanh")],
    )


def head_spec(in_dim: int, out_dim: int) -> NetworkSpec:
    return NetworkSpec(
        in_dim,
        [LayerSpec("dense", width=out_dim), LayerSpec("activation", activation="softmax")],
    )


VARIANTS = (
    "full",
    "direct",
    "single_space",
    "feature_based",
    "class_confuse",
    "no_unification",
    "meta",
)


@dataclass
class ModelBundle:
    """Full network collection plus the two alternating parameter groups.

    Depending on the variant, some members are None; group selection skips
    them. `p` maps inputs to a shared hidden code; `g_cd`/`g_ci` extract the
    class-dependent and class-independent features; the remaining members are
    softmax heads over classes (global/local recognizers) or domains
    (discriminators).
    """

    variant: str
    d: int
    c: int
    k: int
    p: Network
    g_cd: Network
    g_ci: Network | None
    r_g_cd: Network | None
    r_g_ci: Network | None
    r_l_cd: list[Network] = field(default_factory=list)
    r_l_ci: list[Network] = field(default_factory=list)
    d_cd: Network | None = None
    d_ci: Network | None = None

    def _head_networks(self) -> list[Network]:
        nets = []
        for net in (self.r_g_cd, self.r_g_ci, self.d_cd, self.d_ci):
            if net is not None:
                nets.append(net)
        nets += list(self.r_l_cd) + list(self.r_l_ci)
        return nets

    def extractor_params(self) -> list[Tensor]:
        params = list(self.p.params) + list(self.g_cd.params)
        if self.g_ci is not None:
            params += self.g_ci.params
        return params

    def head_params(self) -> list[Tensor]:
        params: list[Tensor] = []
        for net in self._head_networks():
            params += net.params
        return params

    def all_params(self) -> list[Tensor]:
        return self.extractor_params() + self.head_params()

    def select_group(self, which: str) -> list[Tensor]:
        if which == "extractors":
            return self.extractor_params()
        if which == "heads":
            return self.head_params()
        raise ConfigError(f"unknown parameter group {which!r}")

    def forward_features(
        self,
        x: Tensor,
        mode: str = "infer",
        rng: np.random.Generator | None = None,
        update_stats: bool = False,
        dropout_off: bool = False,
    ) -> tuple[Tensor, Tensor | None]:
        fc = self.p.forward(x, mode=mode, rng=rng, update_stats=update_stats, dropout_off=dropout_off)
        f_cd = self.g_cd.forward(fc, mode=mode, rng=rng, update_stats=update_stats, dropout_off=dropout_off)
        f_ci = None
        if self.g_ci is not None:
            f_ci = self.g_ci.forward(fc, mode=mode, rng=rng, update_stats=update_stats, dropout_off=dropout_off)
        return f_cd, f_ci


def build_bundle(
    d: int,
    c: int,
    k: int,
    p_width: int = 512,
    g_width: int = 128,
    p_dropout: float = 0.5,
    seed: int | np.random.Generator = 0,
    variant: str = "full",
) -> ModelBundle:
    if d < 2 or c < 2:
        raise ConfigError("need input dim >= 2 and classes >= 2")
    if k < 2:
        raise ConfigError("need at least 2 latent domains")
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    has_ci = variant in ("full", "meta", "feature_based", "class_confuse")
    has_local = variant in ("full", "meta", "single_space", "no_unification")
    has_disc_cd = variant in ("full", "meta", "single_space", "feature_based", "no_unification")
    has_global_cd = variant != "no_unification"

    p = Network(mapping_spec(d, p_width, p_dropout), rng)
    g_cd = Network(extractor_spec(p.out_dim, g_width), rng)
    g_ci = Network(extractor_spec(p.out_dim, g_width), rng) if has_ci else None
    r_g_cd = Network(head_spec(g_width, c), rng) if has_global_cd else None
    r_g_ci = Network(head_spec(g_width, c), rng) if has_ci else None
    r_l_cd = [Network(head_spec(g_width, c), rng) for _ in range(k)] if has_local else []
    r_l_ci = (
        [Network(head_spec(g_width, c), rng) for _ in range(k)]
        if has_local and has_ci
        else []
    )
    d_cd = Network(head_spec(g_width, k), rng) if has_disc_cd else None
    d_ci = Network(head_spec(g_width, k), rng) if has_disc_cd and has_ci else None

    return ModelBundle(
        variant=variant,
        d=d,
        c=c,
        k=k,
        p=p,
        g_cd=g_cd,
        g_ci=g_ci,
        r_g_cd=r_g_cd,
        r_g_ci=r_g_ci,
        r_l_cd=r_l_cd,
        r_l_ci=r_l_ci,
        d_cd=d_cd,
        d_ci=d_ci,
    )


# -- checkpoint persistence ---------------------------------------------------

_MEMBERS = ("p", "g_cd", "g_ci", "r_g_cd", "r_g_ci", "d_cd", "d_ci")


def _named_networks(bundle: ModelBundle):
    for name in _MEMBERS:
        net = getattr(bundle, name)
        if net is not None:
            yield name, net
    for r, net in enumerate(bundle.r_l_cd):
        yield f"r_l_cd.{r}", net
    for r, net in enumerate(bundle.r_l_ci):
        yield f"r_l_ci.{r}", net


def save_checkpoint(bundle: ModelBundle, path: str):
    """Write named float64 parameter arrays plus structure metadata (npz)."""
    arrays: dict[str, np.ndarray] = {}
    meta = {
        "format": "gcldr-checkpoint",
        "version": 1,
        "variant": bundle.variant,
        "d": bundle.d,
        "c": bundle.c,
        "k": bundle.k,
        "networks": {},
    }
    for name, net in _named_networks(bundle):
        meta["networks"][name] = net.spec.to_json()
        for i, p in enumerate(net.params):
            arrays[f"{name}.param.{i}"] = p.data
        for i, buf in enumerate(net.bn_buffers()):
            arrays[f"{name}.bn.{i}"] = buf
    arrays["__meta__"] = np.frombuffer(
        json.dumps(meta).encode("utf-8"), dtype=np.uint8
    )
    np.savez(path, **arrays)


def load_checkpoint(path: str) -> ModelBundle:
    with np.load(path) as zf:
        meta = json.loads(bytes(zf["__meta__"].tobytes()).decode("utf-8"))
        bundle = build_bundle(
            meta["d"],
            meta["c"],
            meta["k"],
            p_width=1,  # overwritten below; specs come from metadata
            variant=meta["variant"],
        )
        rng = np.random.default_rng(0)
        for name, spec_json in meta["networks"].items():
            net = Network(NetworkSpec.from_json(spec_json), rng)
            for i, p in enumerate(net.params):
                p.data = zf[f"{name}.param.{i}"].copy()
            for i, buf in enumerate(net.bn_buffers()):
                buf[...] = zf[f"{name}.bn.{i}"]
            if "." in name and name.rsplit(".", 1)[-1].isdigit():
                family, idx = name.rsplit(".", 1)
                getattr(bundle, family)[int(idx)] = net
            else:
                setattr(bundle, name, net)
    return bundle
