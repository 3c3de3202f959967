"""Network specifications, the three shipped architectures, and forward/backward passes."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..imaging import ImageType
from . import layers as L

#: fixed number of images per inference chunk; padding the last chunk keeps
#: each image's probability independent of how callers group their batches
INFERENCE_CHUNK = 32

#: softmax column order
CLASSES = ("interictal", "preictal")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int | None = None
    kernel: tuple[int, int] | None = None
    stride: tuple[int, int] | None = None
    padding: tuple[int, int, int, int] | None = None
    pool: tuple[int, int] | None = None
    rate: float | None = None
    units: int | None = None

    def __post_init__(self):
        if self.kind not in _BUILDERS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.padding is not None and any(p < 0 for p in self.padding):
            raise ValueError(f"negative padding {self.padding}")
        if self.stride is not None and any(s < 1 for s in self.stride):
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.rate is not None and not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> LayerSpec:
        d = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
        return cls(**d)

    def build(self) -> L.Layer:
        return _BUILDERS[self.kind](self)


_BUILDERS = {
    "conv": lambda s: L.Conv2D(s.filters, s.kernel, s.stride or (1, 1), s.padding or (0, 0, 0, 0)),
    "batchnorm": lambda s: L.BatchNorm(),
    "instancenorm": lambda s: L.InstanceNorm(),
    "relu": lambda s: L.ReLU(),
    "maxpool": lambda s: L.MaxPool(s.pool, s.stride or s.pool),
    "dropout": lambda s: L.Dropout(s.rate if s.rate is not None else 0.5),
    "fullyconnected": lambda s: L.FullyConnected(s.units),
    "softmax": lambda s: L.Softmax(),
}


def conv(filters, kernel, stride=1, padding=(0, 0, 0, 0)) -> LayerSpec:
    if isinstance(stride, int):
        stride = (stride, stride)
    return LayerSpec("conv", filters=filters, kernel=tuple(kernel), stride=tuple(stride), padding=tuple(padding))


def maxpool(pool, stride) -> LayerSpec:
    if isinstance(stride, int):
        stride = (stride, stride)
    return LayerSpec("maxpool", pool=tuple(pool), stride=tuple(stride))


BN = LayerSpec("batchnorm")
IN = LayerSpec("instancenorm")
RELU = LayerSpec("relu")
HEAD = (
    LayerSpec("dropout", rate=0.5),
    LayerSpec("fullyconnected", units=256),
    LayerSpec("fullyconnected", units=2),
    LayerSpec("softmax"),
)


@dataclass(frozen=True)
class NetworkSpec:
    input_h: int
    input_w: int
    layers: tuple[LayerSpec, ...]
    image_type: str | None = None

    def __post_init__(self):
        shapes = self.shapes()
        if self.layers[-1].kind != "softmax" or shapes[-1] != (2,):
            raise ValueError("network must end in a 2-way softmax")

    def shapes(self) -> list[tuple[int, ...]]:
        """Output shape after every layer, starting with the input ``(h, w, 1)``."""
        shape: tuple[int, ...] = (self.input_h, self.input_w, 1)
        out = [shape]
        for i, spec in enumerate(self.layers):
            shape = spec.build().output_shape(shape)
            if any(d < 1 for d in shape):
                raise ValueError(f"layer {i} ({spec.kind}) produces empty output {shape}")
            out.append(shape)
        return out

    def feature_shape(self) -> tuple[int, ...]:
        """Shape entering the first fully connected layer."""
        shapes = self.shapes()
        first_fc = next(i for i, s in enumerate(self.layers) if s.kind == "fullyconnected")
        return shapes[first_fc]

    def to_dict(self) -> dict:
        return {
            "input_h": self.input_h,
            "input_w": self.input_w,
            "image_type": self.image_type,
            "layers": [s.to_dict() for s in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> NetworkSpec:
        return cls(d["input_h"], d["input_w"], tuple(LayerSpec.from_dict(s) for s in d["layers"]), d.get("image_type"))


def build_arch(image_type, channels: int = 19, width: int = 256) -> NetworkSpec:
    """Layer list for the 1 s, 5 s or 10 s image classifier.

    Padding tuples are ``(top, bottom, left, right)``.
    """
    it = ImageType.parse(image_type)
    if it is ImageType.ONE_SEC:
        body = (
            conv(64, (3, 27), (1, 3), (0, 1, 1, 1)), BN, RELU,
            maxpool((1, 2), (1, 2)),
            conv(128, (5, 5), (1, 2)), IN, RELU,
            conv(256, (5, 3), (1, 2), (0, 0, 1, 2)), IN, RELU,
            conv(512, (3, 3)), RELU,
        )
    elif it is ImageType.FIVE_SEC:
        body = (
            conv(64, (3, 11), 2, (1, 1, 2, 3)), BN, RELU,
            maxpool((1, 2), (1, 2)),
            conv(128, (5, 5), 1, (0, 0, 0, 1)), IN, RELU,
            maxpool((2, 2), 2),
            conv(256, (5, 5), (2, 3), (0, 1, 1, 1)), IN, RELU,
            conv(512, (3, 3)), RELU,
        )
    else:
        body = (
            conv(32, (3, 27), 3, (4, 4, 1, 1)), IN, RELU,
            maxpool((2, 2), 2),
            conv(64, (5, 5), 2, (1, 1, 0, 0)), IN, RELU,
            conv(64, (3, 5)), IN, RELU,
            conv(128, (3, 3)), RELU,
            conv(256, (3, 3)), RELU,
        )
    return NetworkSpec(channels * it.seconds, width, body + HEAD, it.label)


@dataclass
class Network:
    spec: NetworkSpec
    seed: int = 0
    dtype: type = np.float32
    layers: list = field(init=False, repr=False)
    #: softmax outputs of the most recent training pass
    last_probs: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.dtype = np.dtype(self.dtype).type
        rng = np.random.default_rng(self.seed)
        self.layers = [s.build() for s in self.spec.layers]
        shapes = self.spec.shapes()
        for layer, shape in zip(self.layers, shapes):
            layer.init_params(shape, rng, self.dtype)
        self.layers[0].needs_input_grad = False

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Trainable parameters and running statistics in declaration order."""
        out = []
        for i, layer in enumerate(self.layers):
            out += [(f"{i}.{k}", v) for k, v in layer.params.items()]
            out += [(f"{i}.{k}", v) for k, v in layer.buffers.items()]
        return out

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{i}.{k}", v) for i, layer in enumerate(self.layers) for k, v in layer.params.items()]

    def set_array(self, name: str, value: np.ndarray) -> None:
        idx, key = name.split(".", 1)
        layer = self.layers[int(idx)]
        store = layer.params if key in layer.params else layer.buffers
        if store[key].shape != value.shape:
            raise ValueError(f"shape mismatch for {name}: {store[key].shape} vs {value.shape}")
        store[key] = value.astype(self.dtype, copy=False)

    def _check_input(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images)
        if images.ndim == 2:
            images = images[None]
        if images.shape[1:] != (self.spec.input_h, self.spec.input_w):
            raise ValueError(
                f"image shape {images.shape[1:]} does not match network input "
                f"{(self.spec.input_h, self.spec.input_w)}"
            )
        return images.astype(self.dtype, copy=False)[..., None]

    def logits(self, images, train=False, rng=None) -> np.ndarray:
        x = self._check_input(images)
        for layer in self.layers[:-1]:
            x = layer.forward(x, train=train, rng=rng)
        return x


def forward(net: Network, images, mode: str = "inference", rng=None) -> np.ndarray:
    """Class probabilities ``(p_interictal, p_preictal)`` for each image.

    Accepts a single ``(h, w)`` image or a ``(n, h, w)`` stack and returns an
    ``(n, 2)`` array.  Inference runs in fixed-size chunks so the output for
    an image does not depend on what else is in the batch.
    """
    if mode not in ("train", "inference"):
        raise ValueError(f"mode must be 'train' or 'inference', got {mode!r}")
    if mode == "train":
        return L.softmax(net.logits(images, train=True, rng=rng))
    images = np.asarray(images)
    if images.ndim == 2:
        images = images[None]
    n = len(images)
    out = np.empty((n, 2), dtype=net.dtype)
    for s in range(0, n, INFERENCE_CHUNK):
        chunk = images[s : s + INFERENCE_CHUNK]
        m = len(chunk)
        if m < INFERENCE_CHUNK:
            pad = np.zeros((INFERENCE_CHUNK - m,) + chunk.shape[1:], dtype=chunk.dtype)
            chunk = np.concatenate([chunk, pad])
        out[s : s + m] = L.softmax(net.logits(chunk))[:m]
    return out


def predict_proba(net: Network, images) -> np.ndarray:
    """Pre-ictal probability (second softmax output) per image."""
    return forward(net, images)[:, 1]


def backward(net: Network, images, labels, rng=None) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy loss over the batch and its gradient for every trainable parameter.

    ``labels`` holds 0 (inter-ictal) / 1 (pre-ictal).  Runs the network in
    train mode, so dropout draws from ``rng`` and batch norm uses batch
    statistics.
    """
    labels = np.asarray(labels)
    logits = net.logits(images, train=True, rng=rng)
    n = logits.shape[0]
    p = L.softmax(logits)
    net.last_probs = p
    picked = p[np.arange(n), labels]
    loss = float(-np.log(np.maximum(picked, np.finfo(p.dtype).tiny)).sum() / n)
    grad = p.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    for layer in reversed(net.layers[:-1]):
        grad = layer.backward(grad)
        if grad is None:
            break
    grads = {f"{i}.{k}": g for i, layer in enumerate(net.layers) for k, g in layer.grads.items()}
    return loss, grads
