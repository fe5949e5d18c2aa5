"""Fusion-and-aggregation retrieval model over pluggable encoders.

A composed query is built in three stages: encode the reference image and
the relative caption into token features plus a global feature each; run
the concatenated spans [visual; separator; text] through a small pre-norm
transformer ("fusion"); then aggregate.  Aggregation projects the fused
global positions through an MLP into a joint feature, maps that feature to
three scalar weights, and mixes

    query = w1 * visual_global + w2 * joint + w3 * text_global

Two ablation variants exist: "no_fusion" skips the transformer and feeds
the raw globals to the MLP; "static_aggregation" replaces the data-driven
weights with three free learnable scalars.  Training minimizes a batch
softmax over query/target cosines (temperature 0.01): each query must
classify its own target among the in-batch negatives.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import numcore as nc
from .chunker import tokenize
from .errors import ValidationError
from .rng import HashRng
from .store import EmbeddingStore, token_vector
from .numcore import Tensor

VARIANTS = ("full", "no_fusion", "static_aggregation")
FINETUNE_MODES = ("freeze", "text_only", "both")
DEFAULT_TAU = 0.01


@dataclass
class ModelConfig:
    dim: int
    fusion_layers: int = 2
    heads: int = 8
    variant: str = "full"
    finetune: str = "freeze"

    def __post_init__(self):
        if self.dim < 1 or self.fusion_layers < 1:
            raise ValidationError("dim and fusion_layers must be positive")
        if self.dim % self.heads != 0:
            raise ValidationError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.finetune not in FINETUNE_MODES:
            raise ValidationError(f"finetune must be one of {FINETUNE_MODES}, got {self.finetune!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, blob: dict) -> "ModelConfig":
        return cls(**blob)


class ToyEncoders:
    """Trainable desk-scale encoders over a caption corpus.

    Text: tokens index a learned embedding table; the mean of the token
    rows is prepended as the index-0 global token.  Image: each id has a
    fixed pseudo-random feature grid derived from its caption's tokens
    (row 0 is the caption-level vector, the "global patch"), pushed
    through a trainable linear layer.  Deriving grids from captions makes
    an image "depict" its caption, so mining, training and evaluation are
    semantically coherent without any pretrained weights.
    """

    IMAGE_TOKENS = 17
    MAX_TEXT_TOKENS = 32  # including the global token
    GRID_WIDTH = 256  # raw grid width; wider than d so token identities stay separable

    def __init__(self, corpus, dim: int, seed: int = 0, grid_width: int | None = None):
        self.dim = dim
        self.seed = seed
        self.grid_width = grid_width or max(self.GRID_WIDTH, dim)
        self._captions = {r.id: r.caption for r in corpus}
        vocab = {"<unk>"}
        for caption in self._captions.values():
            vocab.update(tokenize(caption))
        vocab.update(_EDIT_VOCABULARY)
        self._vocab = {tok: i for i, tok in enumerate(sorted(vocab))}
        self._grids: dict[int, np.ndarray] = {}

    # -- parameters -------------------------------------------------------

    def param_specs(self) -> list[tuple[str, tuple, str]]:
        v = len(self._vocab)
        return [
            ("enc.text.embed", (v, self.dim), "embedding"),
            ("enc.img.proj_w", (self.grid_width, self.dim), "linear"),
            ("enc.img.proj_b", (self.dim,), "zeros"),
        ]

    @property
    def text_param_names(self) -> set[str]:
        return {"enc.text.embed"}

    @property
    def image_param_names(self) -> set[str]:
        return {"enc.img.proj_w", "enc.img.proj_b"}

    # -- encoding ---------------------------------------------------------

    def resolvable(self, image_id: int) -> bool:
        return image_id in self._captions

    def token_ids(self, caption: str) -> np.ndarray:
        unk = self._vocab["<unk>"]
        toks = tokenize(caption)[: self.MAX_TEXT_TOKENS - 1]
        if not toks:
            toks = ["<unk>"]
        return np.array([self._vocab.get(t, unk) for t in toks], dtype=np.int64)

    def encode_text(self, caption: str, params) -> tuple[Tensor, Tensor]:
        idx = self.token_ids(caption)
        tokens = nc.embedding_lookup(params["enc.text.embed"], idx)
        global_row = nc.mul_scalar(nc.sum_axis(tokens, axis=0, keepdims=True), 1.0 / len(idx))
        return nc.concat([global_row, tokens], axis=0), global_row

    def _grid(self, image_id: int) -> np.ndarray:
        grid = self._grids.get(image_id)
        if grid is None:
            caption = self._captions.get(image_id)
            if caption is None:
                raise ValidationError(f"unknown image id {image_id}")
            toks = tokenize(caption) or [""]
            width = self.grid_width
            grid = np.empty((self.IMAGE_TOKENS, width))
            acc = np.zeros(width)
            for tok in toks:
                acc += token_vector(tok, width, self.seed)
            grid[0] = acc / np.linalg.norm(acc)
            for row in range(1, self.IMAGE_TOKENS):
                grid[row] = token_vector(toks[(row - 1) % len(toks)], width, self.seed)
            self._grids[image_id] = grid
        return grid

    def encode_image(self, image_id: int, params) -> tuple[Tensor, Tensor]:
        grid = nc.constant(self._grid(image_id))
        features = nc.linear(grid, params["enc.img.proj_w"], params["enc.img.proj_b"])
        return features, nc.rows(features, 0, 1)


class StoreEncoders:
    """Frozen encoders serving precomputed global features.

    Image features come from an image-kind embedding store; captions are
    embedded by an injected callable (synthetic or exported).  Token spans
    are the single global row, which is what the frozen regime needs.
    """

    IMAGE_TOKENS = 1
    MAX_TEXT_TOKENS = 1

    def __init__(self, image_store: EmbeddingStore, embed_text):
        self._store = image_store
        self._embed = embed_text
        self.dim = image_store.dim

    def param_specs(self):
        return []

    @property
    def text_param_names(self) -> set[str]:
        return set()

    @property
    def image_param_names(self) -> set[str]:
        return set()

    def resolvable(self, image_id: int) -> bool:
        return image_id in self._store

    def encode_text(self, caption: str, params) -> tuple[Tensor, Tensor]:
        row = nc.constant(np.asarray(self._embed(caption), dtype=np.float64).reshape(1, -1))
        return row, row

    def encode_image(self, image_id: int, params) -> tuple[Tensor, Tensor]:
        try:
            vec = self._store.vector(image_id)
        except KeyError:
            raise ValidationError(f"unknown image id {image_id}") from None
        row = nc.constant(vec.astype(np.float64).reshape(1, -1))
        return row, row


# Tokens the relative captions can introduce beyond corpus words: template
# scaffolding, digits, connectives, and the antonym/comparative vocabulary.
def _edit_vocabulary() -> set[str]:
    from .templates import EditType, list_templates, _ANTONYMS

    vocab: set[str] = set()
    for edit_type in EditType:
        for template in list_templates(edit_type):
            vocab.update(tokenize(template))
    for adj, (ant, comp) in _ANTONYMS.items():
        vocab.update(tokenize(adj))
        vocab.update(tokenize(ant))
        vocab.update(tokenize(comp))
    vocab.update(str(n) for n in range(0, 11))
    vocab.update(["and", "with", "small", "big"])
    return vocab


_EDIT_VOCABULARY = _edit_vocabulary()


class ComposedQueryModel:
    """Composable query model: encoders + transformer fusion + aggregation."""

    def __init__(self, config: ModelConfig, encoders, params: dict[str, Tensor]):
        self.config = config
        self.encoders = encoders
        self.params = params

    # -- construction -----------------------------------------------------

    @classmethod
    def create(cls, config: ModelConfig, encoders, seed: int = 0) -> "ComposedQueryModel":
        d = config.dim
        rng_for = lambda name: HashRng(seed, "init", name)

        def normal_param(name, shape, scale):
            data = rng_for(name).normals(int(np.prod(shape))).reshape(shape) * scale
            return nc.parameter(data, name)

        params: dict[str, Tensor] = {}

        for name, shape, kind in encoders.param_specs():
            if kind == "zeros":
                params[name] = nc.parameter(np.zeros(shape), name)
            elif kind == "embedding":
                params[name] = normal_param(name, shape, 0.5)
            else:
                params[name] = normal_param(name, shape, 1.0 / math.sqrt(shape[0]))

        if config.variant != "no_fusion":
            params["fuse.sep"] = normal_param("fuse.sep", (1, d), 0.02)
            total = encoders.IMAGE_TOKENS + 1 + encoders.MAX_TEXT_TOKENS
            params["fuse.pos"] = normal_param("fuse.pos", (total, d), 0.02)
            for layer in range(config.fusion_layers):
                prefix = f"fuse.{layer}"
                for mat in ("wq", "wk", "wv", "wo"):
                    params[f"{prefix}.attn.{mat}"] = normal_param(
                        f"{prefix}.attn.{mat}", (d, d), 1.0 / math.sqrt(d))
                for bias in ("bq", "bk", "bv", "bo"):
                    params[f"{prefix}.attn.{bias}"] = nc.parameter(np.zeros(d), f"{prefix}.attn.{bias}")
                params[f"{prefix}.ln1.g"] = nc.parameter(np.ones(d), f"{prefix}.ln1.g")
                params[f"{prefix}.ln1.b"] = nc.parameter(np.zeros(d), f"{prefix}.ln1.b")
                params[f"{prefix}.ln2.g"] = nc.parameter(np.ones(d), f"{prefix}.ln2.g")
                params[f"{prefix}.ln2.b"] = nc.parameter(np.zeros(d), f"{prefix}.ln2.b")
                params[f"{prefix}.ff.w1"] = normal_param(f"{prefix}.ff.w1", (d, 4 * d), math.sqrt(2.0 / d))
                params[f"{prefix}.ff.b1"] = nc.parameter(np.zeros(4 * d), f"{prefix}.ff.b1")
                params[f"{prefix}.ff.w2"] = normal_param(f"{prefix}.ff.w2", (4 * d, d), 1.0 / math.sqrt(4 * d))
                params[f"{prefix}.ff.b2"] = nc.parameter(np.zeros(d), f"{prefix}.ff.b2")

        params["agg.mlp.w1"] = normal_param("agg.mlp.w1", (2 * d, d), math.sqrt(2.0 / (2 * d)))
        params["agg.mlp.b1"] = nc.parameter(np.zeros(d), "agg.mlp.b1")
        params["agg.mlp.w2"] = normal_param("agg.mlp.w2", (d, d), 1.0 / math.sqrt(d))
        params["agg.mlp.b2"] = nc.parameter(np.zeros(d), "agg.mlp.b2")
        if config.variant == "static_aggregation":
            # three free scalars, starting as a balanced average
            params["agg.static_w"] = nc.parameter(np.full((1, 3), 1.0 / 3.0), "agg.static_w")
        else:
            # weight head starts at the balanced average and learns to deviate
            params["agg.w.w"] = nc.parameter(np.zeros((d, 3)), "agg.w.w")
            params["agg.w.b"] = nc.parameter(np.full(3, 1.0 / 3.0), "agg.w.b")
        return cls(config, encoders, params)

    # -- fusion -----------------------------------------------------------

    def _attention(self, x: Tensor, prefix: str) -> Tensor:
        d = self.config.dim
        heads = self.config.heads
        dk = d // heads
        p = self.params
        q = nc.linear(x, p[f"{prefix}.wq"], p[f"{prefix}.bq"])
        k = nc.linear(x, p[f"{prefix}.wk"], p[f"{prefix}.bk"])
        v = nc.linear(x, p[f"{prefix}.wv"], p[f"{prefix}.bv"])
        contexts = []
        for h in range(heads):
            c0, c1 = h * dk, (h + 1) * dk
            qh, kh, vh = nc.cols(q, c0, c1), nc.cols(k, c0, c1), nc.cols(v, c0, c1)
            scores = nc.mul_scalar(nc.matmul(qh, nc.transpose(kh)), 1.0 / math.sqrt(dk))
            contexts.append(nc.matmul(nc.softmax(scores), vh))
        merged = nc.concat(contexts, axis=1)
        return nc.linear(merged, p[f"{prefix}.wo"], p[f"{prefix}.bo"])

    def _encoder_layer(self, x: Tensor, layer: int) -> Tensor:
        p = self.params
        prefix = f"fuse.{layer}"
        normed = nc.add(nc.mul(nc.layer_norm(x), p[f"{prefix}.ln1.g"]), p[f"{prefix}.ln1.b"])
        x = nc.add(x, self._attention(normed, f"{prefix}.attn"))
        normed = nc.add(nc.mul(nc.layer_norm(x), p[f"{prefix}.ln2.g"]), p[f"{prefix}.ln2.b"])
        hidden = nc.relu(nc.linear(normed, p[f"{prefix}.ff.w1"], p[f"{prefix}.ff.b1"]))
        return nc.add(x, nc.linear(hidden, p[f"{prefix}.ff.w2"], p[f"{prefix}.ff.b2"]))

    def fuse(self, visual: Tensor, sep: Tensor, text: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Joint self-attention over [visual; sep; text]; spans keep their shapes."""
        if self.config.variant == "no_fusion":
            raise ValidationError("fuse() is not available under the no_fusion variant")
        nv, ns, nw = visual.shape[0], sep.shape[0], text.shape[0]
        x = nc.concat([visual, sep, text], axis=0)
        x = nc.add(x, nc.rows(self.params["fuse.pos"], 0, nv + ns + nw))
        for layer in range(self.config.fusion_layers):
            x = self._encoder_layer(x, layer)
        return nc.rows(x, 0, nv), nc.rows(x, nv, nv + ns), nc.rows(x, nv + ns, nv + ns + nw)

    # -- aggregation ------------------------------------------------------

    def joint_feature(self, visual_first: Tensor, text_first: Tensor) -> Tensor:
        p = self.params
        u = nc.concat([visual_first, text_first], axis=1)
        u = nc.relu(nc.linear(u, p["agg.mlp.w1"], p["agg.mlp.b1"]))
        return nc.linear(u, p["agg.mlp.w2"], p["agg.mlp.b2"])

    def aggregate(self, fused_visual, fused_text, visual_global, text_global) -> Tensor:
        """Weighted mix of visual global, joint feature, text global -> (1, d)."""
        if self.config.variant == "no_fusion":
            joint = self.joint_feature(visual_global, text_global)
        else:
            joint = self.joint_feature(nc.rows(fused_visual, 0, 1), nc.rows(fused_text, 0, 1))
        if self.config.variant == "static_aggregation":
            weights = self.params["agg.static_w"]
        else:
            weights = nc.linear(joint, self.params["agg.w.w"], self.params["agg.w.b"])
        w1 = nc.cols(weights, 0, 1)
        w2 = nc.cols(weights, 1, 2)
        w3 = nc.cols(weights, 2, 3)
        return nc.add(nc.add(nc.mul(w1, visual_global), nc.mul(w2, joint)),
                      nc.mul(w3, text_global))

    # -- end to end -------------------------------------------------------

    def compose_query(self, image_id: int, caption: str) -> Tensor:
        """Encode, fuse (unless ablated), then aggregate into one query vector."""
        visual, visual_global = self.encoders.encode_image(image_id, self.params)
        text, text_global = self.encoders.encode_text(caption, self.params)
        if self.config.variant == "no_fusion":
            return self.aggregate(None, None, visual_global, text_global)
        fused_visual, _fused_sep, fused_text = self.fuse(visual, self.params["fuse.sep"], text)
        return self.aggregate(fused_visual, fused_text, visual_global, text_global)

    def target_feature(self, image_id: int) -> Tensor:
        """Global visual feature of a (target) image under current params."""
        _, visual_global = self.encoders.encode_image(image_id, self.params)
        return visual_global

    # -- training plumbing --------------------------------------------------

    def trainable_names(self) -> set[str]:
        """Parameter names unlocked by the configured fine-tuning mode."""
        encoder_names = self.encoders.text_param_names | self.encoders.image_param_names
        names = set(self.params) - encoder_names
        if self.config.finetune in ("text_only", "both"):
            names |= self.encoders.text_param_names & set(self.params)
        if self.config.finetune == "both":
            names |= self.encoders.image_param_names & set(self.params)
        return names

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}


def apply_finetune_mask(params: dict[str, Tensor], mode: str, encoders) -> set[str]:
    """Trainable-parameter set for a fine-tuning regime."""
    if mode not in FINETUNE_MODES:
        raise ValidationError(f"unknown finetune mode {mode!r}")
    names = set(params) - encoders.text_param_names - encoders.image_param_names
    if mode in ("text_only", "both"):
        names |= encoders.text_param_names & set(params)
    if mode == "both":
        names |= encoders.image_param_names & set(params)
    return names


def batch_classification_loss(queries: Tensor, targets: Tensor, tau: float = DEFAULT_TAU) -> Tensor:
    """Batch softmax over query/target cosines; each query classifies its target.

    loss = -(1/B) sum_i log softmax_j( cos(q_i, t_j) / tau )[i]
    computed with the log-sum-exp max-subtraction trick.
    """
    if tau <= 0.0:
        raise ValidationError(f"tau must be positive, got {tau}")
    if queries.shape != targets.shape or queries.data.ndim != 2:
        raise ValidationError(
            f"queries and targets must share a (B, d) shape, got {queries.shape} vs {targets.shape}")
    for label, t in (("query", queries), ("target", targets)):
        norms = np.linalg.norm(t.data, axis=1)
        if np.any(norms == 0.0):
            raise ValidationError(f"zero-norm {label} vector at row {int(np.argmin(norms))}")
    sims = nc.matmul(nc.l2_normalize(queries), nc.transpose(nc.l2_normalize(targets)))
    log_probs = nc.log_softmax(nc.mul_scalar(sims, 1.0 / tau))
    return nc.neg(nc.mean_all(nc.diagonal(log_probs)))


# ------------------------------------------------------------- persistence


def save_checkpoint(path, model: ComposedQueryModel, extra: dict[str, np.ndarray] | None = None,
                    meta: dict | None = None) -> None:
    """Container with model params (+ optimizer extras) and a JSON sidecar."""
    tensors = dict(model.tensors())
    for name, arr in (extra or {}).items():
        tensors[name] = arr
    nc.write_tensors(path, tensors)
    sidecar = {"model": model.config.to_dict()}
    sidecar.update(meta or {})
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_checkpoint(path, encoders) -> tuple[ComposedQueryModel, dict[str, np.ndarray], dict]:
    """Rebuild a model from a container; returns (model, extra tensors, sidecar)."""
    tensors = nc.read_tensors(path)
    with open(str(path) + ".json", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    config = ModelConfig.from_dict(sidecar["model"])
    params = {}
    extra = {}
    probe = ComposedQueryModel.create(config, encoders, seed=0)
    for name, arr in tensors.items():
        if name in probe.params:
            if arr.shape != probe.params[name].data.shape:
                raise ValidationError(
                    f"checkpoint tensor {name!r} has shape {arr.shape}, "
                    f"expected {probe.params[name].data.shape}")
            params[name] = nc.parameter(arr, name)
        else:
            extra[name] = arr
    missing = set(probe.params) - set(params)
    if missing:
        raise ValidationError(f"checkpoint missing parameters: {sorted(missing)}")
    return ComposedQueryModel(config, encoders, params), extra, sidecar
