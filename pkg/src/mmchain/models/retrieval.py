"""Joint caption/image embedding trained with a pairwise hinge rank loss."""

from __future__ import annotations

import numpy as np

from .. import autograd as ag
from ..autograd import Tensor
from ..config import ChainConfig
from ..nn import BiGRU, Linear, Module, glorot, pad_sequences
from .decoder import check_tokens


class RetrievalModel(Module):
    def __init__(self, config: ChainConfig, rng: np.random.Generator):
        self.vocab_size = config.vocab_size
        self.margin = config.margin
        self.embed_dim = config.embed_dim
        self.image = Linear(rng, config.region_dim, config.embed_dim)
        self.embed = glorot(rng, config.vocab_size, config.token_embed)
        self.encoder = BiGRU(rng, config.token_embed, config.hidden // 2)
        self.caption = Linear(rng, config.hidden, config.embed_dim)

    def embed_images(self, images: list[np.ndarray]) -> Tensor:
        z = np.stack([np.asarray(im, dtype=np.float64) for im in images])
        return self.image(Tensor(z.mean(axis=1)))

    def embed_captions(self, texts: list[np.ndarray]) -> Tensor:
        texts = [check_tokens(y, self.vocab_size) for y in texts]
        ids, mask = pad_sequences(texts, pad_value=0)
        _, final = self.encoder(ag.embedding(self.embed, ids), mask)
        return self.caption(final)

    def rank_loss(self, texts: list[np.ndarray], images: list[np.ndarray],
                  negatives: int | None = None) -> Tensor:
        if len(texts) != len(images):
            raise ValueError("caption and image batches differ in length")
        if len(texts) < 2:
            raise ValueError("rank loss needs at least 2 pairs for in-batch negatives")
        return pairwise_rank_loss(self.embed_captions(texts), self.embed_images(images),
                                  self.margin, negatives)


def negative_mask(n: int, negatives: int | None) -> np.ndarray:
    """``mask[i, j] = 1`` when item ``j`` is a negative for anchor ``i``.

    ``None`` uses every other item; an integer ``k`` uses the next ``k``
    items cyclically.
    """
    if negatives is None or negatives >= n - 1:
        return 1.0 - np.eye(n)
    mask = np.zeros((n, n))
    for i in range(n):
        for s in range(1, negatives + 1):
            mask[i, (i + s) % n] = 1.0
    return mask


def pairwise_rank_loss(cap: Tensor, img: Tensor, margin: float, negatives: int | None = None) -> Tensor:
    """Sum of caption-anchored and image-anchored hinge terms.

    With ``d`` the squared Euclidean distance and ``D[i, j] = d(cap_i, img_j)``:
    caption ``i`` contributes ``max(0, M + D[i, i] - D[i, j])`` for each
    negative image ``j``; image ``j`` contributes ``max(0, M + D[j, j] - D[i, j])``
    for each negative caption ``i``.
    """
    B = cap.shape[0]
    D = ag.squared_l2(ag.reshape(cap, (B, 1, -1)), ag.reshape(img, (1, B, -1)), axis=-1)
    diag = np.arange(B)
    pos = D[diag, diag]
    mask = negative_mask(B, negatives)
    cap_terms = ag.relu(ag.reshape(pos, (B, 1)) - D + margin) * mask
    img_terms = ag.relu(ag.reshape(pos, (1, B)) - D + margin) * mask.T
    return ag.tsum(cap_terms) + ag.tsum(img_terms)


def ir_embed_image(model: RetrievalModel, z: np.ndarray) -> np.ndarray:
    with ag.no_grad():
        return model.embed_images([z]).data[0]


def ir_embed_caption(model: RetrievalModel, y) -> np.ndarray:
    with ag.no_grad():
        return model.embed_captions([y]).data[0]


def ir_rank_loss(model: RetrievalModel, pairs: list[tuple], negatives: int | None = None) -> Tensor:
    texts = [p[0] for p in pairs]
    images = [p[1] for p in pairs]
    return model.rank_loss(texts, images, negatives)


def rank_by_distance(query: np.ndarray, gallery_emb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gallery indices sorted by squared distance to ``query`` (ties by index)."""
    d = ((gallery_emb - query[None, :]) ** 2).sum(axis=1)
    order = np.argsort(d, kind="stable")
    return order, d[order]


def ir_retrieve(model: RetrievalModel, y, gallery: list[np.ndarray], k: int,
                gallery_emb: np.ndarray | None = None) -> list[tuple[int, float]]:
    if len(gallery) == 0:
        raise ValueError("retrieval gallery is empty")
    if not 1 <= k <= len(gallery):
        raise ValueError(f"k={k} outside 1..{len(gallery)}")
    with ag.no_grad():
        q = model.embed_captions([y]).data[0]
        if gallery_emb is None:
            gallery_emb = model.embed_images(gallery).data
    order, dist = rank_by_distance(q, gallery_emb)
    return [(int(i), float(d)) for i, d in zip(order[:k], dist[:k])]


def ir_sample_hypothesis(ranked: list, rng: np.random.Generator, candidates: int = 5):
    """Uniformly pick one of the first ``min(candidates, len(ranked))`` entries."""
    if not ranked:
        raise ValueError("no retrieval candidates to sample from")
    n = min(candidates, len(ranked))
    return ranked[int(rng.integers(n))]
