"""Zero-shot prototype classification, few-shot probing/finetuning, and the
bootstrap/repeat evaluation protocols.
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass
from typing import Optional, TextIO

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .base import BaseEstimator
from .datatypes import stack_windows
from .errors import ConfigError, InputError, UsageError
from .imu_encoder import EncoderConfig, IMUEncoder, PatchConfig
from .metrics import MetricsReport, compute_all_metrics, confusion_counts, per_class_recalls
from .nn import Linear
from .optim import AdamW
from .training import ProgressLog, epoch_batches
from .align import CrossModalAligner, ProjectionHead, project_and_normalize

FEWSHOT_LABEL_COUNTS = (10, 20, 50, 100)


def _windows_and_labels(windows, labels=None):
    if isinstance(windows, np.ndarray):
        arr = windows.astype(np.float32)
        if labels is None:
            raise UsageError("labels are required when windows are a raw array")
    else:
        windows = list(windows)
        arr = stack_windows(windows)
        if labels is None:
            labels = [w.label for w in windows]
            if any(l is None for l in labels):
                raise InputError("unlabeled window in a labeled evaluation")
    labels = np.asarray(labels)
    if len(labels) != len(arr):
        raise UsageError(f"{len(arr)} windows but {len(labels)} labels")
    return arr, labels


def embed_windows(encoder: IMUEncoder, windows: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Pooled (M*D) window embeddings, computed in eval mode without gradients."""
    was_training = encoder.training
    encoder.eval()
    outs = []
    with ad.no_grad():
        for start in range(0, len(windows), chunk):
            outs.append(encoder.window_embedding(windows[start : start + chunk]).data)
    encoder.train(was_training)
    return np.concatenate(outs, axis=0)


def rankings_from_scores(scores: np.ndarray, class_ids: np.ndarray) -> np.ndarray:
    """Order classes by descending score; ties go to the lowest class id."""
    out = np.empty(scores.shape, dtype=np.int64)
    for i, row in enumerate(scores):
        order = np.lexsort((class_ids, -row))
        out[i] = class_ids[order]
    return out


def cross_entropy(logits: Tensor, label_idx: np.ndarray) -> Tensor:
    n = logits.shape[0]
    logp = ad.log_softmax(logits, axis=-1)
    picked = ad.getitem(logp, (np.arange(n), np.asarray(label_idx)))
    return ad.neg(ad.tensor_mean(picked))


class ZeroShotClassifier(BaseEstimator):
    """Nearest-prototype classification in the shared alignment space.

    Prototype clips are embedded through the aligner's video path; a window is
    assigned the class of its most similar prototype (cosine similarity of
    unit vectors). A class's score is the max over its prototypes, so the
    prediction keeps 1-nearest-neighbor semantics with several prototypes per
    class.
    """

    def __init__(self, aligner: CrossModalAligner, class_map: Optional[dict] = None):
        self.aligner = aligner
        self.class_map = class_map
        self.classes_: Optional[np.ndarray] = None
        self.prototype_vectors_: Optional[dict] = None

    def fit(self, prototype_clips, prototype_labels) -> "ZeroShotClassifier":
        labels = list(prototype_labels)
        if self.class_map is not None:
            labels = [self.class_map[l] for l in labels]
        if len(labels) == 0:
            raise UsageError("prototype set is empty")
        if len(labels) != len(prototype_clips):
            raise UsageError(
                f"{len(prototype_clips)} prototype clips but {len(labels)} labels"
            )
        vectors = self.aligner.encode_clips(prototype_clips, projected=True)
        classes = np.unique(np.asarray(labels))
        self.classes_ = classes
        self.prototype_vectors_ = {
            c: vectors[np.asarray(labels) == c] for c in classes
        }
        return self

    def _scores(self, window_vectors: np.ndarray) -> np.ndarray:
        self._check_fitted("prototype_vectors_")
        scores = np.empty((len(window_vectors), len(self.classes_)), dtype=np.float64)
        for j, c in enumerate(self.classes_):
            scores[:, j] = (window_vectors @ self.prototype_vectors_[c].T).max(axis=1)
        return scores

    def decision_scores(self, windows) -> np.ndarray:
        return self._scores(self.aligner.transform(windows, projected=True))

    def predict(self, windows) -> np.ndarray:
        return self.predict_ranking(windows)[:, 0]

    def predict_ranking(self, windows) -> np.ndarray:
        scores = self.decision_scores(windows)
        return rankings_from_scores(scores, self.classes_)


def bootstrap_zeroshot(
    windows,
    labels,
    classifier: ZeroShotClassifier,
    repeats: int = 5,
    frac: float = 0.80,
    seed: int = 0,
) -> MetricsReport:
    """Per repeat, draw floor(frac * n_c) windows per class without replacement
    and score the full metric suite; report mean +/- std over repeats."""
    if not 0.0 < frac <= 1.0:
        raise ConfigError(f"frac must lie in (0, 1], got {frac}")
    arr, labels = _windows_and_labels(windows, labels)
    class_pools = {c: np.flatnonzero(labels == c) for c in np.unique(labels)}
    for c, pool in class_pools.items():
        if len(pool) < 2:
            raise InputError(f"class {c} has {len(pool)} samples; need at least 2")

    vectors = classifier.aligner.transform(arr, projected=True)
    scores = classifier._scores(vectors)
    rankings_all = rankings_from_scores(scores, classifier.classes_)
    preds_all = rankings_all[:, 0]

    runs = []
    draws = []
    num_classes = len(classifier.classes_)
    confusion_total = np.zeros((num_classes, num_classes), dtype=np.int64)
    class_to_idx = {c: i for i, c in enumerate(classifier.classes_)}
    recall_sums: dict[int, list[float]] = {}
    for r in range(repeats):
        rng = np.random.default_rng([seed, r])
        chosen = np.concatenate(
            [
                rng.choice(pool, size=int(np.floor(frac * len(pool))), replace=False)
                for c, pool in sorted(class_pools.items())
            ]
        )
        sub_labels = labels[chosen]
        sub_preds = preds_all[chosen]
        sub_rankings = rankings_all[chosen]
        runs.append(compute_all_metrics(sub_preds, sub_labels, sub_rankings))
        draws.append(
            {
                "repeat": r,
                "per_class_count": {
                    str(c): int(np.sum(sub_labels == c)) for c in sorted(class_pools)
                },
                "total": int(len(chosen)),
            }
        )
        confusion_total += confusion_counts(
            np.vectorize(class_to_idx.get)(sub_preds),
            np.vectorize(class_to_idx.get)(sub_labels),
            num_classes,
        )
        for c, v in per_class_recalls(sub_preds, sub_labels).items():
            recall_sums.setdefault(c, []).append(v)

    per_class = {c: float(np.mean(v)) for c, v in recall_sums.items()}
    return MetricsReport.from_runs(
        runs,
        per_class_recall=per_class,
        confusion=confusion_total,
        details={"protocol": "bootstrap_zeroshot", "frac": frac, "repeats": draws},
    )


@dataclass(frozen=True)
class FewShotSpec:
    """Few-shot protocol shape: n labels/class, 20 held out/class, 5 repeats."""

    labels_per_class: int
    repeats: int = 5
    heldout_per_class: int = 20
    mode: str = "probe"

    def __post_init__(self):
        if self.labels_per_class < 1 or self.heldout_per_class < 1 or self.repeats < 1:
            raise ConfigError("few-shot counts must be positive")
        if self.mode not in ("probe", "finetune", "scratch"):
            raise ConfigError(f"unknown few-shot mode {self.mode!r}")


def _clone_encoder(encoder: IMUEncoder, seed: int) -> IMUEncoder:
    clone = IMUEncoder(encoder.patch_cfg, encoder.cfg, seed=seed)
    clone.load_state_dict(encoder.state_dict())
    return clone


class WindowClassifier(BaseEstimator):
    """Linear classification over window embeddings, in three flavors.

    probe     frozen encoder, linear head on the pooled (M*D) embedding
    finetune  encoder updated with its own (small) learning rate, head at
              head_lr
    scratch   randomly initialized encoder trained jointly with the head

    The encoder passed in is never mutated; training works on a copy. During
    classifier training the encoder runs without dropout, which keeps probe
    and finetune-with-encoder-lr-0 on identical trajectories.
    """

    DEFAULT_ENCODER_LR = {"probe": 0.0, "finetune": 1e-6, "scratch": 1e-4}

    def __init__(
        self,
        mode: str = "probe",
        encoder: Optional[IMUEncoder] = None,
        patch_config: PatchConfig = PatchConfig(),
        imu_config: EncoderConfig = EncoderConfig(),
        epochs: int = 25,
        batch_size: int = 32,
        head_lr: float = 1e-3,
        encoder_lr: Optional[float] = None,
        weight_decay: float = 0.01,
        use_projection: bool = False,
        projection_head: Optional[ProjectionHead] = None,
        seed: int = 0,
        log_stream: Optional[TextIO] = None,
    ):
        self.mode = mode
        self.encoder = encoder
        self.patch_config = patch_config
        self.imu_config = imu_config
        self.epochs = epochs
        self.batch_size = batch_size
        self.head_lr = head_lr
        self.encoder_lr = encoder_lr
        self.weight_decay = weight_decay
        self.use_projection = use_projection
        self.projection_head = projection_head
        self.seed = seed
        self.log_stream = log_stream

        self.classes_: Optional[np.ndarray] = None
        self.encoder_: Optional[IMUEncoder] = None
        self.head_: Optional[Linear] = None
        self.history_: list[dict] = []

    # -- embedding helpers ------------------------------------------------------

    def _embedding_dim(self) -> int:
        if self.use_projection:
            head = self.projection_head
            if head is None:
                raise ConfigError("use_projection requires a projection_head")
            lin = head.lin if head.hidden_dim is None else head.lin2
            return lin.weight.shape[1]
        return self.encoder_.cfg.window_embedding_dim

    def _frozen_embeddings(self, arr: np.ndarray) -> np.ndarray:
        emb = embed_windows(self.encoder_, arr)
        if self.use_projection:
            with ad.no_grad():
                emb = project_and_normalize(Tensor(emb), self.projection_head).data
        return emb

    def _embed_batch_graph(self, batch: np.ndarray) -> Tensor:
        emb = self.encoder_.window_embedding(batch)
        if self.use_projection:
            emb = project_and_normalize(emb, self.projection_head)
        return emb

    # -- training ---------------------------------------------------------------

    def fit(self, windows, labels=None) -> "WindowClassifier":
        if self.mode not in ("probe", "finetune", "scratch"):
            raise ConfigError(f"unknown classifier mode {self.mode!r}")
        arr, labels = _windows_and_labels(windows, labels)
        self.classes_ = np.unique(labels)
        if len(self.classes_) == 1:
            warnings.warn(
                "training labels contain a single class; balanced accuracy is trivially 1",
                RuntimeWarning,
            )
        class_to_idx = {c: i for i, c in enumerate(self.classes_)}
        y = np.asarray([class_to_idx[l] for l in labels], dtype=np.int64)

        if self.mode == "scratch":
            self.encoder_ = IMUEncoder(self.patch_config, self.imu_config, seed=self.seed)
        else:
            if self.encoder is None:
                raise UsageError(f"mode {self.mode!r} requires a pretrained encoder")
            self.encoder_ = _clone_encoder(self.encoder, seed=self.seed)
        self.encoder_.eval()  # no dropout during classifier training

        rng = np.random.default_rng([self.seed, 505])
        head_rng = np.random.default_rng([self.seed, 606])
        self.head_ = Linear(self._embedding_dim(), len(self.classes_), head_rng)
        enc_lr = (
            self.DEFAULT_ENCODER_LR[self.mode] if self.encoder_lr is None else self.encoder_lr
        )

        log = ProgressLog(self.log_stream)
        self.history_ = []
        frozen_encoder = self.mode == "probe" or enc_lr == 0.0
        if frozen_encoder:
            cached = self._frozen_embeddings(arr)
            opt = AdamW(
                self.head_.parameters(),
                lr=self.head_lr,
                weight_decay=self.weight_decay,
            )
        else:
            opt = AdamW(
                [
                    {"params": self.encoder_.parameters(), "lr": enc_lr},
                    {"params": self.head_.parameters(), "lr": self.head_lr},
                ],
                weight_decay=self.weight_decay,
            )

        n = len(arr)
        for epoch in range(self.epochs):
            total, count = 0.0, 0
            for idx in epoch_batches(n, self.batch_size, rng):
                opt.zero_grad()
                if frozen_encoder:
                    emb = Tensor(cached[idx])
                else:
                    emb = self._embed_batch_graph(arr[idx])
                loss = cross_entropy(self.head_(emb), y[idx])
                ad.backward(loss)
                opt.step()
                total += loss.item() * len(idx)
                count += len(idx)
            record = {"epoch": epoch, "loss": total / count, "lr": self.head_lr}
            self.history_.append(record)
            log.emit(event="epoch", mode=self.mode, **record)
        return self

    @property
    def optimizer_groups_(self) -> list[dict]:
        """Learning-rate groups as actually configured (for protocol checks)."""
        enc_lr = (
            self.DEFAULT_ENCODER_LR[self.mode] if self.encoder_lr is None else self.encoder_lr
        )
        return [
            {"role": "encoder", "lr": 0.0 if self.mode == "probe" else enc_lr},
            {"role": "head", "lr": self.head_lr},
        ]

    # -- inference ---------------------------------------------------------------

    def _logits(self, windows) -> np.ndarray:
        self._check_fitted("head_")
        arr = windows if isinstance(windows, np.ndarray) else stack_windows(list(windows))
        if arr.ndim == 2:
            arr = arr[None]
        emb = self._frozen_embeddings(arr)
        with ad.no_grad():
            return self.head_(Tensor(emb)).data

    def predict(self, windows) -> np.ndarray:
        logits = self._logits(windows)
        return self.classes_[np.argmax(logits, axis=1)]

    def predict_ranking(self, windows, all_classes=None) -> np.ndarray:
        """Class ranking per window; classes unseen in training rank last.

        ``all_classes`` extends the ranking to the evaluation universe so
        retrieval metrics stay well defined when the heldout set contains
        classes the classifier never saw (those predictions count as wrong).
        """
        logits = self._logits(windows)
        base = rankings_from_scores(logits, self.classes_)
        if all_classes is None:
            return base
        extra = np.asarray(sorted(set(all_classes) - set(self.classes_.tolist())))
        if len(extra) == 0:
            return base
        warnings.warn(
            f"classes {extra.tolist()} unseen during training; ranked last",
            RuntimeWarning,
        )
        tail = np.tile(extra, (len(base), 1))
        return np.concatenate([base, tail], axis=1)

    def score(self, windows, labels) -> float:
        from .metrics import balanced_accuracy

        arr, labels = _windows_and_labels(windows, labels)
        return balanced_accuracy(self.predict(arr), labels)


def evaluate_classifier(clf: WindowClassifier, windows, labels) -> dict[str, float]:
    arr, labels = _windows_and_labels(windows, labels)
    rankings = clf.predict_ranking(arr, all_classes=np.unique(labels))
    preds = rankings[:, 0]
    return compute_all_metrics(preds, labels, rankings)


def fewshot_protocol(
    windows,
    labels,
    spec: FewShotSpec,
    encoder: Optional[IMUEncoder] = None,
    seed: int = 0,
    **classifier_kwargs,
) -> MetricsReport:
    """Run the repeated few-shot evaluation.

    Per repeat r (seeded by (seed, r)): draw ``labels_per_class`` training
    windows plus ``heldout_per_class`` disjoint test windows from every class,
    train a classifier per ``spec.mode``, and score the held-out set.
    """
    arr, labels = _windows_and_labels(windows, labels)
    classes = np.unique(labels)
    need = spec.labels_per_class + spec.heldout_per_class
    pools = {c: np.flatnonzero(labels == c) for c in classes}
    for c, pool in pools.items():
        if len(pool) < need:
            raise InputError(
                f"class {c} has {len(pool)} labeled windows; "
                f"{need} required ({spec.labels_per_class} train + "
                f"{spec.heldout_per_class} heldout)"
            )

    runs = []
    repeat_details = []
    for r in range(spec.repeats):
        rng = np.random.default_rng([seed, r])
        train_idx, held_idx = [], []
        for c in classes:
            chosen = rng.choice(pools[c], size=need, replace=False)
            train_idx.append(chosen[: spec.labels_per_class])
            held_idx.append(chosen[spec.labels_per_class :])
        train_idx = np.concatenate(train_idx)
        held_idx = np.concatenate(held_idx)

        clf = WindowClassifier(
            mode=spec.mode,
            encoder=encoder,
            seed=seed * 1000 + r,
            **classifier_kwargs,
        )
        clf.fit(arr[train_idx], labels[train_idx])
        runs.append(evaluate_classifier(clf, arr[held_idx], labels[held_idx]))
        repeat_details.append(
            {
                "repeat": r,
                "train_indices": train_idx.tolist(),
                "heldout_indices": held_idx.tolist(),
                "train_count_per_class": {
                    str(c): int(np.sum(labels[train_idx] == c)) for c in classes
                },
                "heldout_count_per_class": {
                    str(c): int(np.sum(labels[held_idx] == c)) for c in classes
                },
            }
        )

    return MetricsReport.from_runs(
        runs,
        details={
            "protocol": "fewshot",
            "mode": spec.mode,
            "labels_per_class": spec.labels_per_class,
            "heldout_per_class": spec.heldout_per_class,
            "repeats": repeat_details,
        },
    )
