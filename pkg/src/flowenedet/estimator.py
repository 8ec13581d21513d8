"""High-level detector API: training, scoring, persistence.

`FlowEneDetector` follows the scikit-learn estimator conventions (plain
constructor assignment, `fit` returns self, `get_params`/`set_params` for
free) so it can slot into existing tooling, while the to-disk format stays
the language-neutral archive from `tensor_store`.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import density, featurize, flow, tensor_store, training
from .validation import as_logit_map


def build_archive(params, config, n_classes, embed_dim, seed):
    """Package trained parameters and hyperparameters for storage."""
    manifest = {
        "version": tensor_store.ARCHIVE_VERSION,
        "C": int(n_classes),
        "V": int(embed_dim),
        "L": config.n_blocks,
        "P": config.condition_width,
        "K": config.kernel_size,
        "hidden_width": config.hidden_width,
        "cov_mode": config.cov_mode,
        "seed": int(seed),
    }
    return tensor_store.ModelArchive(manifest=manifest, params=dict(params))


def config_from_manifest(manifest):
    return flow.FlowConfig(
        n_blocks=int(manifest["L"]),
        condition_width=int(manifest["P"]),
        kernel_size=int(manifest["K"]),
        hidden_width=int(manifest["hidden_width"]),
        dropout_rate=0.0,
        cov_mode=manifest["cov_mode"],
    )


def featurize_sample(logits, labels=None, embeddings=None, condition_width=0):
    """Turn raw model outputs into flow inputs (z, a[, m])."""
    logits = as_logit_map(logits)
    z = featurize.energy_pair(logits)
    a = None
    if condition_width > 0:
        if embeddings is None:
            raise ValueError(
                f"model expects a condition of width {condition_width} "
                "but the sample has no embeddings"
            )
        a = featurize.pool_condition(embeddings, condition_width)
    if labels is None:
        return z, a
    m, _ = featurize.binary_labels(logits, labels)
    return z, a, m


def score_map(params, config, logits, embeddings=None):
    """Per-pixel probability of the deviating component, shape (H, W)."""
    z, a = featurize_sample(logits, embeddings=embeddings, condition_width=config.condition_width)
    out = flow.forward(z[None], None if a is None else a[None], params, config)
    s = density.class_logits(out, params, config.cov_mode)
    return density.posterior(s)[0]


class FlowEneDetector(BaseEstimator):
    """Concurrent misclassification/OOD detector over segmentation logits.

    Parameters mirror the flow architecture and the training schedule; see
    `flow.FlowConfig` and `training.TrainConfig`. With default settings the
    detector is unconditional (`condition_width=0`) and ignores embeddings.
    """

    def __init__(
        self,
        n_blocks=8,
        condition_width=0,
        kernel_size=7,
        hidden_width=32,
        dropout_rate=0.2,
        cov_mode="full",
        lr_init=1e-3,
        warmup_iters=4000,
        total_iters=50000,
        batch_size=4,
        weight_decay=0.01,
        crop=None,
        grad_clip=None,
        seed=0,
    ):
        self.n_blocks = n_blocks
        self.condition_width = condition_width
        self.kernel_size = kernel_size
        self.hidden_width = hidden_width
        self.dropout_rate = dropout_rate
        self.cov_mode = cov_mode
        self.lr_init = lr_init
        self.warmup_iters = warmup_iters
        self.total_iters = total_iters
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.crop = crop
        self.grad_clip = grad_clip
        self.seed = seed

    def _flow_config(self):
        return flow.FlowConfig(
            n_blocks=self.n_blocks,
            condition_width=self.condition_width,
            kernel_size=self.kernel_size,
            hidden_width=self.hidden_width,
            dropout_rate=self.dropout_rate,
            cov_mode=self.cov_mode,
        )

    def _train_config(self):
        return training.TrainConfig(
            lr_init=self.lr_init,
            warmup_iters=self.warmup_iters,
            total_iters=self.total_iters,
            batch_size=self.batch_size,
            weight_decay=self.weight_decay,
            crop=self.crop,
            grad_clip=self.grad_clip,
            seed=self.seed,
        )

    @staticmethod
    def _as_tuples(X):
        out = []
        for item in X:
            if isinstance(item, tensor_store.DatasetSample):
                out.append((item.logits, item.labels, item.embeddings))
            elif len(item) == 2:
                out.append((item[0], item[1], None))
            else:
                out.append(tuple(item[:3]))
        return out

    def fit(self, X, y=None):
        """Train on a list of (logits, labels[, embeddings]) samples.

        Items may also be `tensor_store.DatasetSample` objects. `y` is
        ignored; the binary targets come from the labels themselves.
        """
        tuples = self._as_tuples(X)
        if not tuples:
            raise ValueError("fit: empty dataset")
        config = self._flow_config()
        featurized = [
            featurize_sample(lg, lb, emb, self.condition_width) for lg, lb, emb in tuples
        ]
        self.n_classes_ = int(np.asarray(tuples[0][0]).shape[0])
        first_emb = tuples[0][2]
        self.embed_dim_ = 0 if first_emb is None else int(np.asarray(first_emb).shape[0])
        self.params_, self.loss_log_ = training.fit(featurized, config, self._train_config())
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("this FlowEneDetector instance is not fitted yet")

    def predict_proba(self, X):
        """Per-sample (H, W) maps of P(deviating); returns a list."""
        self._check_fitted()
        config = self._flow_config()
        maps = []
        for item in self._as_tuples_scoring(X):
            logits, embeddings = item
            maps.append(score_map(self.params_, config, logits, embeddings))
        return maps

    def predict(self, X, threshold=0.5):
        """Boolean flag maps: True where the detector exceeds `threshold`."""
        return [p >= threshold for p in self.predict_proba(X)]

    @staticmethod
    def _as_tuples_scoring(X):
        out = []
        for item in X:
            if isinstance(item, tensor_store.DatasetSample):
                out.append((item.logits, item.embeddings))
            elif isinstance(item, np.ndarray):
                out.append((item, None))
            else:
                out.append((item[0], item[1] if len(item) > 1 else None))
        return out

    def save(self, path):
        """Write the fitted detector as a model archive."""
        self._check_fitted()
        archive = build_archive(
            self.params_, self._flow_config(), self.n_classes_, self.embed_dim_, self.seed
        )
        tensor_store.write_model(archive, path)
        return path

    @classmethod
    def load(cls, path):
        """Restore a detector from a model archive."""
        archive = tensor_store.read_model(path)
        m = archive.manifest
        det = cls(
            n_blocks=int(m["L"]),
            condition_width=int(m["P"]),
            kernel_size=int(m["K"]),
            hidden_width=int(m["hidden_width"]),
            cov_mode=m["cov_mode"],
            seed=int(m["seed"]),
        )
        det.params_ = dict(archive.params)
        det.n_classes_ = int(m["C"])
        det.embed_dim_ = int(m["V"])
        det.loss_log_ = None
        return det
