"""Scikit-learn style facade over the latent ODE model.

``LatentOdeForecaster`` exposes the fit/predict/transform surface so the
model slots into sklearn pipelines and model-selection tooling:
``transform`` yields posterior-mean latent embeddings, ``predict_proba``
the outcome probabilities, and ``score`` the ROC AUC. Heavy lifting
lives in the training and engine modules; this class only adapts
conventions (constructor params stored verbatim, get_params/set_params
inherited from BaseEstimator).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.metrics import roc_auc_score

from .checkpoint import load_checkpoint, save_checkpoint
from .engine import EngineConfig, HypotheticalPoint, TrajectoryEnsemble, condition_on_point, \
    sample_ensemble
from .errors import ContractViolation
from .series import IrregularSeries, check_collection
from .training import TrainConfig, posterior_batch, train


class LatentOdeForecaster(BaseEstimator):
    """Latent ODE forecaster/classifier for irregular multivariate series.

    X everywhere is a list of IrregularSeries (normalized; see
    ``odecast.data.normalize_split``). Labels may live on the series or
    be passed as ``y`` to ``fit``.
    """

    def __init__(self, latent_dim: int = 16, encoder_hidden: int = 32,
                 dynamics_hidden: tuple[int, int] = (64, 64), decoder_hidden: int = 64,
                 classifier_hidden: int = 32, noise_dim: int = 1,
                 epochs: int = 40, batch_size: int = 32, learning_rate: float = 0.01,
                 kl_warmup_epochs: int = 10, classifier_loss_weight: float = 50.0,
                 obs_noise: float = 0.3, patience: int = 15, grad_path: str = "adjoint",
                 rtol: float = 1e-6, atol: float = 1e-8, seed: int = 0):
        self.latent_dim = latent_dim
        self.encoder_hidden = encoder_hidden
        self.dynamics_hidden = dynamics_hidden
        self.decoder_hidden = decoder_hidden
        self.classifier_hidden = classifier_hidden
        self.noise_dim = noise_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.kl_warmup_epochs = kl_warmup_epochs
        self.classifier_loss_weight = classifier_loss_weight
        self.obs_noise = obs_noise
        self.patience = patience
        self.grad_path = grad_path
        self.rtol = rtol
        self.atol = atol
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, kl_warmup_epochs=self.kl_warmup_epochs,
            classifier_loss_weight=self.classifier_loss_weight, obs_noise=self.obs_noise,
            seed=self.seed, rtol=self.rtol, atol=self.atol, patience=self.patience,
            grad_path=self.grad_path, latent_dim=self.latent_dim,
            encoder_hidden=self.encoder_hidden, dynamics_hidden=tuple(self.dynamics_hidden),
            decoder_hidden=self.decoder_hidden, classifier_hidden=self.classifier_hidden,
            noise_dim=self.noise_dim)

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit (or load) before using this estimator")

    # -- estimator surface ------------------------------------------------

    def fit(self, X: list[IrregularSeries], y=None) -> "LatentOdeForecaster":
        X = check_collection(X)
        if y is not None:
            if len(y) != len(X):
                raise ContractViolation("y length must match X")
            labeled = []
            for series, label in zip(X, y):
                s = IrregularSeries(times=series.times, values=series.values,
                                    mask=series.mask, feature_names=series.feature_names,
                                    label=int(label), norm_stats=series.norm_stats,
                                    series_id=series.series_id)
                labeled.append(s)
            X = labeled
        self.model_, self.report_ = train(X, self._train_config())
        return self

    def transform(self, X: list[IrregularSeries], fraction: float = 1.0) -> np.ndarray:
        """Posterior-mean latent embedding of each series, (n, latent_dim)."""
        self._check_fitted()
        X = check_collection(X)
        means, _ = posterior_batch(X, self.model_, fraction)
        return means

    def predict_proba(self, X: list[IrregularSeries], fraction: float = 1.0) -> np.ndarray:
        self._check_fitted()
        from .training import reconstruct_batch
        X = check_collection(X)
        probs = []
        for start in range(0, len(X), 64):
            _, _, p = reconstruct_batch(X[start:start + 64], self.model_, fraction,
                                        rtol=self.rtol, atol=self.atol)
            probs.extend(p.tolist())
        p1 = np.asarray(probs)
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X: list[IrregularSeries], fraction: float = 1.0) -> np.ndarray:
        return (self.predict_proba(X, fraction)[:, 1] >= 0.5).astype(int)

    def score(self, X: list[IrregularSeries], y=None) -> float:
        """ROC AUC of the outcome head on labeled series."""
        self._check_fitted()
        X = check_collection(X)
        if y is None:
            y = [s.label for s in X]
        y = np.asarray([-1 if v is None else int(v) for v in y])
        keep = y >= 0
        if keep.sum() == 0 or len(set(y[keep].tolist())) < 2:
            raise ContractViolation("scoring needs labeled series of both classes")
        probs = self.predict_proba([s for s, k in zip(X, keep) if k])[:, 1]
        return float(roc_auc_score(y[keep], probs))

    # -- trajectory conveniences -------------------------------------------

    def sample_trajectories(self, series: IrregularSeries, fraction: float = 1.0,
                            k: int | None = None, horizon_mult: float | None = None,
                            seed: int = 0,
                            config: EngineConfig | None = None) -> TrajectoryEnsemble:
        self._check_fitted()
        return sample_ensemble(series, self.model_, fraction=fraction, k=k,
                               horizon_mult=horizon_mult, seed=seed, config=config)

    def what_if(self, series: IrregularSeries, point: HypotheticalPoint,
                k: int | None = None, m: int | None = None, seed: int = 0,
                fraction: float = 1.0,
                config: EngineConfig | None = None) -> TrajectoryEnsemble:
        self._check_fitted()
        return condition_on_point(series, self.model_, point, k=k, m=m, seed=seed,
                                  fraction=fraction, config=config)

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        self._check_fitted()
        save_checkpoint(self.model_, path)

    @classmethod
    def from_checkpoint(cls, path) -> "LatentOdeForecaster":
        params = load_checkpoint(path)
        cfg = params.meta.get("train_config", {})
        est = cls(**{key: (tuple(val) if isinstance(val, list) else val)
                     for key, val in cfg.items()
                     if key in cls().get_params()})
        est.model_ = params
        return est
