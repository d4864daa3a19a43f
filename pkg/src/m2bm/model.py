"""A small trainable enhancer: per-band affine maps on local RI features.

The model is deliberately tiny (hundreds to a few thousand parameters) so
that finite-difference audits of the training gradients stay fast. Each
frequency band has one affine map from the real/imaginary parts of a few
neighboring frames (all input channels) to the real/imaginary parts of the
target and noise estimates. It is linear in its inputs, but the training
losses are not, which is what the gradient machinery has to handle.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "banded-affine-v1"
_NUM_OUT = 4  # Re/Im of the target estimate, Re/Im of the noise estimate


class BandedAffineModel:
    """Per-band affine map (C, T, F) complex -> two (T, F) complex estimates."""

    def __init__(self, num_bins: int, input_channels: int = 1, context: int = 1,
                 num_bands: int = 8, params: np.ndarray | None = None):
        if num_bins < 1 or input_channels < 1 or context < 0 or num_bands < 1:
            raise ValueError("model hyperparameters must be positive (context >= 0)")
        if num_bands > num_bins:
            raise ValueError(f"num_bands ({num_bands}) exceeds num_bins ({num_bins})")
        self.num_bins = num_bins
        self.input_channels = input_channels
        self.context = context
        self.num_bands = num_bands
        self.feat_dim = 2 * input_channels * (2 * context + 1)
        splits = np.array_split(np.arange(num_bins), num_bands)
        self.band_slices = [slice(int(ix[0]), int(ix[-1]) + 1) for ix in splits]
        self._per_band = _NUM_OUT * self.feat_dim + _NUM_OUT
        if params is None:
            params = np.zeros(num_bands * self._per_band)
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (num_bands * self._per_band,):
            raise ValueError(
                f"params must be flat with {num_bands * self._per_band} entries, "
                f"got shape {params.shape}"
            )
        self.params = params

    @property
    def num_params(self) -> int:
        return self.params.size

    def _band_views(self, params: np.ndarray):
        """Yield (band_slice, W (4, D) view, bias (4,) view) per band."""
        d = self.feat_dim
        for g, band in enumerate(self.band_slices):
            base = g * self._per_band
            w = params[base:base + _NUM_OUT * d].reshape(_NUM_OUT, d)
            b = params[base + _NUM_OUT * d:base + self._per_band]
            yield band, w, b

    @classmethod
    def random(cls, num_bins: int, input_channels: int = 1, context: int = 1,
               num_bands: int = 8, seed: int = 0, scale: float = 0.05):
        model = cls(num_bins, input_channels, context, num_bands)
        rng = np.random.default_rng(seed)
        model.params = rng.normal(0.0, scale, size=model.num_params)
        return model

    @classmethod
    def passthrough(cls, num_bins: int, input_channels: int = 1, context: int = 1,
                    num_bands: int = 8, ref_channel: int = 0):
        """Init that copies the reference channel to the target estimate.

        The noise-estimate head starts at zero, so the initial output is
        exactly (mixture, 0) -- the degenerate point of the mixture losses.
        """
        model = cls(num_bins, input_channels, context, num_bands)
        if not 0 <= ref_channel < input_channels:
            raise ValueError(f"ref_channel {ref_channel} out of range")
        re_idx = model.feature_index(ref_channel, 0, 0)
        im_idx = model.feature_index(ref_channel, 0, 1)
        for _, w, _b in model._band_views(model.params):
            w[0, re_idx] = 1.0
            w[1, im_idx] = 1.0
        return model

    def feature_index(self, channel: int, offset: int, ri: int) -> int:
        """Flat feature index for (channel, frame offset, 0=real/1=imag)."""
        if not -self.context <= offset <= self.context:
            raise ValueError(f"offset {offset} outside context +-{self.context}")
        width = 2 * self.context + 1
        return (channel * width + (offset + self.context)) * 2 + ri

    def features(self, mixture: np.ndarray) -> np.ndarray:
        """(C, T, F) complex -> (T, F, D) real feature tensor."""
        mixture = np.asarray(mixture)
        if mixture.ndim == 2:
            mixture = mixture[None]
        if mixture.shape[0] != self.input_channels or mixture.shape[2] != self.num_bins:
            raise ValueError(
                f"input shape {mixture.shape} does not match model "
                f"(channels={self.input_channels}, bins={self.num_bins})"
            )
        num_frames = mixture.shape[1]
        ctx = self.context
        padded = np.pad(mixture, ((0, 0), (ctx, ctx), (0, 0)))
        shifted = np.stack([padded[:, k:k + num_frames] for k in range(2 * ctx + 1)],
                           axis=1)  # (C, 2*ctx+1, T, F)
        shifted = shifted.transpose(2, 3, 0, 1)  # (T, F, C, 2*ctx+1)
        feats = np.stack([shifted.real, shifted.imag], axis=-1)
        return feats.reshape(num_frames, self.num_bins, self.feat_dim)

    def forward(self, mixture: np.ndarray, features: np.ndarray | None = None):
        """Return (target_est, noise_est), each (T, F) complex."""
        feats = self.features(mixture) if features is None else features
        num_frames = feats.shape[0]
        out = np.empty((num_frames, self.num_bins, _NUM_OUT))
        for band, w, b in self._band_views(self.params):
            out[:, band] = np.einsum("tfd,od->tfo", feats[:, band], w) + b
        target_est = out[:, :, 0] + 1j * out[:, :, 1]
        noise_est = out[:, :, 2] + 1j * out[:, :, 3]
        return target_est, noise_est

    def backward(self, mixture: np.ndarray, g_target: np.ndarray, g_noise: np.ndarray,
                 features: np.ndarray | None = None) -> np.ndarray:
        """Map estimate cotangents to a flat parameter gradient.

        g_target/g_noise follow the dL/d(conj z) convention, so the real
        output heads see 2*Re(g) and the imaginary heads 2*Im(g).
        """
        feats = self.features(mixture) if features is None else features
        if g_target.shape != feats.shape[:2] or g_noise.shape != feats.shape[:2]:
            raise ValueError("cotangent shapes do not match the feature grid")
        d_out = np.stack([2.0 * g_target.real, 2.0 * g_target.imag,
                          2.0 * g_noise.real, 2.0 * g_noise.imag], axis=-1)
        grad = np.zeros_like(self.params)
        for band, w_g, b_g in self._band_views(grad):
            w_g += np.einsum("tfo,tfd->od", d_out[:, band], feats[:, band])
            b_g += d_out[:, band].sum(axis=(0, 1))
        return grad

    def copy(self) -> "BandedAffineModel":
        return BandedAffineModel(self.num_bins, self.input_channels, self.context,
                                 self.num_bands, params=self.params.copy())

    # -- persistence ------------------------------------------------------

    def hyperparams(self) -> dict:
        return {
            "num_bins": self.num_bins,
            "input_channels": self.input_channels,
            "context": self.context,
            "num_bands": self.num_bands,
        }

    def save(self, path, extra: dict | None = None):
        """Write raw little-endian float64 params plus a JSON sidecar."""
        path = Path(path)
        path.write_bytes(self.params.astype("<f8").tobytes())
        meta = {
            "format": CHECKPOINT_FORMAT,
            "dtype": "<f8",
            "num_params": self.num_params,
            **self.hyperparams(),
        }
        if extra:
            meta["extra"] = extra
        sidecar = path.with_suffix(path.suffix + ".json")
        sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> tuple["BandedAffineModel", dict]:
        path = Path(path)
        sidecar = path.with_suffix(path.suffix + ".json")
        if not sidecar.exists():
            raise FileNotFoundError(f"checkpoint sidecar missing: {sidecar}")
        meta = json.loads(sidecar.read_text())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {meta.get('format')!r}")
        params = np.frombuffer(path.read_bytes(), dtype="<f8").astype(np.float64)
        if params.size != meta["num_params"]:
            raise ValueError(
                f"checkpoint holds {params.size} params, sidecar says {meta['num_params']}"
            )
        model = cls(meta["num_bins"], meta["input_channels"], meta["context"],
                    meta["num_bands"], params=params)
        return model, meta
