"""Command-line interface: simulate, beamform, train, enhance, gradcheck, eval.

Batch-oriented: each command reads a JSON config and/or positional inputs,
writes its outputs plus exactly one ``manifest.json`` next to them, and is
deterministic for a fixed seed. Exit codes: 0 success, 1 usage/config error,
2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .beamform import apply_beamformer, beamform_from_estimates, derive_bf_mixture
from .fcp import FcpConfig
from .model import BandedAffineModel
from .scene import SceneSpec, simulate
from .spectral import MultichannelSpectrogram, StftConfig, istft, stft
from .trainer import (
    TrainConfig,
    TrainSample,
    TrainingDivergedError,
    batch_gradient,
    evaluate,
    finite_difference_gradient,
    monaural_enhancer,
    sample_loss,
    snr_db,
    train,
)
from .wavio import read_wav, write_wav

GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    """Config or argument problem; maps to exit code 1."""


class NumericalFailure(Exception):
    """Computation ran but failed numerically; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we want 1
        raise UsageError(f"{self.prog}: {message}")


def _load_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid JSON in {path}: {exc}") from exc


def _dump_json(path, payload: dict):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _stft_config(d: dict | None) -> StftConfig:
    d = d or {}
    try:
        return StftConfig(
            sample_rate=d.get("sample_rate", 16000),
            win_len=d.get("win_len", 512),
            hop=d.get("hop", 128),
            window=d.get("window", "sqrt_hann"),
            fft_size=d.get("fft_size"),
        )
    except ValueError as exc:
        raise UsageError(f"bad stft config: {exc}") from exc


def _fcp_config(d: dict | None) -> FcpConfig:
    d = d or {}
    try:
        return FcpConfig(
            past_taps=d.get("past_taps", 20),
            future_taps=d.get("future_taps", 1),
            weight_floor=d.get("weight_floor", 1e-2),
            diag_load=d.get("diag_load", 1e-10),
        )
    except ValueError as exc:
        raise UsageError(f"bad fcp config: {exc}") from exc


def _scene_spec(d: dict) -> SceneSpec:
    try:
        return SceneSpec.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bad scene config: {exc}") from exc


def _write_manifest(out_dir: Path, command: str, config_path, seed, inputs, outputs,
                    started: float):
    manifest = {
        "command": command,
        "config_path": str(config_path) if config_path else None,
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "tool_version": __version__,
        "wall_time_s": time.monotonic() - started,
    }
    _dump_json(out_dir / "manifest.json", manifest)


# -- simulate ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    started = time.monotonic()
    cfg = _load_json(args.config)
    if "scene" not in cfg:
        raise UsageError("simulate config needs a 'scene' object")
    spec = _scene_spec(cfg["scene"])
    stft_cfg = _stft_config(cfg.get("stft"))
    out_dir = Path(args.out or cfg.get("out_dir", "."))
    out_dir.mkdir(parents=True, exist_ok=True)

    bundle = simulate(spec, stft_cfg)
    outputs = []
    for name, data in (("mixture.wav", bundle.mixture_time),
                       ("target.wav", bundle.target_time),
                       ("noise.wav", bundle.noise_time)):
        path = out_dir / name
        write_wav(path, data, stft_cfg.sample_rate, fmt="float32")
        outputs.append(path)
    scene_path = out_dir / "scene.json"
    _dump_json(scene_path, spec.to_dict())
    outputs.append(scene_path)
    _write_manifest(out_dir, "simulate", args.config, spec.seed, [args.config],
                    outputs, started)
    print(f"wrote {len(outputs)} files to {out_dir}")
    return 0


# -- beamform ----------------------------------------------------------------


def _estimates_from_wavs(target_path, noise_path, stft_cfg, num_mics, subset):
    for path in (target_path, noise_path):
        if path is None:
            raise UsageError("oracle/estimate beamforming needs --target and --noise WAVs")
        if not Path(path).exists():
            raise UsageError(f"estimate file not found: {path}")
    target_time, sr_t = read_wav(target_path)
    noise_time, sr_n = read_wav(noise_path)
    if sr_t != stft_cfg.sample_rate or sr_n != stft_cfg.sample_rate:
        raise UsageError("estimate WAV sample rates do not match the STFT config")
    if target_time.shape[0] != num_mics or noise_time.shape[0] != num_mics:
        raise UsageError(
            f"estimate WAVs have {target_time.shape[0]}/{noise_time.shape[0]} channels, "
            f"mixture has {num_mics}"
        )
    target_spec = stft(target_time, stft_cfg)
    noise_spec = stft(noise_time, stft_cfg)
    return target_spec.data[list(subset)], noise_spec.data[list(subset)]


def cmd_beamform(args) -> int:
    started = time.monotonic()
    if not Path(args.mixture).exists():
        raise UsageError(f"mixture not found: {args.mixture}")
    stft_cfg = _stft_config(
        {"sample_rate": args.sample_rate, "win_len": args.win_len, "hop": args.hop})
    samples, sr = read_wav(args.mixture)
    if sr != stft_cfg.sample_rate:
        raise UsageError(f"mixture sample rate {sr} != configured {stft_cfg.sample_rate}")
    mixture = stft(samples, stft_cfg)

    try:
        subset = tuple(int(tok) for tok in args.mics.split(",") if tok != "")
    except ValueError as exc:
        raise UsageError(f"bad --mics list {args.mics!r}") from exc

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = [args.mixture]

    try:
        if args.checkpoint:
            if not Path(args.checkpoint).exists():
                raise UsageError(f"checkpoint not found: {args.checkpoint}")
            model, _ = BandedAffineModel.load(args.checkpoint)
            inputs.append(args.checkpoint)
            beamformed, weights, stats = derive_bf_mixture(
                mixture, monaural_enhancer(model), subset, args.ref_mic,
                diag_load=args.diag_load)
        else:
            target_sub, noise_sub = _estimates_from_wavs(
                args.target, args.noise, stft_cfg, mixture.num_mics, subset)
            inputs += [args.target, args.noise]
            beamformed, weights, stats = beamform_from_estimates(
                mixture, target_sub, noise_sub, subset, args.ref_mic,
                diag_load=args.diag_load)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    if args.oracle:
        # decompose the beamformed mixture with the oracle images to report SNRs
        target_sub, noise_sub = _estimates_from_wavs(
            args.target, args.noise, stft_cfg, mixture.num_mics, subset)
        bf_target = apply_beamformer(weights, target_sub)
        bf_noise = apply_beamformer(weights, noise_sub)
        stats["snr_bf_db"] = 10.0 * float(
            np.log10(np.sum(np.abs(bf_target) ** 2) / np.sum(np.abs(bf_noise) ** 2)))
        stats["snr_per_mic_db"] = [
            10.0 * float(np.log10(np.sum(np.abs(target_sub[i]) ** 2)
                                  / np.sum(np.abs(noise_sub[i]) ** 2)))
            for i in range(len(subset))
        ]

    npy_path = out_dir / "beamformed.npy"
    np.save(npy_path, beamformed)
    wav_path = out_dir / "beamformed.wav"
    bf_time = istft(MultichannelSpectrogram(beamformed[None], stft_cfg),
                    out_len=samples.shape[1])
    write_wav(wav_path, bf_time, stft_cfg.sample_rate, fmt="float32")
    report_path = out_dir / "report.json"
    _dump_json(report_path, stats)
    _write_manifest(out_dir, "beamform", None, None, inputs,
                    [npy_path, wav_path, report_path], started)
    print(f"beamformed {args.mixture} over mics {subset} -> {npy_path}")
    return 0


# -- train -------------------------------------------------------------------


def _train_config(d: dict) -> TrainConfig:
    try:
        return TrainConfig(
            mode=d["mode"],
            lr=d.get("lr", 0.05),
            steps=d.get("steps", 100),
            batch=d.get("batch", 1),
            seed=d.get("seed", 0),
            fcp=_fcp_config(d.get("fcp")),
            grad_method=d.get("grad_method", "analytic"),
            fd_step=d.get("fd_step", 1e-4),
            through_filter=d.get("through_filter", True),
            init=d.get("init", "random"),
            init_scale=d.get("init_scale", 0.05),
            input_channels=d.get("input_channels", 1),
            context=d.get("context", 1),
            num_bands=d.get("num_bands", 8),
        )
    except (KeyError, ValueError) as exc:
        raise UsageError(f"bad train config: {exc}") from exc


def _build_sample(entry: dict, stft_cfg: StftConfig, needs_bf: bool) -> TrainSample:
    if "scene" not in entry:
        raise UsageError("dataset entry needs a 'scene' object")
    bundle = simulate(_scene_spec(entry["scene"]), stft_cfg)
    tag = entry.get("tag", "simulated")
    mixture_bf = None
    if entry.get("bf_path"):
        bf_path = Path(entry["bf_path"])
        if not bf_path.exists():
            raise UsageError(f"beamformed mixture not found: {bf_path}")
        mixture_bf = np.load(bf_path)
        if mixture_bf.shape != (bundle.mixture.num_frames, bundle.mixture.num_bins):
            raise UsageError(
                f"{bf_path}: beamformed mixture shape {mixture_bf.shape} does not "
                f"match the scene ({bundle.mixture.num_frames}, {bundle.mixture.num_bins})"
            )
    try:
        sample = TrainSample(bundle, tag=tag, mixture_bf=mixture_bf)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if needs_bf and tag == "real_like" and mixture_bf is None:
        raise UsageError(
            f"mode needs beamformed mixtures but dataset entry (tag={tag}) has no "
            f"'bf_path'; derive one with the beamform command"
        )
    return sample


def cmd_train(args) -> int:
    started = time.monotonic()
    cfg_json = _load_json(args.config)
    if "train" not in cfg_json or "dataset" not in cfg_json:
        raise UsageError("train config needs 'train' and 'dataset' sections")
    train_cfg = _train_config(cfg_json["train"])
    stft_cfg = _stft_config(cfg_json.get("stft"))
    needs_bf = train_cfg.mode in ("m2bm", "super_m2bm")
    dataset = [_build_sample(e, stft_cfg, needs_bf) for e in cfg_json["dataset"]]
    heldout = [simulate(_scene_spec(e["scene"] if "scene" in e else e), stft_cfg)
               for e in cfg_json.get("heldout", [])]

    out_dir = Path(args.out or cfg_json.get("out_dir", "."))
    out_dir.mkdir(parents=True, exist_ok=True)

    result = train(train_cfg, dataset)
    ckpt_path = out_dir / "checkpoint.bin"
    result.model.save(ckpt_path, extra={"mode": train_cfg.mode, "seed": train_cfg.seed,
                                        "steps": train_cfg.steps})
    report = {
        "mode": train_cfg.mode,
        "loss_curve": result.loss_curve,
        "mode_counts": result.mode_counts,
        "final_loss": result.final_loss,
        "initial_loss": result.loss_curve[0],
    }
    if heldout:
        report["eval"] = evaluate(result.model, heldout, train_cfg.fcp).to_dict()
    report_path = out_dir / "report.json"
    _dump_json(report_path, report)
    _write_manifest(out_dir, "train", args.config, train_cfg.seed, [args.config],
                    [ckpt_path, report_path], started)
    print(f"trained {train_cfg.mode} for {train_cfg.steps} steps: "
          f"loss {report['initial_loss']:.6f} -> {report['final_loss']:.6f}")
    return 0


# -- enhance -----------------------------------------------------------------


def cmd_enhance(args) -> int:
    started = time.monotonic()
    for path in (args.checkpoint, args.mixture):
        if not Path(path).exists():
            raise UsageError(f"input not found: {path}")
    model, _meta = BandedAffineModel.load(args.checkpoint)
    stft_cfg = _stft_config(
        {"sample_rate": args.sample_rate, "win_len": args.win_len, "hop": args.hop})
    if stft_cfg.num_bins != model.num_bins:
        raise UsageError(
            f"checkpoint expects {model.num_bins} bins but the STFT config "
            f"produces {stft_cfg.num_bins}; pass matching --win-len"
        )
    samples, sr = read_wav(args.mixture)
    if sr != stft_cfg.sample_rate:
        raise UsageError(f"mixture sample rate {sr} != configured {stft_cfg.sample_rate}")
    if samples.shape[0] < model.input_channels:
        raise UsageError(
            f"checkpoint wants {model.input_channels} input channels, "
            f"mixture has {samples.shape[0]}"
        )
    mixture = stft(samples, stft_cfg)
    target_est, _ = model.forward(mixture.data[: model.input_channels])
    est_time = istft(MultichannelSpectrogram(target_est[None], stft_cfg),
                     out_len=samples.shape[1])
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_wav(out_path, est_time, stft_cfg.sample_rate, fmt="float32")
    _write_manifest(out_path.parent, "enhance", None, None,
                    [args.checkpoint, args.mixture], [out_path], started)
    print(f"enhanced {args.mixture} -> {out_path}")
    return 0


# -- gradcheck ---------------------------------------------------------------


def _gradcheck_fixture(cfg: dict):
    """Small deterministic scene + model + beamformed mixture for the audit."""
    seed = cfg.get("seed", 0)
    stft_cfg = _stft_config(cfg.get("stft") or {"win_len": 64, "hop": 16})
    fcp_cfg = _fcp_config(cfg.get("fcp") or {"past_taps": 3, "future_taps": 1})
    if "scene" in cfg:
        spec = _scene_spec(cfg["scene"])
    else:
        rng = np.random.default_rng(seed)
        from .scene import SourceSpec, random_delay_firs
        spec = SceneSpec(
            num_mics=3,
            target_firs=random_delay_firs(rng, 3, max_delay=3, num_taps=6),
            noise_firs=(random_delay_firs(rng, 3, max_delay=3, num_taps=6),),
            target_source=SourceSpec(kind="noise", duration_s=0.12),
            noise_sources=(SourceSpec(kind="noise", duration_s=0.12),),
            snr_db=3.0, ref_mic=0, seed=seed,
        )
    bundle = simulate(spec, stft_cfg)
    model_cfg = cfg.get("model") or {}
    model = BandedAffineModel.random(
        bundle.mixture.num_bins,
        model_cfg.get("input_channels", 1),
        model_cfg.get("context", 1),
        model_cfg.get("num_bands", 4),
        seed=seed, scale=model_cfg.get("scale", 0.3))
    if model.num_params > 4096:
        raise UsageError(f"gradcheck model has {model.num_params} params (> 4096)")
    # beamformed mixture from the oracle images: fixed data, not a model output
    beamformed, _, _ = beamform_from_estimates(
        bundle.mixture, bundle.target.data, bundle.noise.data,
        tuple(range(bundle.num_mics)), bundle.ref_mic)
    return bundle, model, beamformed, fcp_cfg


def _gradcheck_mode(model, sample, mode, fcp_cfg, fd_step, through_filter=True):
    train_cfg = TrainConfig(mode=mode, fcp=fcp_cfg, grad_method="analytic",
                            through_filter=through_filter)
    _, kinds, analytic = batch_gradient(model, [sample], train_cfg)

    def loss_at(params):
        probe = BandedAffineModel(model.num_bins, model.input_channels, model.context,
                                  model.num_bands, params=params.copy())
        return sample_loss(probe, sample, kinds[0], fcp_cfg).total

    fd = finite_difference_gradient(loss_at, model.params, rel_step=fd_step)
    denom = max(float(np.linalg.norm(fd)), np.finfo(np.float64).tiny)
    rel = float(np.linalg.norm(analytic - fd)) / denom
    return rel, float(np.linalg.norm(analytic)), float(np.linalg.norm(fd))


def cmd_gradcheck(args) -> int:
    started = time.monotonic()
    cfg = _load_json(args.config) if args.config else {}
    bundle, model, beamformed, fcp_cfg = _gradcheck_fixture(cfg)
    fd_step = cfg.get("fd_step", 1e-7)
    sweep_steps = cfg.get("sweep", [1e-3, 1e-4, 1e-5])
    modes = cfg.get("modes", ["supervised", "m2m", "m2bm"])

    report = {"fd_step": fd_step, "tolerance": GRADCHECK_TOL, "num_params": model.num_params,
              "modes": {}, "sweep": {}}
    worst = 0.0
    for mode in modes:
        sample = TrainSample(bundle, tag="real_like",
                             mixture_bf=beamformed if mode == "m2bm" else None)
        rel, norm_an, norm_fd = _gradcheck_mode(model, sample, mode, fcp_cfg, fd_step)
        report["modes"][mode] = {
            "rel_err": rel,
            "analytic_norm": norm_an,
            "fd_norm": norm_fd,
            "pass": rel <= GRADCHECK_TOL,
        }
        worst = max(worst, rel)
    # step-size sweep on the supervised loss: logged, not asserted
    sweep_sample = TrainSample(bundle, tag="simulated")
    for step in sweep_steps:
        rel, _, _ = _gradcheck_mode(model, sweep_sample, "supervised", fcp_cfg, step)
        report["sweep"][f"{step:.0e}"] = rel

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    _dump_json(report_path, report)
    _write_manifest(out_dir, "gradcheck", args.config, cfg.get("seed", 0),
                    [args.config] if args.config else [], [report_path], started)
    for mode, entry in report["modes"].items():
        print(f"{mode}: rel err {entry['rel_err']:.3e} ({'ok' if entry['pass'] else 'FAIL'})")
    if worst > GRADCHECK_TOL:
        raise NumericalFailure(
            f"gradient audit failed: worst relative error {worst:.3e} > {GRADCHECK_TOL}")
    return 0


# -- eval --------------------------------------------------------------------


def cmd_eval(args) -> int:
    started = time.monotonic()
    cfg = _load_json(args.config)
    if "scenes" not in cfg or not cfg["scenes"]:
        raise UsageError("eval config needs a nonempty 'scenes' list")
    if not Path(args.checkpoint).exists():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    model, _ = BandedAffineModel.load(args.checkpoint)
    stft_cfg = _stft_config(cfg.get("stft"))
    fcp_cfg = _fcp_config(cfg.get("fcp"))
    scenes = [simulate(_scene_spec(e["scene"] if "scene" in e else e), stft_cfg)
              for e in cfg["scenes"]]
    report = evaluate(model, scenes, fcp_cfg).to_dict()
    # context: how good the raw mixture already is
    report["unprocessed_snr_db"] = [
        snr_db(b.target_time[b.ref_mic], b.mixture_time[b.ref_mic]) for b in scenes
    ]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    _dump_json(report_path, report)
    _write_manifest(out_dir, "eval", args.config, None, [args.checkpoint, args.config],
                    [report_path], started)
    print(f"eval over {len(scenes)} scenes: "
          f"SI-SDR {report['si_sdr_mean_db']:.2f} dB, SNR {report['snr_mean_db']:.2f} dB")
    return 0


# -- parser ------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="m2bm", description=__doc__)
    parser.add_argument("--version", action="version", version=f"m2bm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="render a synthetic scene to WAV files")
    p.add_argument("config")
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("beamform", help="derive a beamformed mixture")
    p.add_argument("mixture", help="multichannel mixture WAV")
    p.add_argument("--ref-mic", type=int, default=0)
    p.add_argument("--mics", default="", help="comma-separated mic indices")
    p.add_argument("--oracle", action="store_true",
                   help="use ground-truth images as the per-mic estimates")
    p.add_argument("--target", default=None, help="target-image WAV (oracle/estimates)")
    p.add_argument("--noise", default=None, help="noise-image WAV (oracle/estimates)")
    p.add_argument("--checkpoint", default=None, help="enhancer checkpoint to mint estimates")
    p.add_argument("--diag-load", type=float, default=1e-6)
    p.add_argument("--out", default=".")
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--win-len", type=int, default=512)
    p.add_argument("--hop", type=int, default=128)
    p.set_defaults(func=cmd_beamform)

    p = sub.add_parser("train", help="train the toy enhancer")
    p.add_argument("config")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="run a checkpoint on a mixture WAV")
    p.add_argument("checkpoint")
    p.add_argument("mixture")
    p.add_argument("--out", default="enhanced.wav")
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--win-len", type=int, default=512)
    p.add_argument("--hop", type=int, default=128)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("gradcheck", help="audit analytic gradients against finite differences")
    p.add_argument("config", nargs="?", default=None)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("eval", help="evaluate a checkpoint on synthetic scenes")
    p.add_argument("checkpoint")
    p.add_argument("config")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingDivergedError, NumericalFailure, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
