"""Losses, feature loading, the training loop, evaluation and checkpoints."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .audio import MonoClip, load_stereo
from .codec import DEFAULT_RHO, DEFAULT_SIGMA, N_CLASSES, DoADistribution, decode_doa, encode_batch, report
from .dataset import missing_files, read_manifest, resolve
from .encoders import PromptRef, encode_audio_semantic, encode_image_semantic
from .features import stft
from .nn.fusion import AblationFuser
from .nn.model import ALIGNMENT_MODES, PROMPT_MODES, LocalizerNet, ModelConfig

logger = logging.getLogger(__name__)

PRESETS = ("desk", "full")
ROLES = ("target", "interferer")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 5e-3
    sigma_theta: float = DEFAULT_SIGMA
    seed: int = 0
    ablation_mode: str = "matching"
    prompt_mode: str = "av"
    weight_decay: float = 0.01
    grad_clip: float = 5.0
    eval_every: int = 250
    # every mixture is used twice, once per source, with that source's prompt
    role_swap: bool = True
    mask_imag: bool = False
    preset: str = "desk"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.ablation_mode not in ALIGNMENT_MODES:
            raise ValueError(f"ablation_mode must be one of {ALIGNMENT_MODES}")
        if self.prompt_mode not in PROMPT_MODES:
            raise ValueError(f"prompt_mode must be one of {PROMPT_MODES}")
        if self.preset not in PRESETS:
            raise ValueError(f"preset must be one of {PRESETS}")

    def model_config(self, n_freq: Optional[int] = None) -> ModelConfig:
        extra = dict(alignment=self.ablation_mode, prompt_mode=self.prompt_mode, mask_imag=self.mask_imag)
        if n_freq is not None:
            extra["n_freq"] = n_freq
        return ModelConfig.desk(**extra) if self.preset == "desk" else ModelConfig(**extra)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# ---------------------------------------------------------------- losses

def loss_recon(x_clean_real: torch.Tensor, x_gt: torch.Tensor) -> torch.Tensor:
    """Mean squared error between the masked real spectrogram and the clean target's."""
    if x_clean_real.shape != x_gt.shape:
        raise ValueError(f"shape mismatch: {tuple(x_clean_real.shape)} vs {tuple(x_gt.shape)}")
    return torch.mean((x_clean_real - x_gt) ** 2)


def _probs(d) -> torch.Tensor:
    if isinstance(d, DoADistribution):
        d = d.probs
    return torch.as_tensor(d) if not isinstance(d, torch.Tensor) else d


def loss_doa(pred, label) -> torch.Tensor:
    """Squared error summed over the 180 classes, averaged over any batch axes.

    Both vectors are scaled to unit sum first, so a softmax posterior can
    reach zero loss against the peak-1 label.
    """
    p, q = _probs(pred), _probs(label)
    if p.shape[-1] != N_CLASSES or q.shape[-1] != N_CLASSES:
        raise ValueError(f"expected {N_CLASSES} classes, got {p.shape[-1]} and {q.shape[-1]}")
    q = q.to(p.dtype)
    p = p / p.sum(dim=-1, keepdim=True)
    q = q / q.sum(dim=-1, keepdim=True)
    return ((p - q) ** 2).sum(dim=-1).mean()


def loss_joint(recon, doa):
    return recon + doa


def fuse_ablation(semantic: torch.Tensor, spatial: torch.Tensor, mode: str,
                  fuser: Optional[AblationFuser] = None) -> torch.Tensor:
    """Concatenation or FiLM alignment of a prompt ``[B, T, d]`` with ``[B, T, F, d]`` features."""
    if fuser is None:
        fuser = AblationFuser(mode, semantic.shape[-1], spatial.shape[-1]).to(spatial.dtype)
    elif fuser.mode != mode:
        raise ValueError(f"fuser mode {fuser.mode!r} does not match {mode!r}")
    return fuser(semantic, spatial)


# ---------------------------------------------------------------- features

@dataclass
class FeatureSet:
    """Network inputs and targets for a list of (record, role) examples."""

    x_r: torch.Tensor  # [E, 2, T, F]
    x_i: torch.Tensor
    x_gt: torch.Tensor  # [E, 2, T, F]
    fv: torch.Tensor  # [E, d_V]
    fa: torch.Tensor  # [E, t, d_A]
    azimuth: np.ndarray  # [E] truth for the prompted source
    other_azimuth: np.ndarray  # [E] the other source
    record_id: list = field(default_factory=list)
    role: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.azimuth)

    def subset(self, idx) -> "FeatureSet":
        idx = np.asarray(idx)
        t = torch.as_tensor(idx)
        return FeatureSet(self.x_r[t], self.x_i[t], self.x_gt[t], self.fv[t], self.fa[t],
                          self.azimuth[idx], self.other_azimuth[idx],
                          [self.record_id[i] for i in idx], [self.role[i] for i in idx])


def load_features(manifest, roles: Sequence[str] = ROLES) -> FeatureSet:
    """Read every record of ``manifest`` and build one example per requested role.

    The ``target`` role uses the recorded prompt and target azimuth; the
    ``interferer`` role uses the interferer's prompt, clean signal and azimuth.
    """
    for r in roles:
        if r not in ROLES:
            raise ValueError(f"unknown role {r!r}")
    records = read_manifest(manifest)
    missing = missing_files(manifest, records)
    if missing:
        raise FileNotFoundError("missing dataset files: " + ", ".join(str(p) for p in missing))
    cols = {k: [] for k in ("x_r", "x_i", "x_gt", "fv", "fa", "az", "other", "rid", "role")}
    for rec in records:
        mix = load_stereo(resolve(manifest, rec, "mixture"))
        spec = stft(mix)
        mono = MonoClip(mix.samples.mean(axis=0), mix.sample_rate, instance=f"mixture:{rec['id']}")
        fa = encode_audio_semantic(mono).values
        for role in roles:
            other = "interferer" if role == "target" else "target"
            gt = stft(load_stereo(resolve(manifest, rec, role)))
            prompt = PromptRef.from_dict(rec["prompt" if role == "target" else "interferer_prompt"])
            cols["x_r"].append(spec.real)
            cols["x_i"].append(spec.imag)
            cols["x_gt"].append(gt.real)
            cols["fv"].append(encode_image_semantic(prompt))
            cols["fa"].append(fa)
            cols["az"].append(rec[f"{role}_azimuth"])
            cols["other"].append(rec[f"{other}_azimuth"])
            cols["rid"].append(rec["id"])
            cols["role"].append(role)

    def stack(key):
        return torch.as_tensor(np.stack(cols[key]), dtype=torch.float32)

    return FeatureSet(stack("x_r"), stack("x_i"), stack("x_gt"), stack("fv"), stack("fa"),
                      np.asarray(cols["az"], dtype=int), np.asarray(cols["other"], dtype=int),
                      cols["rid"], cols["role"])


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, model: LocalizerNet, train_config: Optional[TrainConfig] = None,
                    step: int = 0, metrics: Optional[dict] = None) -> Path:
    """Single ``.npz``: one array per named parameter plus a JSON metadata string."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "model_config": model.cfg.to_dict(),
        "train_config": train_config.to_dict() if train_config else None,
        "step": int(step),
        "metrics": metrics or {},
    }
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    arrays["meta"] = np.array(json.dumps(meta))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> tuple[LocalizerNet, dict]:
    """Rebuild the model from a checkpoint; parameter names and shapes must match exactly."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        params = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
    model = LocalizerNet(ModelConfig.from_dict(meta["model_config"]))
    expected = model.state_dict()
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ValueError(f"checkpoint parameter mismatch: missing {missing}, unexpected {extra}")
    for k, v in params.items():
        if tuple(v.shape) != tuple(expected[k].shape):
            raise ValueError(f"shape mismatch for {k}: {v.shape} vs {tuple(expected[k].shape)}")
    model.load_state_dict({k: torch.from_numpy(np.array(v)) for k, v in params.items()})
    model.eval()
    return model, meta


# ---------------------------------------------------------------- inference / evaluation

def _posterior_fn(model) -> Callable:
    if isinstance(model, LocalizerNet):
        return lambda *xs: model(*xs)["posterior"]
    return model


@torch.no_grad()
def predict(model, feats: FeatureSet, batch_size: int = 16) -> np.ndarray:
    """Posterior ``[E, 180]`` for every example. ``model`` may also be any callable
    ``(x_r, x_i, fv, fa) -> posterior``."""
    fn = _posterior_fn(model)
    was_training = getattr(model, "training", False)
    if isinstance(model, torch.nn.Module):
        model.eval()
    out = []
    for s in range(0, len(feats), batch_size):
        sl = slice(s, s + batch_size)
        out.append(torch.as_tensor(fn(feats.x_r[sl], feats.x_i[sl], feats.fv[sl], feats.fa[sl])))
    if isinstance(model, torch.nn.Module):
        model.train(was_training)
    return torch.cat(out).double().numpy()


@torch.no_grad()
def dataset_losses(model: LocalizerNet, feats: FeatureSet, sigma: float = DEFAULT_SIGMA,
                   batch_size: int = 16) -> dict:
    """Example-weighted mean losses over the whole feature set."""
    was_training = model.training
    model.eval()
    labels = torch.as_tensor(encode_batch(feats.azimuth, sigma), dtype=torch.float32)
    tot = {"loss_recon": 0.0, "loss_doa": 0.0}
    for s in range(0, len(feats), batch_size):
        sl = slice(s, s + batch_size)
        out = model(feats.x_r[sl], feats.x_i[sl], feats.fv[sl], feats.fa[sl])
        n = len(feats.azimuth[sl])
        tot["loss_recon"] += float(loss_recon(out["x_m"], feats.x_gt[sl])) * n
        tot["loss_doa"] += float(loss_doa(out["posterior"], labels[sl])) * n
    model.train(was_training)
    res = {k: v / len(feats) for k, v in tot.items()}
    res["loss_joint"] = res["loss_recon"] + res["loss_doa"]
    return res


def score(posteriors: np.ndarray, feats: FeatureSet, rho: float = DEFAULT_RHO) -> dict:
    """MAE/ACC report plus per-example decisions."""
    preds = [decode_doa(p) for p in posteriors]
    pairs = list(zip((int(a) for a in feats.azimuth), preds))
    rep = report(pairs, rho)
    rep["decisions"] = [
        {"id": rid, "role": role, "truth": t, "pred": p, "other": int(o)}
        for rid, role, (t, p), o in zip(feats.record_id, feats.role, pairs, feats.other_azimuth)
    ]
    return rep


def evaluate(model, manifest, rho: float = DEFAULT_RHO, roles: Sequence[str] = ("target",),
             prompt_mode: Optional[str] = None, feats: Optional[FeatureSet] = None) -> dict:
    """Run inference on every record and score the decoded DoAs.

    ``model`` is a checkpoint path, a :class:`LocalizerNet` or a posterior
    callable. ``roles`` selects which source is prompted: the recorded target,
    the interferer, or both. ``prompt_mode`` overrides the model's prompt mode.
    """
    if isinstance(model, (str, Path)):
        model, _ = load_checkpoint(model)
    if feats is None:
        feats = load_features(manifest, roles)
    if prompt_mode is not None and isinstance(model, LocalizerNet):
        saved = model.cfg.prompt_mode
        model.cfg.prompt_mode = prompt_mode
        try:
            post = predict(model, feats)
        finally:
            model.cfg.prompt_mode = saved
    else:
        post = predict(model, feats)
    return score(post, feats, rho)


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    model: LocalizerNet
    history: list
    best_acc: float
    best_step: int
    checkpoint: Optional[Path]
    seconds: float


def _batches(n: int, batch_size: int, steps: int, seed: int):
    """Deterministic shuffled mini-batches, reshuffled after each pass."""
    rng = np.random.default_rng(seed)
    order = np.empty(0, dtype=int)
    for _ in range(steps):
        while len(order) < batch_size:
            order = np.concatenate([order, rng.permutation(n)])
        yield order[:batch_size]
        order = order[batch_size:]


def train(config: TrainConfig, manifest=None, out_dir=None, feats: Optional[FeatureSet] = None,
          progress: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """AdamW on the joint loss with gradient clipping.

    Writes ``metrics.jsonl``, ``best.npz`` (highest training-set ACC) and
    ``last.npz`` to ``out_dir`` when given. Metric records for step ``k`` hold
    the batch losses of update ``k``; step 0 holds the training-set losses
    before any update. Records at evaluation steps additionally carry
    ``eval_*`` training-set losses, MAE and ACC measured after that update.
    """
    t0 = time.perf_counter()
    if feats is None:
        if manifest is None:
            raise ValueError("need a manifest or preloaded features")
        feats = load_features(manifest, ROLES if config.role_swap else ("target",))
    torch.manual_seed(config.seed)
    model = LocalizerNet(config.model_config(n_freq=feats.x_r.shape[-1]))
    opt = torch.optim.AdamW(model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)
    labels = torch.as_tensor(encode_batch(feats.azimuth, config.sigma_theta), dtype=torch.float32)

    out_dir = Path(out_dir) if out_dir is not None else None
    log = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log = open(out_dir / "metrics.jsonl", "w")
    history = []
    best_acc, best_step, best_path = -1.0, -1, None

    def emit(rec):
        history.append(rec)
        if log:
            log.write(json.dumps(rec) + "\n")
            log.flush()
        if progress:
            progress(rec)

    def run_eval(step, rec):
        nonlocal best_acc, best_step, best_path
        losses = dataset_losses(model, feats, config.sigma_theta)
        rep = score(predict(model, feats), feats)
        rec.update({f"eval_{k}": v for k, v in losses.items()})
        rec.update(eval_mae=rep["mae_deg"], eval_acc=rep["acc_pct"])
        if rep["acc_pct"] > best_acc:
            best_acc, best_step = rep["acc_pct"], step
            if out_dir is not None:
                best_path = save_checkpoint(out_dir / "best.npz", model, config, step,
                                            {"mae_deg": rep["mae_deg"], "acc_pct": rep["acc_pct"]})
        return rec

    try:
        rec0 = run_eval(0, {"step": 0})
        rec0.update({k: rec0[f"eval_{k}"] for k in ("loss_recon", "loss_doa", "loss_joint")})
        emit(rec0)
        model.train()
        for step, idx in enumerate(_batches(len(feats), config.batch_size, config.steps, config.seed), 1):
            t = torch.as_tensor(idx)
            out = model(feats.x_r[t], feats.x_i[t], feats.fv[t], feats.fa[t])
            lr_ = loss_recon(out["x_m"], feats.x_gt[t])
            ld = loss_doa(out["posterior"], labels[t])
            loss = loss_joint(lr_, ld)
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at step {step}: recon={lr_.item()}, doa={ld.item()}")
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            opt.step()
            rec = {"step": step, "loss_recon": lr_.item(), "loss_doa": ld.item(), "loss_joint": loss.item()}
            if step % config.eval_every == 0 or step == config.steps:
                run_eval(step, rec)
            emit(rec)
        if out_dir is not None:
            save_checkpoint(out_dir / "last.npz", model, config, config.steps,
                            {k: history[-1][k] for k in ("eval_mae", "eval_acc")})
    finally:
        if log:
            log.close()
    return TrainResult(model, history, best_acc, best_step, best_path, time.perf_counter() - t0)


def read_metrics(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
