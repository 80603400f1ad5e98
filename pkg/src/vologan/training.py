"""CycleGAN training loop: two generators, two discriminators, checkpoints and metrics."""

from __future__ import annotations

import csv
import json
import logging
import os
import re
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import losses as L
from . import tensor as T
from .config import RunConfig
from .data import DatasetManifest, iter_batches, split_indices
from .models import Discriminator, Generator, build_discriminator, build_generator, load_state_arrays, state_arrays
from .optim import OptimizerState, lr_at, nadam_step, nadam_state, sgd_momentum_step, sgd_state
from .tensor import Tensor, no_grad, read_vten, write_vten

log = logging.getLogger(__name__)

MODEL_NAMES = ("G_ST", "G_TS", "D_S", "D_T")
UPDATE_ORDER = "generators_then_discriminators"
CSV_COLUMNS = ("phase",) + L.METRIC_COLUMNS + ("lr_g", "lr_d", "adv_st", "adv_ts")
CHECKPOINT_FORMAT = "vologan-checkpoint/1"


@dataclass
class TrainState:
    cfg: RunConfig
    models: dict[str, Generator | Discriminator]
    optimizers: dict[str, OptimizerState]
    epoch: int = 0
    step: int = 0

    @property
    def G_ST(self) -> Generator:
        return self.models["G_ST"]

    @property
    def G_TS(self) -> Generator:
        return self.models["G_TS"]

    @property
    def D_S(self) -> Discriminator:
        return self.models["D_S"]

    @property
    def D_T(self) -> Discriminator:
        return self.models["D_T"]

    @property
    def seed(self) -> int:
        return self.cfg.seed

    def params(self, name: str) -> dict[str, Tensor]:
        return dict(self.models[name].named_parameters())


def init_state(cfg: RunConfig) -> TrainState:
    models = {}
    for i, name in enumerate(MODEL_NAMES):
        rng = np.random.default_rng([cfg.seed, 1, i])
        if name.startswith("G"):
            models[name] = build_generator(cfg.generator, rng)
        else:
            models[name] = build_discriminator(cfg.discriminator, rng)
    o = cfg.optim
    optimizers = {
        "G_ST": nadam_state(o.beta1, o.beta2, o.eps),
        "G_TS": nadam_state(o.beta1, o.beta2, o.eps),
        "D_S": sgd_state(o.momentum),
        "D_T": sgd_state(o.momentum),
    }
    return TrainState(cfg, models, optimizers)


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    """Independent stream per epoch so a resumed run replays the same draws."""
    return np.random.default_rng([seed, 17, epoch])


# -- losses for one batch ------------------------------------------------------

@dataclass
class GeneratorPass:
    report: L.LossReport
    fake_t: Tensor
    fake_s: Tensor
    adv_st: float
    adv_ts: float


def _halves(x: Tensor, n: int) -> tuple[Tensor, Tensor]:
    return T.slice_batch(x, 0, n), T.slice_batch(x, n, 2 * n)


def generator_pass(state: TrainState, s: Tensor, t: Tensor, epoch: int, training: bool,
                   rng: np.random.Generator | None) -> GeneratorPass:
    """Translate, cycle and identity-map both batches and build the weighted generator objective."""
    w = state.cfg.loss
    n = s.shape[0]
    g_st, g_ts, d_s, d_t = (state.models[k] for k in MODEL_NAMES)

    fake_t, id_t = _halves(g_st(T.concat_batch([s, t]), training, rng), n)
    fake_s, id_s = _halves(g_ts(T.concat_batch([t, s]), training, rng), n)
    cyc_s = g_ts(fake_t, training, rng)
    cyc_t = g_st(fake_s, training, rng)

    adv_st = L.generator_adv_from_heads(d_t(fake_t, training, rng))
    adv_ts = L.generator_adv_from_heads(d_s(fake_s, training, rng))
    adv = adv_st + adv_ts

    def pix(xp, yp, x, y):
        return L.pixel_loss(xp, yp, x, y, epoch, w.epoch_sw)

    def structural(a, b, c, d):
        return L.ssim_loss(a, b, c, d, w.ssim_constants, w.ssim_exponents)

    zero = Tensor(0.0)
    per_channel = {}
    cyc = ide = ss = zero
    if w.lambda_cyc:
        cyc, per_channel["cyc"] = L.channelwise(pix, (cyc_s, cyc_t, s, t), w.lambda_channel)
    if w.lambda_ide:
        ide, per_channel["ide"] = L.channelwise(pix, (id_s, id_t, s, t), w.lambda_channel)
    if w.lambda_ssim:
        ss, per_channel["ssim"] = L.channelwise(structural, (s, t, cyc_s, cyc_t), w.lambda_channel)
    report = L.total_generator_loss({"adv": adv, "cyc": cyc, "ide": ide, "ssim": ss}, w, per_channel)
    return GeneratorPass(report, fake_t, fake_s, adv_st.item(), adv_ts.item())


def discriminator_pass(state: TrainState, s: Tensor, t: Tensor, fake_s: Tensor, fake_t: Tensor,
                       training: bool, rng) -> tuple[Tensor, dict[str, float]]:
    """Least-squares loss of both discriminators on real batches and detached fakes."""
    n = s.shape[0]
    heads = {"lowlevel": 0.0, "layout": 0.0, "content": 0.0}
    total = None
    for name, real, fake in (("D_T", t, fake_t), ("D_S", s, fake_s)):
        out = state.models[name](T.concat_batch([real, fake.detach()]), training, rng)
        split = [_halves(h, n) for h in out]
        ll, lay, con = L.discriminator_head_losses([p[0] for p in split], [p[1] for p in split])
        loss = L.total_discriminator_loss(ll, lay, con)
        total = loss if total is None else total + loss
        heads["lowlevel"] += ll.item()
        heads["layout"] += lay.item()
        heads["content"] += con.item()
    return total, heads


def _check_finite(values: dict[str, float]) -> None:
    for key, value in values.items():
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite loss term {key!r}: {value}")


def _zero_grads(state: TrainState) -> None:
    for m in state.models.values():
        m.zero_grad()


def train_step(state: TrainState, batch_s: np.ndarray, batch_t: np.ndarray,
               rng: np.random.Generator) -> dict[str, float]:
    """One generator update (NADAM) followed by one discriminator update (SGD momentum)."""
    if batch_s.shape != batch_t.shape:
        raise ValueError(f"batch shapes differ: {batch_s.shape} vs {batch_t.shape}")
    epoch = state.epoch
    lr_g = lr_at(state.cfg.schedule_g, epoch)
    lr_d = lr_at(state.cfg.schedule_d, epoch)
    s, t = Tensor(batch_s), Tensor(batch_t)

    _zero_grads(state)
    gen = generator_pass(state, s, t, epoch, True, rng)
    metrics = gen.report.scalars()
    _check_finite(metrics)
    gen.report.total.backward()
    for name in ("G_ST", "G_TS"):
        nadam_step(state.params(name), None, state.optimizers[name], lr_g)

    _zero_grads(state)
    d_total, heads = discriminator_pass(state, s, t, gen.fake_s, gen.fake_t, True, rng)
    d_metrics = {"d_lowlevel": heads["lowlevel"], "d_layout": heads["layout"],
                 "d_content": heads["content"], "total_d": d_total.item()}
    _check_finite(d_metrics)
    d_total.backward()
    for name in ("D_S", "D_T"):
        sgd_momentum_step(state.params(name), None, state.optimizers[name], lr_d)

    state.step += 1
    metrics.update(d_metrics)
    metrics.update(epoch=epoch, step=state.step, lr_g=lr_g, lr_d=lr_d, adv_st=gen.adv_st, adv_ts=gen.adv_ts)
    return metrics


def evaluate(state: TrainState, synthetic: DatasetManifest, target: DatasetManifest,
             idx_s, idx_t, epoch: int) -> dict[str, float]:
    """Mean loss terms over held-out batches; no updates, dropout off."""
    bs = state.cfg.batch_size
    rows = []
    with no_grad():
        batches = zip(iter_batches(synthetic, idx_s, bs, shuffle=False, drop_last=False),
                      iter_batches(target, idx_t, bs, shuffle=False, drop_last=False))
        for bs_arr, bt_arr in batches:
            n = min(len(bs_arr), len(bt_arr))
            s, t = Tensor(bs_arr[:n]), Tensor(bt_arr[:n])
            gen = generator_pass(state, s, t, epoch, False, None)
            d_total, heads = discriminator_pass(state, s, t, gen.fake_s, gen.fake_t, False, None)
            row = gen.report.scalars()
            row.update(d_lowlevel=heads["lowlevel"], d_layout=heads["layout"], d_content=heads["content"],
                       total_d=d_total.item(), adv_st=gen.adv_st, adv_ts=gen.adv_ts)
            rows.append(row)
    out = {k: float(np.mean([r[k] for r in rows])) for k in rows[0]} if rows else {}
    _check_finite(out)
    return out


# -- checkpoints ------------------------------------------------------------------

def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


def save_checkpoint(state: TrainState, directory: str | Path) -> Path:
    """Write the full state to ``directory`` atomically (temp dir, then rename)."""
    directory = Path(directory)
    directory.parent.mkdir(parents=True, exist_ok=True)
    tmp = directory.parent / f".tmp_{directory.name}_{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir()
    tensors = []

    def put(name: str, arr: np.ndarray) -> None:
        fname = _safe(name) + ".vten"
        write_vten(tmp / fname, arr)
        tensors.append({"name": name, "shape": list(arr.shape), "file": fname})

    for mname, model in state.models.items():
        for pname, arr in state_arrays(model).items():
            put(f"{mname}.{pname}", arr)
    optimizers = {}
    for oname, opt in state.optimizers.items():
        optimizers[oname] = {"kind": opt.kind, "step": opt.step, "beta1": opt.beta1, "beta2": opt.beta2,
                             "momentum": opt.momentum, "eps": opt.eps, "slots": sorted(opt.slots)}
        for pname, slots in opt.slots.items():
            for sname, arr in slots.items():
                put(f"opt.{oname}.{pname}.{sname}", arr)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "epoch": state.epoch,
        "step": state.step,
        "seed": state.cfg.seed,
        "update_order": UPDATE_ORDER,
        "config": state.cfg.to_dict(),
        "optimizers": optimizers,
        "tensors": tensors,
    }
    (tmp / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    if directory.exists():
        shutil.rmtree(directory)
    os.replace(tmp, directory)
    return directory


def load_checkpoint(directory: str | Path, cfg: RunConfig | None = None) -> TrainState:
    """Rebuild a TrainState; ``cfg`` replaces the stored config (e.g. new run paths)."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"{directory}: not a checkpoint (manifest.json missing)") from None
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{directory}: unsupported checkpoint format {manifest.get('format')!r}")
    cfg = cfg or RunConfig.from_dict(manifest["config"])
    state = init_state(cfg)
    arrays = {}
    for entry in manifest["tensors"]:
        arr = read_vten(directory / entry["file"])
        arrays[entry["name"]] = arr.reshape(entry["shape"])
    for mname, model in state.models.items():
        prefix = mname + "."
        load_state_arrays(model, {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})
    for oname, meta in manifest["optimizers"].items():
        opt = state.optimizers[oname]
        opt.step = meta["step"]
        opt.beta1, opt.beta2, opt.momentum, opt.eps = meta["beta1"], meta["beta2"], meta["momentum"], meta["eps"]
        params = state.params(oname)
        for pname in meta["slots"]:
            names = ("m", "v") if opt.kind == "nadam" else ("velocity",)
            opt.slots[pname] = {
                s: arrays[f"opt.{oname}.{pname}.{s}"].astype(params[pname].dtype) for s in names
            }
    state.epoch = manifest["epoch"]
    state.step = manifest["step"]
    return state


def checkpoint_name(epoch: int) -> str:
    return f"epoch_{epoch:04d}"


# -- the loop -------------------------------------------------------------------------

def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


class MetricsWriter:
    def __init__(self, path: Path, keep_before_epoch: int | None = None):
        self.path = path
        path.parent.mkdir(parents=True, exist_ok=True)
        rows = []
        if keep_before_epoch is not None and path.exists():
            with path.open(newline="") as fh:
                rows = [r for r in csv.DictReader(fh) if int(r["epoch"]) < keep_before_epoch]
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, CSV_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)

    def write(self, phase: str, row: dict) -> None:
        with self.path.open("a", newline="") as fh:
            csv.writer(fh).writerow([phase if c == "phase" else _format(row.get(c, "")) for c in CSV_COLUMNS])


def read_metrics(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def train(cfg: RunConfig, synthetic: DatasetManifest, target: DatasetManifest,
          resume: str | Path | None = None,
          on_step: Callable[[dict], None] | None = None) -> TrainState:
    """Run ``cfg.epochs`` epochs (or continue a checkpoint up to that count).

    Writes per-step train rows and, after every epoch divisible by
    ``cfg.test_every``, one aggregated test row to the metrics CSV.
    Checkpoints land in ``cfg.checkpoints`` at the start, every
    ``cfg.checkpoint_every`` epochs and at the end.
    """
    if synthetic.size != target.size or tuple(synthetic.size) != cfg.generator.input_size:
        raise ValueError(
            f"dataset sizes {synthetic.size}/{target.size} do not match model input {cfg.generator.input_size}"
        )
    run_dir = Path(cfg.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    (run_dir / "run.json").write_text(json.dumps({"update_order": UPDATE_ORDER, "seed": cfg.seed,
                                                  "synthetic": str(synthetic.root), "target": str(target.root)},
                                                 indent=2) + "\n")

    if resume is not None:
        state = load_checkpoint(resume, cfg)
        writer = MetricsWriter(cfg.metrics, keep_before_epoch=state.epoch)
    else:
        state = init_state(cfg)
        writer = MetricsWriter(cfg.metrics)
        save_checkpoint(state, cfg.checkpoints / checkpoint_name(0))

    tr_s, te_s = split_indices(synthetic.count, cfg.seed, cfg.data.train_fraction)
    tr_t, te_t = split_indices(target.count, cfg.seed + 1, cfg.data.train_fraction)
    max_shift = cfg.data.shift_for(cfg.generator.input_size[1]) if cfg.data.augment else None

    while state.epoch < cfg.epochs:
        epoch = state.epoch
        rng = epoch_rng(cfg.seed, epoch)
        batches_s = iter_batches(synthetic, tr_s, cfg.batch_size, rng, max_shift=max_shift)
        batches_t = iter_batches(target, tr_t, cfg.batch_size, rng, max_shift=max_shift)
        for bs, bt in zip(batches_s, batches_t):
            row = train_step(state, bs, bt, rng)
            writer.write("train", row)
            if on_step:
                on_step(row)
        log.info("epoch %d done (step %d)", epoch, state.step)
        if epoch % cfg.test_every == 0 and len(te_s) and len(te_t):
            row = evaluate(state, synthetic, target, te_s, te_t, epoch)
            row.update(epoch=epoch, step=state.step, lr_g=lr_at(cfg.schedule_g, epoch),
                       lr_d=lr_at(cfg.schedule_d, epoch))
            writer.write("test", row)
        state.epoch += 1
        if state.epoch % cfg.checkpoint_every == 0 or state.epoch == cfg.epochs:
            save_checkpoint(state, cfg.checkpoints / checkpoint_name(state.epoch))
    return state


def translate(generator: Generator, samples: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Eval-mode batch inference; returns scaled samples in [0, 1]."""
    samples = np.asarray(samples, dtype=np.float32)
    expected = (generator.cfg.in_channels, *generator.cfg.input_size)
    if samples.ndim != 4 or samples.shape[1:] != expected:
        raise ValueError(f"translate expects (n, {expected[0]}, {expected[1]}, {expected[2]}), got {samples.shape}")
    out = []
    with no_grad():
        for start in range(0, len(samples), batch_size):
            out.append(generator(Tensor(samples[start:start + batch_size]), training=False).data)
    return np.concatenate(out) if out else np.zeros_like(samples)
