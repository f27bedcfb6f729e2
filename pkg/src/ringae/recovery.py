"""Joint recovery of a structured image set from corrupted measurements.

Three methods share one interface:

* tr-ae: a convolutional autoencoder whose codes are tied to a tensor-ring
  factorization by a three-term loss (code mismatch, encoder-path measurement
  fit, factorization-path measurement fit). Network parameters take Adam
  steps, cores take SGD steps, and the recovered images are decoded from the
  factorization path.
* csae: the same autoencoder trained on the measurement-fit term alone; no
  factorization.
* lstr: a tensor ring fitted directly to pixel space by SGD on the
  measurement loss; no network.

Training sees only an ObservedSet (measurements + operators + attribute
indices); ground truth never enters this module. All loops are deterministic
for a fixed seed: batch schedules, initialization draws and gradient
reductions happen in fixed order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autoencoder as ae
from . import measurement as meas
from . import tensor_ring as tr
from .dataset import ObservedSet
from .optimizers import SgdConfig, adam_step, init_adam, sgd_step

TR_AE = "tr-ae"
CSAE = "csae"
LSTR = "lstr"
METHODS = (TR_AE, CSAE, LSTR)


class RecoveryDiverged(RuntimeError):
    """Total loss became non-finite; carries the offending step and terms."""


@dataclass
class RecoveryConfig:
    method: str = TR_AE
    rank: int = 8
    iters: int = 300                 # gradient steps M
    lambda1: float = 1.0
    lambda2: float = 1.0
    adam_lr: float = 0.001
    sgd_lr: float = 0.1
    seed: int = 0
    batch_size: int = 20             # csae only; slice methods batch by core slice
    min_rel_improve: float = 1e-6    # early stop: no relative improvement ...
    patience: int = 200              # ... for this many consecutive steps

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")


@dataclass
class RecoveryResult:
    method: str
    images: list                     # recovered x_hat in flat sample order
    trace: list                      # (step, term1, term2, term3, total) per step
    seconds: float
    iterations: int
    observed: ObservedSet
    cores: tr.TRCores | None = None
    params: ae.AutoencoderParams | None = None


# ---------------------------------------------------------------------------
# batch schedules
# ---------------------------------------------------------------------------

class _SliceSchedule:
    """Round-robin over attribute modes; one random slice (all samples sharing
    that attribute value) per step, values drawn without replacement per sweep."""

    def __init__(self, dims, rng: np.random.Generator):
        multis = tr.all_multi_indices(dims)
        self.groups = [
            [[f for f, m in enumerate(multis) if m[k] == v] for v in range(dims[k])]
            for k in range(len(dims))
        ]
        self.queues = [[] for _ in dims]
        self.rng = rng
        self.mode = 0

    def next_batch(self) -> list:
        k = self.mode
        self.mode = (self.mode + 1) % len(self.queues)
        if not self.queues[k]:
            self.queues[k] = [int(v) for v in self.rng.permutation(len(self.groups[k]))]
        return self.groups[k][self.queues[k].pop(0)]


class _ShuffleSchedule:
    """Uniform batches without replacement within each epoch."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self.queue = []

    def next_batch(self) -> list:
        if len(self.queue) < self.batch_size:
            self.queue = [int(v) for v in self.rng.permutation(self.n)]
        batch, self.queue = self.queue[:self.batch_size], self.queue[self.batch_size:]
        return batch


# ---------------------------------------------------------------------------
# measurement-space helpers
# ---------------------------------------------------------------------------

def _fit_loss(ops, flat_ids, x: np.ndarray, y: np.ndarray) -> float:
    return sum(meas.residual(ops[i], x[b], y[b]) for b, i in enumerate(flat_ids))


def _fit_grad(ops, flat_ids, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.stack([meas.grad_through(ops[i], x[b], y[b])
                     for b, i in enumerate(flat_ids)])


def _stack_measurements(observed: ObservedSet) -> np.ndarray:
    return np.stack(observed.measurements)


# ---------------------------------------------------------------------------
# the three-term objective
# ---------------------------------------------------------------------------

def loss_tr_ae(params: ae.AutoencoderParams, cores: tr.TRCores,
               observed: ObservedSet, flat_ids,
               lambda1: float = 1.0, lambda2: float = 1.0):
    """Batch sums of the three loss terms.

    Returns (total, term1, term2, term3) where total = term1 +
    lambda1 * term2 + lambda2 * term3: code mismatch, encoder-path fit and
    factorization-path fit.
    """
    multis = observed.multi_indices()
    y = np.stack([observed.measurements[i] for i in flat_ids])
    z_enc, _ = ae.encode_batch(params, y)
    z_fac = tr.latent_batch(cores, [multis[i] for i in flat_ids])
    x_all, _ = ae.decode_batch(params, np.concatenate([z_enc, z_fac]),
                               observed.height, observed.width)
    b = len(flat_ids)
    diff = z_enc - z_fac
    term1 = float(np.sum(diff * diff))
    term2 = _fit_loss(observed.ops, flat_ids, x_all[:b], y)
    term3 = _fit_loss(observed.ops, flat_ids, x_all[b:], y)
    return term1 + lambda1 * term2 + lambda2 * term3, term1, term2, term3


def _tr_ae_step(params, cores, observed, multis, y_all, flat_ids, weights):
    """Loss terms and averaged gradients for one slice batch.

    weights = (w1, lambda1, lambda2) scales each term's gradient upstream;
    w1 exists so tests can isolate single terms (training always uses 1).
    """
    w1, l1, l2 = weights
    b = len(flat_ids)
    y = y_all[flat_ids]
    idxs = [multis[i] for i in flat_ids]
    z_enc, enc_tape = ae.encode_batch(params, y)
    z_fac = tr.latent_batch(cores, idxs)
    x_all, dec_tape = ae.decode_batch(params, np.concatenate([z_enc, z_fac]),
                                      observed.height, observed.width)
    x_enc, x_fac = x_all[:b], x_all[b:]
    diff = z_enc - z_fac
    term1 = float(np.sum(diff * diff))
    term2 = _fit_loss(observed.ops, flat_ids, x_enc, y)
    term3 = _fit_loss(observed.ops, flat_ids, x_fac, y)
    total = w1 * term1 + l1 * term2 + l2 * term3

    g_x = np.concatenate([l1 * _fit_grad(observed.ops, flat_ids, x_enc, y),
                          l2 * _fit_grad(observed.ops, flat_ids, x_fac, y)])
    dec_grads, g_z = ae.decode_backward(params, dec_tape, g_x)
    g_z_enc = g_z[:b] + w1 * 2.0 * diff
    g_z_fac = g_z[b:] - w1 * 2.0 * diff
    enc_grads, _ = ae.encode_backward(params, enc_tape, g_z_enc)
    core_grads = tr.grad_cores(cores, idxs, g_z_fac)

    net_grads = [g / b for g in ae.grads_to_arrays(enc_grads, dec_grads)]
    core_grads = [g / b for g in core_grads]
    return (total, term1, term2, term3), net_grads, core_grads


def _check_finite(step: int, terms) -> None:
    if not np.isfinite(terms[0]):
        raise RecoveryDiverged(
            f"loss diverged at step {step}: total={terms[0]}, "
            f"terms={terms[1:]} (try a smaller learning rate)")


class _EarlyStop:
    def __init__(self, min_rel_improve: float, patience: int):
        self.min_rel = min_rel_improve
        self.patience = patience
        self.best = np.inf
        self.stale = 0

    def update(self, total: float) -> bool:
        if total < self.best * (1.0 - self.min_rel):
            self.best = total
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


# ---------------------------------------------------------------------------
# trainers
# ---------------------------------------------------------------------------

def _decode_all(params, cores, observed, chunk: int = 32) -> list:
    multis = observed.multi_indices()
    out = []
    for lo in range(0, len(multis), chunk):
        z = tr.latent_batch(cores, multis[lo:lo + chunk])
        x, _ = ae.decode_batch(params, z, observed.height, observed.width)
        out.extend(x)
    return out


def train_tr_ae(observed: ObservedSet, cfg: RecoveryConfig) -> RecoveryResult:
    """Joint descent on codes-vs-factorization mismatch plus both measurement
    fits; recovered images come from the factorization path."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    d = ae.ENCODER_CHANNELS[-1] * (observed.height // 16) * (observed.width // 16)
    cores = tr.init_cores(observed.attribute_dims, d, cfg.rank, rng)
    params = ae.init_autoencoder(observed.channels, rng)
    adam = init_adam(ae.param_arrays(params), cfg.adam_lr)
    sgd = SgdConfig(cfg.sgd_lr)
    schedule = _SliceSchedule(observed.attribute_dims, rng)
    multis = observed.multi_indices()
    y_all = _stack_measurements(observed)
    stopper = _EarlyStop(cfg.min_rel_improve, cfg.patience)
    weights = (1.0, cfg.lambda1, cfg.lambda2)
    trace = []
    for step in range(1, cfg.iters + 1):
        flat_ids = schedule.next_batch()
        terms, net_grads, core_grads = _tr_ae_step(
            params, cores, observed, multis, y_all, flat_ids, weights)
        _check_finite(step, terms)
        trace.append((step, terms[1], terms[2], terms[3], terms[0]))
        adam_step(adam, ae.param_arrays(params), net_grads)
        sgd_step(sgd, cores.cores, core_grads)
        if stopper.update(terms[0]):
            break
    images = _decode_all(params, cores, observed)
    return RecoveryResult(TR_AE, images, trace, time.perf_counter() - t0,
                          len(trace), observed, cores=cores, params=params)


def _csae_step(params, observed, y_all, flat_ids):
    b = len(flat_ids)
    y = y_all[flat_ids]
    z, enc_tape = ae.encode_batch(params, y)
    x, dec_tape = ae.decode_batch(params, z, observed.height, observed.width)
    loss = _fit_loss(observed.ops, flat_ids, x, y)
    g_x = _fit_grad(observed.ops, flat_ids, x, y)
    dec_grads, g_z = ae.decode_backward(params, dec_tape, g_x)
    enc_grads, _ = ae.encode_backward(params, enc_tape, g_z)
    return loss, [g / b for g in ae.grads_to_arrays(enc_grads, dec_grads)]


def train_csae(observed: ObservedSet, cfg: RecoveryConfig) -> RecoveryResult:
    """Plain autoencoder trained on the measurement fit alone."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    params = ae.init_autoencoder(observed.channels, rng)
    adam = init_adam(ae.param_arrays(params), cfg.adam_lr)
    schedule = _ShuffleSchedule(observed.num_samples, cfg.batch_size, rng)
    y_all = _stack_measurements(observed)
    stopper = _EarlyStop(cfg.min_rel_improve, cfg.patience)
    trace = []
    for step in range(1, cfg.iters + 1):
        flat_ids = schedule.next_batch()
        loss, net_grads = _csae_step(params, observed, y_all, flat_ids)
        _check_finite(step, (loss,))
        trace.append((step, 0.0, loss, 0.0, loss))
        adam_step(adam, ae.param_arrays(params), net_grads)
        if stopper.update(loss):
            break
    images = []
    for lo in range(0, observed.num_samples, 32):
        z, _ = ae.encode_batch(params, y_all[lo:lo + 32])
        x, _ = ae.decode_batch(params, z, observed.height, observed.width)
        images.extend(x)
    return RecoveryResult(CSAE, images, trace, time.perf_counter() - t0,
                          len(trace), observed, params=params)


def train_lstr(observed: ObservedSet, cfg: RecoveryConfig) -> RecoveryResult:
    """Tensor ring over (attributes..., pixels) fitted by SGD on the
    measurement loss; recovered images are core contractions clamped to [0,1]."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    shape = (observed.channels, observed.height, observed.width)
    d_pix = int(np.prod(shape))
    cores = tr.init_cores(observed.attribute_dims, d_pix, cfg.rank, rng)
    sgd = SgdConfig(cfg.sgd_lr)
    schedule = _SliceSchedule(observed.attribute_dims, rng)
    multis = observed.multi_indices()
    y_all = _stack_measurements(observed)
    stopper = _EarlyStop(cfg.min_rel_improve, cfg.patience)
    trace = []
    for step in range(1, cfg.iters + 1):
        flat_ids = schedule.next_batch()
        b = len(flat_ids)
        idxs = [multis[i] for i in flat_ids]
        x = tr.latent_batch(cores, idxs).reshape(b, *shape)
        y = y_all[flat_ids]
        loss = _fit_loss(observed.ops, flat_ids, x, y)
        _check_finite(step, (loss,))
        trace.append((step, 0.0, loss, 0.0, loss))
        g = _fit_grad(observed.ops, flat_ids, x, y).reshape(b, d_pix)
        core_grads = [gc / b for gc in tr.grad_cores(cores, idxs, g)]
        sgd_step(sgd, cores.cores, core_grads)
        if stopper.update(loss):
            break
    images = [np.clip(tr.latent_code(cores, m).reshape(shape), 0.0, 1.0)
              for m in multis]
    return RecoveryResult(LSTR, images, trace, time.perf_counter() - t0,
                          len(trace), observed, cores=cores)


_TRAINERS = {TR_AE: train_tr_ae, CSAE: train_csae, LSTR: train_lstr}


def train(observed: ObservedSet, cfg: RecoveryConfig) -> RecoveryResult:
    return _TRAINERS[cfg.method](observed, cfg)


def reconstruct(result: RecoveryResult, idx) -> np.ndarray:
    """Recovered image at one multi-index, recomputed from the trained model."""
    observed = result.observed
    if result.method == TR_AE:
        z = tr.latent_code(result.cores, idx)
        return ae.decode(result.params, z, observed.height, observed.width)
    if result.method == CSAE:
        flat = tr.flat_index(observed.attribute_dims, idx)
        z = ae.encode(result.params, observed.measurements[flat])
        return ae.decode(result.params, z, observed.height, observed.width)
    if result.method == LSTR:
        shape = (observed.channels, observed.height, observed.width)
        return np.clip(tr.latent_code(result.cores, idx).reshape(shape), 0.0, 1.0)
    raise ValueError(f"unknown method {result.method!r}")


def write_loss_trace(path, trace) -> None:
    """CSV with columns step,term1,term2,term3,total."""
    with open(path, "w") as fh:
        fh.write("step,term1,term2,term3,total\n")
        for step, t1, t2, t3, total in trace:
            fh.write(f"{step},{t1:.17g},{t2:.17g},{t3:.17g},{total:.17g}\n")
