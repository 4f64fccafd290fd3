"""Training loop: sample targets from an HMM, roll the network out with
Gaussian inputs and Gumbel draws, compare flattened soft outputs to flattened
one-hot targets with the debiased Sinkhorn divergence, backpropagate through
time, clip, and apply Adam.

Everything is deterministic given the config seed: the target dataset is
sampled once, per-epoch shuffles and noise draws come from streams derived
from (seed, purpose, epoch, batch), and gradient reduction order is fixed.
"""

import base64
import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import hmm as hmm_mod
from . import ot
from .errors import ConfigDriftError, ConfigError, FormatError, NumericError
from .numerics import AdamState, RngStream, adam_step
from .rnn import RnnParams, bptt_many, clip_grad_norm, init_params, rollout_many

__all__ = [
    "TrainConfig",
    "Checkpoint",
    "LossLog",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "config_digest",
    "canonical_json",
]

# stream-purpose tags (children of the root seed)
_S_DATA, _S_INIT, _S_SHUFFLE, _S_INPUT, _S_GUMBEL, _S_VAL_INPUT, _S_VAL_GUMBEL = range(7)

_CKPT_MAGIC = "rnnmimic-checkpoint-v1"
_BLOCK_ORDER = ("w_hh", "w_ih", "a", "m.w_hh", "m.w_ih", "m.a", "v.w_hh", "v.w_ih", "v.a")


def canonical_json(doc) -> str:
    """Stable serialization: sorted keys, compact separators."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def config_digest(doc) -> str:
    """sha256 over the canonical JSON of a config document."""
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()


def _resolve_hmm(descriptor):
    """Build an HmmSpec from a config descriptor (or pass one through)."""
    if isinstance(descriptor, hmm_mod.HmmSpec):
        return descriptor
    if not isinstance(descriptor, dict):
        raise ConfigError(f"hmm descriptor must be a dict, got {type(descriptor)}")
    kind = descriptor.get("kind")
    if kind == "linear_chain":
        return hmm_mod.build_linear_chain(
            M=int(descriptor["M"]),
            rho=float(descriptor.get("rho", 0.05)),
            eps=float(descriptor.get("eps", 0.01)),
        )
    if kind == "preset":
        return hmm_mod.build_preset(descriptor["name"])
    if kind == "explicit":
        return hmm_mod.HmmSpec(
            T=np.array(descriptor["T"]),
            E=np.array(descriptor["E"]),
            pi0=np.array(descriptor["pi0"]),
        )
    raise ConfigError(f"unknown hmm descriptor kind {kind!r}")


@dataclass
class TrainConfig:
    """Hyperparameters of one training run.

    ``hmm`` is a descriptor dict (see ``_resolve_hmm``) or an HmmSpec; the
    resolved matrices enter the config digest so a digest pins the exact
    target chain.
    """

    H: int
    d: int
    hmm: object
    seq_len: int
    n_sequences: int
    batch_size: int
    lr: float = 0.001
    clip_norm: float = 0.9
    epochs: int = 300
    eps_sinkhorn: float = 1.0
    tau: float = 1.0
    sigma_input: float = 1.0
    seed: int = 0
    checkpoint_every: int = 10
    val_fraction: float = 0.1
    sinkhorn_max_iters: int = 300
    sinkhorn_tol: float = 1e-4

    def __post_init__(self):
        self.spec = _resolve_hmm(self.hmm)
        positive = {
            "H": self.H,
            "d": self.d,
            "seq_len": self.seq_len,
            "n_sequences": self.n_sequences,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "clip_norm": self.clip_norm,
            "eps_sinkhorn": self.eps_sinkhorn,
            "tau": self.tau,
            "sigma_input": self.sigma_input,
            "checkpoint_every": self.checkpoint_every,
            "sinkhorn_max_iters": self.sinkhorn_max_iters,
            "sinkhorn_tol": self.sinkhorn_tol,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie strictly inside (0, 1)")
        if self.batch_size > self.n_sequences:
            raise ConfigError("batch_size must not exceed n_sequences")
        n_val = int(round(self.n_sequences * self.val_fraction))
        n_train = self.n_sequences - n_val
        if self.batch_size > n_train:
            raise ConfigError(
                f"batch_size {self.batch_size} exceeds the training split {n_train}"
            )

    def to_dict(self):
        return {
            "H": self.H,
            "d": self.d,
            "hmm": json.loads(self.spec.to_json()),
            "seq_len": self.seq_len,
            "n_sequences": self.n_sequences,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "clip_norm": self.clip_norm,
            "epochs": self.epochs,
            "eps_sinkhorn": self.eps_sinkhorn,
            "tau": self.tau,
            "sigma_input": self.sigma_input,
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
            "val_fraction": self.val_fraction,
            "sinkhorn_max_iters": self.sinkhorn_max_iters,
            "sinkhorn_tol": self.sinkhorn_tol,
        }

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        hmm_doc = doc.pop("hmm")
        if isinstance(hmm_doc, dict) and "kind" not in hmm_doc:
            hmm_doc = {"kind": "explicit", **hmm_doc}
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(hmm=hmm_doc, **doc)

    def digest(self):
        return config_digest(self.to_dict())


@dataclass
class Checkpoint:
    """Trainable state at one epoch boundary, serializable bit-exactly."""

    params: RnnParams
    adam: AdamState
    epoch: int
    digest: str
    config: dict
    rng_cursor: dict = field(default_factory=dict)


@dataclass
class LossLog:
    """One row per completed epoch; ``seconds`` is wall time (not part of
    the determinism contract)."""

    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    sinkhorn_flags: int = 0

    def append(self, epoch, train, val, gnorm, secs):
        self.epochs.append(int(epoch))
        self.train_loss.append(float(train))
        self.val_loss.append(float(val))
        self.grad_norm.append(float(gnorm))
        self.seconds.append(float(secs))

    def __len__(self):
        return len(self.epochs)

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,grad_norm,seconds"]
        for i in range(len(self.epochs)):
            lines.append(
                f"{self.epochs[i]},{self.train_loss[i]!r},{self.val_loss[i]!r},"
                f"{self.grad_norm[i]!r},{self.seconds[i]!r}"
            )
        return "\n".join(lines) + "\n"

    def deterministic_rows(self):
        """All columns except wall time, for reproducibility comparisons."""
        return list(zip(self.epochs, self.train_loss, self.val_loss, self.grad_norm))


def _targets(cfg):
    """Sample the fixed target dataset and split it train/validation."""
    stream = RngStream(cfg.seed, 0).child(_S_DATA)
    seqs = hmm_mod.sample_many(cfg.spec, cfg.seq_len, cfg.n_sequences, stream)
    flat = np.stack([s.one_hot().reshape(-1) for s in seqs])
    n_val = int(round(cfg.n_sequences * cfg.val_fraction))
    split_stream = RngStream(cfg.seed, 0).child(_S_SHUFFLE).child(0)
    perm = np.argsort(split_stream.uniform(cfg.n_sequences), kind="stable")
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]
    return flat, train_idx, val_idx


def _batch_loss_grad(cfg, params, x, g, targets_flat):
    """Forward + Sinkhorn + BPTT for one batch; returns loss, grads, flag."""
    b, t_len = x.shape[0], x.shape[1]
    h0 = np.zeros((b, cfg.H))
    z, h, _, soft = rollout_many(params, x, g, tau=cfg.tau, h0=h0)
    value, grad_x, info = ot.divergence_with_gradient(
        soft.reshape(b, t_len * 3),
        targets_flat,
        cfg.eps_sinkhorn,
        max_iters=cfg.sinkhorn_max_iters,
        tol=cfg.sinkhorn_tol,
    )
    flagged = not (info["xy"].converged and info["xx"].converged and info["yy"].converged)
    dl_ds = grad_x.reshape(b, t_len, 3)
    grads = bptt_many(params, x, h0, z, h, soft, dl_ds, cfg.tau)
    return value, grads, flagged


def _val_loss(cfg, params, targets_flat, val_idx, epoch):
    if val_idx.size == 0:
        return float("nan")
    b = val_idx.size
    x = RngStream(cfg.seed, 0).child(_S_VAL_INPUT).child(epoch).gaussian(
        (b, cfg.seq_len, cfg.d), sigma=cfg.sigma_input
    )
    g = RngStream(cfg.seed, 0).child(_S_VAL_GUMBEL).child(epoch).gumbel((b, cfg.seq_len, 3))
    _, _, _, soft = rollout_many(params, x, g, tau=cfg.tau, h0=np.zeros((b, cfg.H)))
    return ot.sinkhorn_divergence(
        soft.reshape(b, cfg.seq_len * 3),
        targets_flat[val_idx],
        cfg.eps_sinkhorn,
        max_iters=cfg.sinkhorn_max_iters,
        tol=cfg.sinkhorn_tol,
    )


def _checkpoint(cfg, params, adam, epoch):
    return Checkpoint(
        params=RnnParams(
            w_hh=params.w_hh.copy(), w_ih=params.w_ih.copy(), a=params.a.copy()
        ),
        adam=AdamState(
            lr=adam.lr,
            beta1=adam.beta1,
            beta2=adam.beta2,
            eps=adam.eps,
            step=adam.step,
            m={k: v.copy() for k, v in adam.m.items()},
            v={k: v.copy() for k, v in adam.v.items()},
        ),
        epoch=epoch,
        digest=cfg.digest(),
        config=cfg.to_dict(),
        rng_cursor={"epochs_consumed": epoch},
    )


def train(cfg, on_epoch=None):
    """Run the configured training; returns (checkpoints, loss log).

    Checkpoints are written at epoch 0, every ``checkpoint_every`` epochs,
    and at the final epoch.  ``on_epoch(epoch, log)`` is called after every
    epoch when provided.  Raises NumericError (carrying a diagnostic
    checkpoint in ``.checkpoint``) if the loss goes non-finite.
    """
    targets_flat, train_idx, val_idx = _targets(cfg)
    params = init_params(cfg.H, cfg.d, RngStream(cfg.seed, 0).child(_S_INIT))
    adam = AdamState.init(params.blocks(), lr=cfg.lr)
    log = LossLog()
    checkpoints = [_checkpoint(cfg, params, adam, 0)]
    n_batches = train_idx.size // cfg.batch_size
    for epoch in range(1, cfg.epochs + 1):
        tic = time.perf_counter()
        shuffle = RngStream(cfg.seed, 0).child(_S_SHUFFLE).child(epoch)
        order = train_idx[np.argsort(shuffle.uniform(train_idx.size), kind="stable")]
        epoch_losses = []
        epoch_norms = []
        for b in range(n_batches):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            x = RngStream(cfg.seed, 0).child(_S_INPUT).child(epoch).child(b).gaussian(
                (idx.size, cfg.seq_len, cfg.d), sigma=cfg.sigma_input
            )
            g = RngStream(cfg.seed, 0).child(_S_GUMBEL).child(epoch).child(b).gumbel(
                (idx.size, cfg.seq_len, 3)
            )
            loss, grads, flagged = _batch_loss_grad(cfg, params, x, g, targets_flat[idx])
            if flagged:
                log.sinkhorn_flags += 1
            if not np.isfinite(loss):
                err = NumericError(f"non-finite loss {loss!r} at epoch {epoch}, batch {b}")
                err.checkpoint = _checkpoint(cfg, params, adam, epoch - 1)
                raise err
            epoch_losses.append(loss)
            epoch_norms.append(grads.norm())
            grads = clip_grad_norm(grads, cfg.clip_norm)
            new_blocks, adam = adam_step(params.blocks(), grads.blocks(), adam)
            params = RnnParams.from_blocks(new_blocks)
        val = _val_loss(cfg, params, targets_flat, val_idx, epoch)
        if not np.isfinite(val):
            err = NumericError(f"non-finite validation loss at epoch {epoch}")
            err.checkpoint = _checkpoint(cfg, params, adam, epoch)
            raise err
        log.append(
            epoch,
            float(np.mean(epoch_losses)) if epoch_losses else float("nan"),
            val,
            float(np.mean(epoch_norms)) if epoch_norms else 0.0,
            time.perf_counter() - tic,
        )
        if epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs:
            checkpoints.append(_checkpoint(cfg, params, adam, epoch))
        if on_epoch is not None:
            on_epoch(epoch, log)
    return checkpoints, log


def save_checkpoint(path, ckpt):
    """Write a checkpoint: canonical JSON header line + base64 float64 block."""
    header = {
        "format": _CKPT_MAGIC,
        "H": ckpt.params.hidden_size,
        "d": ckpt.params.input_size,
        "epoch": ckpt.epoch,
        "digest": ckpt.digest,
        "config": ckpt.config,
        "adam": {
            "lr": ckpt.adam.lr,
            "beta1": ckpt.adam.beta1,
            "beta2": ckpt.adam.beta2,
            "eps": ckpt.adam.eps,
            "step": ckpt.adam.step,
        },
        "rng_cursor": ckpt.rng_cursor,
        "blocks": list(_BLOCK_ORDER),
    }
    arrays = [
        ckpt.params.w_hh,
        ckpt.params.w_ih,
        ckpt.params.a,
        ckpt.adam.m["w_hh"],
        ckpt.adam.m["w_ih"],
        ckpt.adam.m["a"],
        ckpt.adam.v["w_hh"],
        ckpt.adam.v["w_ih"],
        ckpt.adam.v["a"],
    ]
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    text = canonical_json(header) + "\n" + base64.b64encode(payload).decode() + "\n"
    with open(path, "w") as fh:
        fh.write(text)


def load_checkpoint(path):
    """Read a checkpoint; verifies the embedded config digest."""
    with open(path) as fh:
        text = fh.read()
    try:
        header_line, b64_line = text.strip("\n").split("\n")
        header = json.loads(header_line)
    except ValueError as exc:
        raise FormatError(f"malformed checkpoint file {path}: {exc}") from exc
    if header.get("format") != _CKPT_MAGIC:
        raise FormatError(f"{path} is not a {_CKPT_MAGIC} file")
    if config_digest(header["config"]) != header["digest"]:
        raise ConfigDriftError(
            f"checkpoint digest {header['digest'][:12]}... does not match its config"
        )
    try:
        payload = base64.b64decode(b64_line.encode(), validate=True)
    except Exception as exc:
        raise FormatError(f"corrupt checkpoint payload in {path}: {exc}") from exc
    h, d = int(header["H"]), int(header["d"])
    shapes = [(h, h), (h, d), (3, h)] * 3
    need = sum(r * c for r, c in shapes) * 8
    if len(payload) != need:
        raise FormatError(
            f"checkpoint payload has {len(payload)} bytes, expected {need}"
        )
    arrays = []
    off = 0
    for rows, cols in shapes:
        nbytes = rows * cols * 8
        arrays.append(
            np.frombuffer(payload[off : off + nbytes], dtype="<f8").reshape(rows, cols).copy()
        )
        off += nbytes
    params = RnnParams(w_hh=arrays[0], w_ih=arrays[1], a=arrays[2])
    adam_doc = header["adam"]
    adam = AdamState(
        lr=adam_doc["lr"],
        beta1=adam_doc["beta1"],
        beta2=adam_doc["beta2"],
        eps=adam_doc["eps"],
        step=adam_doc["step"],
        m={"w_hh": arrays[3], "w_ih": arrays[4], "a": arrays[5]},
        v={"w_hh": arrays[6], "w_ih": arrays[7], "a": arrays[8]},
    )
    return Checkpoint(
        params=params,
        adam=adam,
        epoch=int(header["epoch"]),
        digest=header["digest"],
        config=header["config"],
        rng_cursor=header.get("rng_cursor", {}),
    )
