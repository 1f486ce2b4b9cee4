"""End-to-end segmentation loop, toy training, evaluation and ablations.

For every query frame and every object: encode the query; read the global
memory (frames 0..t-2) with the affinity matcher; align the local memory
(frame t-1) with FAM; refine both through the PTM; decode to a logit map.
Per-object logits are soft-aggregated, and the frame is written back to
memory with its predicted mask.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import codec, fam, ptm
from .affinity import memory_read
from .memory import MemoryBank
from .metrics import EvalReport, score_sequence
from .synth import SequenceSpec, generate
from .tensor import ParamSet, Tensor, backward, no_grad

log = logging.getLogger(__name__)


class ProtocolError(RuntimeError):
    """The segmentation loop was driven out of order."""


class TrainingDiverged(RuntimeError):
    pass


# config key -> (field name, cast)
_CONFIG_KEYS = {
    "model.stride": ("stride", int),
    "model.key_dim": ("key_dim", int),
    "model.value_dim": ("value_dim", int),
    "model.enc_width": ("enc_width", int),
    "model.dec_width": ("dec_width", int),
    "frame.height": ("height", int),
    "frame.width": ("width", int),
    "ptm.rounds": ("rounds", int),
    "ptm.enabled": ("use_ptm", bool),
    "ptm.gate_with_initial": ("gate_with_initial", bool),
    "fam.enabled": ("use_fam", bool),
    "fam.grid_factor": ("grid_factor", int),
    "memory.capacity": ("capacity", int),
    "memory.every": ("mem_every", int),
    "dtype": ("dtype", str),
    "seed": ("seed", int),
    "train.lr": ("lr", float),
    "train.momentum": ("momentum", float),
    "train.iterations": ("iterations", int),
    "train.clip": ("clip", float),
}


@dataclass
class RunConfig:
    stride: int = 4
    key_dim: int = 64
    value_dim: int = 256
    enc_width: int = 32
    dec_width: int = 32
    height: int = 64
    width: int = 64
    rounds: int = 3
    use_ptm: bool = True
    gate_with_initial: bool = False
    use_fam: bool = True
    grid_factor: int = 1
    capacity: int = 8
    mem_every: int = 1
    dtype: str = "float32"
    seed: int = 0
    lr: float = 0.05
    momentum: float = 0.9
    iterations: int = 200
    clip: float = 1.0  # gradient-norm clip; 0 disables

    @classmethod
    def tiny(cls, **overrides) -> "RunConfig":
        base = dict(key_dim=8, value_dim=32, enc_width=16, dec_width=16)
        base.update(overrides)
        return cls(**base)

    @property
    def feature_hw(self) -> tuple:
        return self.height // self.stride, self.width // self.stride

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_kv(cls, kv: dict, ignore_prefixes=("spec.", "ablate.")) -> "RunConfig":
        if kv.get("profile") == "tiny":
            cfg = cls.tiny()
        else:
            cfg = cls()
        changes = {}
        for k, v in kv.items():
            if k == "profile" or k.startswith(tuple(ignore_prefixes)):
                continue
            if k not in _CONFIG_KEYS:
                raise ValueError(f"unknown config key {k!r}")
            name, cast = _CONFIG_KEYS[k]
            changes[name] = v if cast is bool and isinstance(v, bool) else cast(v)
        return cfg.replace(**changes)

    def to_kv(self) -> dict:
        return {k: getattr(self, name) for k, (name, _) in _CONFIG_KEYS.items()}


def init_params(cfg: RunConfig) -> ParamSet:
    """Fresh parameters: Kaiming-uniform weights, zero biases, zero offset heads."""
    rng = np.random.default_rng(cfg.seed)
    p = ParamSet(np.float64)
    ck, cv = cfg.key_dim, cfg.value_dim
    codec.init_encoder(p, "qenc", rng, 3, cfg.enc_width, ck, cv, cfg.stride)
    codec.init_encoder(p, "menc", rng, 4, cfg.enc_width, ck, cv, cfg.stride)
    fam.init_fam(p, "fam", rng, ck, cv)
    h, w = cfg.feature_hw
    ptm.init_ptm(p, "ptm", rng, cv, h * w, max(cfg.rounds, 1))
    codec.init_decoder(p, "dec", rng, cv, cfg.enc_width, cfg.dec_width, cfg.stride)
    return p.astype(cfg.np_dtype)


@dataclass
class SegmentationState:
    cfg: RunConfig
    params: ParamSet
    banks: list = field(default_factory=list)
    n_objects: int = 0
    t: int = 0
    mask0: np.ndarray | None = None

    @property
    def registered(self) -> bool:
        return self.t > 0


def _as_frame(frame, dtype) -> Tensor:
    if isinstance(frame, Tensor):
        return frame
    return Tensor(np.asarray(frame, dtype=dtype))


def register_first(state: SegmentationState, frame, labels: np.ndarray, n_objects: int | None = None) -> None:
    """Store frame 0 with its given label map in every object's memory."""
    cfg = state.cfg
    labels = np.asarray(labels)
    if n_objects is None:
        n_objects = int(labels.max())
    if n_objects < 1:
        raise ValueError("frame 0 annotation contains no object")
    frame = _as_frame(frame, cfg.np_dtype)
    menc = state.params.subset("menc")
    state.banks = [MemoryBank(cfg.capacity) for _ in range(n_objects)]
    for i, bank in enumerate(state.banks, start=1):
        mask = Tensor((labels == i).astype(cfg.np_dtype)[..., None])
        k, v = codec.encode_memory(frame, mask, menc, cfg.stride)
        bank.append(k, v, frame_id=0)
    state.n_objects = n_objects
    state.mask0 = labels.copy()
    state.t = 1


def object_logits(cfg: RunConfig, params: ParamSet, q: codec.QueryFeatures, bank: MemoryBank,
                  trace: dict | None = None) -> Tensor:
    """Logit map ``[H0, W0, 1]`` for one object given its memory bank."""
    H, W, _ = q.value.shape
    zeros = Tensor(np.zeros((H, W, cfg.value_dim), dtype=cfg.np_dtype))
    glob = bank.global_view()
    local = bank.local_view()
    if glob is not None:
        kg, vg = glob
        f_mem = memory_read(kg, vg, q.key)
    else:
        kg = vg = None
        f_mem = zeros
    if cfg.use_fam and local is not None:
        f_loc, _ = fam.run_fam(q.key, q.value, local[0], local[1], params.subset("fam"), cfg.grid_factor)
    else:
        f_loc = zeros
    # with no global block yet, the prototype is pooled from frame 0 alone
    proto_src = vg if vg is not None else local[1].reshape((1,) + local[1].shape)
    rounds = cfg.rounds if cfg.use_ptm else 0
    attn = [] if trace is not None else None
    f_pro = ptm.run_ptm(f_mem, f_loc, proto_src, params.subset("ptm"), rounds,
                        cfg.gate_with_initial, trace=attn)
    if trace is not None:
        trace.update(f_mem=f_mem, f_loc=f_loc, f_pro=f_pro, attention=attn)
    return codec.decode(f_pro, q.skip2, params.subset("dec"), cfg.stride)


def step(state: SegmentationState, frame) -> tuple[Tensor, np.ndarray]:
    """Segment the next frame and write it to memory.

    Returns the soft-aggregated log-probabilities ``[H0, W0, N+1]`` and the
    arg-max label map.
    """
    if not state.registered:
        raise ProtocolError("frame 0 must be registered with its mask before calling step")
    cfg, params = state.cfg, state.params
    frame = _as_frame(frame, cfg.np_dtype)
    q = codec.encode_query(frame, params.subset("qenc"), cfg.stride)
    logits = [object_logits(cfg, params, q, bank) for bank in state.banks]
    log_probs = codec.soft_aggregate(logits)
    labels = np.argmax(log_probs.data, axis=2)
    if state.t % cfg.mem_every == 0:
        probs = np.exp(log_probs.data)
        menc = params.subset("menc")
        for i, bank in enumerate(state.banks, start=1):
            # memory is written from the prediction, not from ground truth
            mask = Tensor(probs[..., i:i + 1])
            k, v = codec.encode_memory(frame, mask, menc, cfg.stride)
            bank.append(k, v, frame_id=state.t)
    state.t += 1
    return log_probs, labels


def new_state(cfg: RunConfig, params: ParamSet) -> SegmentationState:
    return SegmentationState(cfg, params)


def segment_sequence(cfg: RunConfig, params: ParamSet, frames: np.ndarray, labels0: np.ndarray,
                     n_objects: int | None = None) -> np.ndarray:
    """Inference over a whole sequence; frame 0's label map is echoed unchanged."""
    state = new_state(cfg, params)
    out = np.zeros((len(frames),) + labels0.shape, dtype=np.int64)
    out[0] = labels0
    with no_grad():
        register_first(state, frames[0], labels0, n_objects)
        for t in range(1, len(frames)):
            _, out[t] = step(state, frames[t])
    return out


def sequence_loss(cfg: RunConfig, params: ParamSet, frames: np.ndarray, labels: np.ndarray) -> Tensor:
    """Mean per-pixel cross-entropy over frames 1..T-1 with memory built on the fly."""
    state = new_state(cfg, params)
    register_first(state, frames[0], labels[0], int(labels.max()))
    total = None
    for t in range(1, len(frames)):
        log_probs, _ = step(state, frames[t])
        ce = codec.cross_entropy(log_probs, labels[t])
        total = ce if total is None else total + ce
    return total * (1.0 / (len(frames) - 1))


@dataclass
class TrainResult:
    params: ParamSet
    losses: list
    seconds: float


def train_toy(spec: SequenceSpec | list, cfg: RunConfig, params: ParamSet | None = None,
              callback=None) -> TrainResult:
    """SGD with momentum on the per-pixel cross-entropy of one or more sequences.

    Each iteration processes every sequence once. Deterministic for a fixed
    ``cfg.seed`` and spec.
    """
    specs = spec if isinstance(spec, (list, tuple)) else [spec]
    data = [generate(s) for s in specs]
    if params is None:
        params = init_params(cfg)
    else:
        params = params.copy()
    velocity = {k: np.zeros(v.shape, dtype=v.dtype) for k, v in params.items()}
    lr = params.dtype.type(cfg.lr)
    mu = params.dtype.type(cfg.momentum)
    losses = []
    t0 = time.perf_counter()
    for it in range(cfg.iterations):
        frames, labels = data[it % len(data)]
        try:
            loss = sequence_loss(cfg, params, frames, labels)
        except FloatingPointError as exc:
            raise TrainingDiverged(f"{exc} at iteration {it} (lr={cfg.lr})") from exc
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDiverged(f"loss became {value} at iteration {it} (lr={cfg.lr})")
        losses.append(value)
        grads = params.gradients(backward(loss))
        if cfg.clip > 0:
            norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
            if norm > cfg.clip:
                scale = params.dtype.type(cfg.clip / norm)
                grads = {k: g * scale for k, g in grads.items()}
        for name, g in grads.items():
            vel = velocity[name]
            vel *= mu
            vel += g
            params.set(name, params[name].data - lr * vel)
        if callback is not None:
            callback(it, value)
        if it % 50 == 0:
            log.info("iter %d loss %.5f", it, value)
    return TrainResult(params, losses, time.perf_counter() - t0)


def run_eval(specs, params: ParamSet, cfg: RunConfig, report_path: str | None = None,
             names: list | None = None) -> EvalReport:
    """Segment each sequence from its frame-0 mask and score frames 1..T-1."""
    specs = specs if isinstance(specs, (list, tuple)) else [specs]
    report = EvalReport()
    for i, spec in enumerate(specs):
        frames, labels = generate(spec)
        n_obj = len(spec.objects)
        pred = segment_sequence(cfg, params, frames, labels[0], n_obj)
        name = names[i] if names else f"seq{i:03d}_seed{spec.seed}"
        for obj, (j, f) in score_sequence(pred, labels, n_obj).items():
            report.add(name, obj, j, f)
    if report_path is not None:
        report.to_csv(report_path)
    return report


# toggle name -> config field changes
ABLATION_TOGGLES = {
    "fam": lambda on: {"use_fam": bool(on)},
    "ptm": lambda on: {"use_ptm": bool(on)},
    "rounds": lambda n: {"rounds": int(n)},
    "interval": lambda n: {"mem_every": int(n)},
}

DEFAULT_VARIANTS = [
    ("default", {}),
    ("no_fam", {"fam": False}),
    ("no_ptm", {"ptm": False}),
    ("no_fam_no_ptm", {"fam": False, "ptm": False}),
    ("rounds=1", {"rounds": 1}),
    ("rounds=2", {"rounds": 2}),
    ("rounds=4", {"rounds": 4}),
    ("interval=2", {"interval": 2}),
    ("interval=4", {"interval": 4}),
]


def apply_toggles(cfg: RunConfig, deltas: dict) -> RunConfig:
    changes = {}
    for key, value in deltas.items():
        if key not in ABLATION_TOGGLES:
            raise ValueError(f"unknown ablation toggle {key!r}; expected one of {sorted(ABLATION_TOGGLES)}")
        changes.update(ABLATION_TOGGLES[key](value))
    out = cfg.replace(**changes)
    if out.rounds < 1:
        raise ValueError("PTM rounds must be >= 1")
    if out.mem_every < 1:
        raise ValueError("memory interval must be >= 1")
    return out


@dataclass
class AblationRow:
    name: str
    cfg: RunConfig
    report: EvalReport
    final_loss: float
    fps: float


def ablate(cfg: RunConfig, specs, variants=None) -> list:
    """Train and evaluate each variant on the same sequences and seed."""
    specs = specs if isinstance(specs, (list, tuple)) else [specs]
    variants = DEFAULT_VARIANTS if variants is None else variants
    rows = []
    for name, deltas in variants:
        vcfg = apply_toggles(cfg, deltas)
        res = train_toy(list(specs), vcfg)
        t0 = time.perf_counter()
        report = run_eval(specs, res.params, vcfg)
        n_frames = sum(s.frames - 1 for s in specs)
        fps = n_frames / max(time.perf_counter() - t0, 1e-9)
        rows.append(AblationRow(name, vcfg, report, res.losses[-1] if res.losses else float("nan"), fps))
    return rows


def format_ablation(rows: list) -> str:
    lines = [f"{'variant':<16s} {'J':>7s} {'F':>7s} {'J&F':>7s} {'loss':>9s} {'FPS':>7s}"]
    for r in rows:
        lines.append(f"{r.name:<16s} {r.report.J:7.4f} {r.report.F:7.4f} {r.report.JF:7.4f} "
                     f"{r.final_loss:9.5f} {r.fps:7.1f}")
    return "\n".join(lines)
