"""End-to-end orchestration: config, the rolling-queue loop, persistence.

A run is: parallel warm-up of f clean frames, queue bootstrap, then one
emission per global step — denoise every slot one level (optionally with
cross-frame references and bank guidance), pop the head, blend and push a
fresh tail.  All randomness descends from the single run seed through
named sub-streams, so equal configs give byte-equal dumps.
"""

import copy
import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attention import collect_masked_kv
from .dump import write_dump
from .errors import ConfigurationError, NumericalDivergenceError
from .freq import coherent_tail_sample
from .guidance import (
    GuidanceConfig,
    apply_guidance,
    guidance_gradient,
    init_bank,
    update_bank,
)
from .metrics import compute_report, write_metrics_csv
from .queue import advance, enqueue_tail, init_queue, partition_windows
from .scene import (
    Blob,
    SceneSpec,
    ToyDenoiser,
    analytic_gaussian_epsilon,
    make_condition,
    render_frame,
)
from .schedule import FrameLatent, build_schedule, ddim_step

log = logging.getLogger(__name__)

DEFAULTS = {
    "seed": 0,
    "n_frames": 64,
    "T": 64,
    "f": 16,
    "denoiser": "toy",
    "run_id": "run",
    "out_dir": "runs",
    "schedule": {"beta_start": 1e-4, "beta_end": 0.02},
    "scene": {
        "c": 4,
        "h": 32,
        "w": 32,
        "background": 0.0,
        "seed": None,  # null -> run seed
        "subjects": [
            {
                "subject_id": 1,
                "radius": 6.0,
                "velocity": [0.5, 1.0],
                "position": [16.0, 16.0],
                "amplitude": 1.0,
            }
        ],
    },
    "condition": {"d": 32, "context_tokens": 4},
    "analytic": {"sigma_d": 0.5},
    "tail": {"enabled": True, "low_pass_threshold": 0.25},
    "sacfa": {"enabled": True, "frame_span": 16, "capture_sites": ["cross"]},
    "guidance": {
        "enabled": True,
        "gamma0": 0.05,
        "lambda": 0.98,
        "head_span": 16,
        "tail_span": 16,
        "bank_rows": 16,
    },
}

_SUBJECT_DEFAULTS = {
    "subject_id": None,  # required
    "radius": 4.0,
    "velocity": [0.0, 0.0],
    "position": [0.0, 0.0],
    "amplitude": 1.0,
}

_CAPTURE_SITES = {"cross"}


def _merge(defaults, override, path=""):
    """Deep-merge override into defaults, rejecting unknown keys by name."""
    out = copy.deepcopy(defaults)
    for key, val in override.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigurationError(f"unknown config key: {where}")
        base = defaults[key]
        if isinstance(base, dict) and isinstance(val, dict):
            out[key] = _merge(base, val, where)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _check_subject(entry, where):
    if not isinstance(entry, dict):
        raise ConfigurationError(f"{where} must be an object")
    for key in entry:
        if key not in _SUBJECT_DEFAULTS:
            raise ConfigurationError(f"unknown config key: {where}.{key}")
    if "subject_id" not in entry:
        raise ConfigurationError(f"{where}.subject_id is required")
    merged = dict(_SUBJECT_DEFAULTS, **entry)
    for vec in ("velocity", "position"):
        v = merged[vec]
        if not (isinstance(v, (list, tuple)) and len(v) == 2):
            raise ConfigurationError(f"{where}.{vec} must be a [y, x] pair")
    return merged


def _need(cond, message):
    if not cond:
        raise ConfigurationError(message)


@dataclass(frozen=True)
class RunConfig:
    """Validated, fully-resolved run parameters.

    raw holds the resolved JSON tree (the hashing and provenance source);
    the typed fields mirror it for code use.
    """

    raw: dict
    seed: int
    n_frames: int
    T: int
    f: int
    denoiser: str
    run_id: str
    out_dir: Path
    beta_start: float
    beta_end: float
    scene: SceneSpec
    subject_ids: tuple
    cond_d: int
    context_tokens: int
    sigma_d: float
    tail_enabled: bool
    tail_r: float
    sacfa_enabled: bool
    frame_span: int
    capture_sites: tuple
    guidance_enabled: bool
    guidance_cfg: GuidanceConfig
    lam: float
    bank_rows: int

    @property
    def config_hash(self) -> str:
        """Digest of the generation parameters.

        run_id and out_dir are provenance, not parameters: two runs that
        differ only in where they write produce identical frames, and their
        dumps stay byte-identical.
        """
        tree = {k: v for k, v in self.raw.items() if k not in ("run_id", "out_dir")}
        blob = json.dumps(tree, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def resolve_config(overrides: dict) -> RunConfig:
    """Merge user overrides into defaults and validate every field.

    Raises ConfigurationError naming the offending key.  Idempotent on an
    already-resolved tree.
    """
    raw = _merge(DEFAULTS, overrides)
    raw["scene"]["subjects"] = [
        _check_subject(s, f"scene.subjects[{i}]")
        for i, s in enumerate(raw["scene"]["subjects"])
    ]

    _need(isinstance(raw["T"], int) and raw["T"] >= 2, "T must be an int >= 2")
    _need(isinstance(raw["f"], int) and raw["f"] >= 1, "f must be an int >= 1")
    _need(raw["T"] % raw["f"] == 0, f"T={raw['T']} must be a multiple of f={raw['f']}")
    # the report needs a second difference, so three frames minimum
    _need(isinstance(raw["n_frames"], int) and raw["n_frames"] >= 3,
          "n_frames must be an int >= 3")
    _need(raw["denoiser"] in ("toy", "analytic"),
          f"denoiser must be 'toy' or 'analytic', got {raw['denoiser']!r}")
    _need(isinstance(raw["seed"], int), "seed must be an int")

    sc = raw["scene"]
    d = raw["condition"]["d"]
    _need(isinstance(d, int) and d > 0 and d % 2 == 0,
          "condition.d must be a positive even int")
    _need(raw["condition"]["context_tokens"] >= 0,
          "condition.context_tokens must be >= 0")
    _need(raw["analytic"]["sigma_d"] > 0, "analytic.sigma_d must be > 0")
    r = raw["tail"]["low_pass_threshold"]
    _need(0.0 <= r <= math.sqrt(2.0),
          "tail.low_pass_threshold must lie in [0, sqrt(2)]")
    _need(1 <= raw["sacfa"]["frame_span"] <= raw["T"],
          "sacfa.frame_span must lie in 1..T")
    sites = raw["sacfa"]["capture_sites"]
    _need(isinstance(sites, list) and sites and set(sites) <= _CAPTURE_SITES,
          f"sacfa.capture_sites must be a nonempty subset of {sorted(_CAPTURE_SITES)}")
    g = raw["guidance"]
    _need(g["gamma0"] >= 0, "guidance.gamma0 must be >= 0")
    _need(0.0 <= g["lambda"] <= 1.0, "guidance.lambda must lie in [0, 1]")
    _need(1 <= g["head_span"] <= raw["T"], "guidance.head_span must lie in 1..T")
    _need(1 <= g["tail_span"] <= raw["T"], "guidance.tail_span must lie in 1..T")
    _need(isinstance(g["bank_rows"], int) and g["bank_rows"] >= 1,
          "guidance.bank_rows must be an int >= 1")
    if raw["denoiser"] == "toy":
        _need(sc["h"] % 4 == 0 and sc["w"] % 4 == 0,
              "scene.h and scene.w must be multiples of 4 (toy patch size)")

    scene_seed = raw["seed"] if sc["seed"] is None else sc["seed"]
    scene = SceneSpec(
        c=sc["c"], h=sc["h"], w=sc["w"],
        subjects=tuple(
            Blob(
                subject_id=int(s["subject_id"]),
                radius=float(s["radius"]),
                velocity=tuple(float(x) for x in s["velocity"]),
                position=tuple(float(x) for x in s["position"]),
                amplitude=float(s["amplitude"]),
            )
            for s in sc["subjects"]
        ),
        background=float(sc["background"]),
        seed=int(scene_seed),
    )
    # exercises the schedule validators so bad betas fail at config time
    build_schedule(raw["T"], raw["schedule"]["beta_start"], raw["schedule"]["beta_end"])

    return RunConfig(
        raw=raw,
        seed=raw["seed"],
        n_frames=raw["n_frames"],
        T=raw["T"],
        f=raw["f"],
        denoiser=raw["denoiser"],
        run_id=str(raw["run_id"]),
        out_dir=Path(raw["out_dir"]),
        beta_start=float(raw["schedule"]["beta_start"]),
        beta_end=float(raw["schedule"]["beta_end"]),
        scene=scene,
        subject_ids=tuple(b.subject_id for b in scene.subjects),
        cond_d=d,
        context_tokens=int(raw["condition"]["context_tokens"]),
        sigma_d=float(raw["analytic"]["sigma_d"]),
        tail_enabled=bool(raw["tail"]["enabled"]),
        tail_r=float(r),
        sacfa_enabled=bool(raw["sacfa"]["enabled"]),
        frame_span=int(raw["sacfa"]["frame_span"]),
        capture_sites=tuple(sites),
        guidance_enabled=bool(g["enabled"]),
        guidance_cfg=GuidanceConfig(
            gamma0=float(g["gamma0"]),
            head_span=int(g["head_span"]),
            tail_span=int(g["tail_span"]),
        ),
        lam=float(g["lambda"]),
        bank_rows=int(g["bank_rows"]),
    )


def load_config(path) -> dict:
    """Read a JSON config file into a plain dict of overrides."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top-level JSON value must be an object")
    return data


# one generator per named purpose; adding a consumer never shifts another
# stream, so ablation rows share warm-up noise bit-for-bit
_STREAM_IDS = {
    "warmup_init": 1,
    "queue_init": 2,
    "tail_renoise": 3,
    "tail_band": 4,
    "gaussian_tail": 5,
}


def _stream(seed: int, name: str):
    return np.random.default_rng(
        np.random.SeedSequence([seed, 4242, _STREAM_IDS[name]])
    )


def _caps_nbytes(caps) -> int:
    total = 0
    for cap in caps:
        if cap is None:
            continue
        total += cap.q.tokens.nbytes + cap.k.tokens.nbytes + cap.v.tokens.nbytes
        total += sum(m.nbytes for m in cap.cross_maps)
        if cap.subject_mask is not None:
            total += cap.subject_mask.mask.nbytes
        if cap.masked_keys is not None:
            total += cap.masked_keys.nbytes
    return total


def generate(cfg: RunConfig, on_cycle=None):
    """Run the full loop; returns (VideoDump, MetricsReport).

    Writes <out_dir>/<run_id>.vdump and <run_id>_metrics.csv.  on_cycle,
    when given, is called after every queue cycle as
    on_cycle(step, queue, stats_dict) — test instrumentation for memory
    and invariant checks.
    """
    sched = build_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    scene = cfg.scene
    shape = (scene.c, scene.h, scene.w)
    T, f = cfg.T, cfg.f
    cond = make_condition(cfg.subject_ids, cfg.seed, cfg.cond_d, cfg.context_tokens)
    toy = cfg.denoiser == "toy"
    model = ToyDenoiser(scene.c, weights_seed=cfg.seed, d=cfg.cond_d) if toy else None

    def eps_for(datas, timesteps, global_idx, refs):
        if toy:
            return model.forward(datas, timesteps, cond, refs)
        eps = [
            analytic_gaussian_epsilon(
                z, t, render_frame(scene, gi)[0], cfg.sigma_d, sched
            )
            for z, t, gi in zip(datas, timesteps, global_idx)
        ]
        return eps, None

    # ---- warm-up: all f frames share each timestep (parallel denoising);
    # deliberately independent of tail/sacfa/guidance settings
    rng_init = _stream(cfg.seed, "warmup_init")
    zs = [rng_init.standard_normal(shape) for _ in range(f)]
    caps = None
    for t in range(T, 0, -1):
        eps, caps = eps_for(zs, [t] * f, list(range(f)), None)
        zs = [ddim_step(z, e, t, sched) for z, e in zip(zs, eps)]
    if not all(np.isfinite(z).all() for z in zs):
        raise NumericalDivergenceError("non-finite latent during warm-up", step=0)

    emitted = [z.copy() for z in zs[: min(f, cfg.n_frames)]]
    prev_caps = caps

    if cfg.n_frames > f:
        q = init_queue(zs, sched, _stream(cfg.seed, "queue_init"))
        rng_renoise = _stream(cfg.seed, "tail_renoise")
        rng_band = _stream(cfg.seed, "tail_band")
        rng_gauss = _stream(cfg.seed, "gaussian_tail")
        sacfa_on = cfg.sacfa_enabled and toy
        guidance_on = cfg.guidance_enabled and toy
        bank = None

        for step in range(cfg.n_frames - f):
            q.check()
            try:
                refs = None
                if sacfa_on and prev_caps is not None:
                    span = prev_caps[-cfg.frame_span:]
                    refs = collect_masked_kv(
                        [(c.k.tokens, c.v.tokens, c.subject_mask) for c in span]
                    )
                eps_all, caps_all = [], []
                for wdw in partition_windows(q):
                    datas = [s.data for s in wdw.latents]
                    gidx = [f - 1 + s.frame_index for s in wdw.latents]
                    eps, wcaps = eps_for(datas, list(wdw.timesteps), gidx, refs)
                    eps_all.extend(eps)
                    caps_all.extend(wcaps if wcaps is not None else [None] * len(eps))

                if guidance_on and bank is None:
                    bank = init_bank(caps_all[:f], cfg.bank_rows, cfg.lam)
                    if not bank.initialized:
                        guidance_on = False

                pre = [s.data for s in q.slots]
                if guidance_on:
                    for k in range(T - cfg.guidance_cfg.tail_span, T):
                        grad = guidance_gradient(
                            pre[k], caps_all[k].subject_mask, bank, model
                        )
                        pre[k] = apply_guidance(
                            q.slots[k], grad, k + 1, cfg.guidance_cfg, sched
                        ).data
                    bank = update_bank(bank, caps_all[:f]) if step > 0 else bank
                denoised = [ddim_step(pre[k], eps_all[k], k + 1, sched)
                            for k in range(T)]
                head, q_open = advance(q, denoised)
                emitted.append(head.data)
                second_last = q_open.slots[-1]
                if cfg.tail_enabled:
                    tail = coherent_tail_sample(
                        second_last, sched,
                        rng_renoise.standard_normal(shape),
                        rng_band.standard_normal(shape),
                        cfg.tail_r,
                    )
                else:
                    tail = FrameLatent(
                        data=rng_gauss.standard_normal(shape),
                        noise_level=T,
                        frame_index=second_last.frame_index + 1,
                    )
                q = enqueue_tail(q_open, tail)
            except ValueError as e:
                raise NumericalDivergenceError(
                    f"non-finite latent at cycle {step}: {e}", step=step
                ) from e

            if toy:
                prev_caps = caps_all
            if on_cycle is not None:
                on_cycle(step, q, {
                    "captures_nbytes": _caps_nbytes(caps_all),
                    "bank_nbytes": bank.k_ltm.nbytes if bank is not None else 0,
                    "queue_nbytes": sum(s.data.nbytes for s in q.slots),
                })

    video = np.stack(emitted)
    gt_masks = [render_frame(scene, g)[1] for g in range(cfg.n_frames)]
    report = compute_report(list(video), gt_masks, cfg.tail_r)
    dump = write_dump(
        cfg.out_dir / f"{cfg.run_id}.vdump", video, cfg.config_hash, cfg.seed
    )
    write_metrics_csv(
        cfg.out_dir / f"{cfg.run_id}_metrics.csv",
        [report.as_row(cfg.run_id, cfg.config_hash)],
    )
    return dump, report


ABLATION_ROWS = (
    ("A", False, False, False),  # fresh-noise tail, plain attention
    ("B", True, False, False),   # + spectral tail blending
    ("C", True, True, False),    # + cross-frame references
    ("D", True, True, True),     # + bank guidance
)


def run_ablation(base_cfg: RunConfig):
    """Four cumulative-component runs sharing one seed.

    Returns [(label, RunConfig, MetricsReport)] and writes
    <out_dir>/<run_id>_ablation.csv with one row per configuration.
    """
    if base_cfg.denoiser != "toy":
        raise ConfigurationError("ablation requires denoiser='toy'")
    results = []
    for label, tail_on, sacfa_on, guide_on in ABLATION_ROWS:
        raw = copy.deepcopy(base_cfg.raw)
        raw["tail"]["enabled"] = tail_on
        raw["sacfa"]["enabled"] = sacfa_on
        raw["guidance"]["enabled"] = guide_on
        raw["run_id"] = f"{base_cfg.run_id}-{label}"
        cfg = resolve_config(raw)
        _, report = generate(cfg)
        results.append((label, cfg, report))
        log.info("ablation %s: %s", label, report)
    write_metrics_csv(
        base_cfg.out_dir / f"{base_cfg.run_id}_ablation.csv",
        [rep.as_row(cfg.run_id, cfg.config_hash) for _, cfg, rep in results],
    )
    return results
