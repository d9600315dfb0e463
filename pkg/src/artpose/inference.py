"""Particle belief propagation over the part graph of one articulated object.

Each part keeps a set of weighted pose particles. One iteration:

1. jitter the survivors of the previous resample (not on the first pass),
2. optionally augment each set with unary / pairwise / random proposals,
3. reweight: ``log w_s = log φ_s + Σ_t log m_ts`` with the neighbour-only
   message ``m_ts(x) = Σ_j ψ(x, X_t^j) φ_t(X_t^j)``, all sets read from the
   same snapshot (synchronous schedule),
4. systematic resampling back to N particles.

The estimate of each part is the highest-weight particle of the final
reweight.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.special import logsumexp

from .kinematics import ArticulatedModel, batch_child_pose, child_pose, joint_residual
from .observation import Observation
from .potentials import LOG_FLOOR, PotentialConfig, UnaryEvaluator, log_pairwise_matrix
from .results import EstimationError, EstimationResult
from .se3 import Pose, quat_from_rotvec, quat_mul, random_quaternions


class InitializationError(EstimationError):
    pass


@dataclass
class AugmentConfig:
    alpha: float = 1.5
    unary_frac: float = 0.05
    pair_step: float = 0.10
    pair_every: int = 5
    pair_max: float = 0.90
    rand_sigma: tuple = (0.02, 0.3)

    def __post_init__(self):
        if not self.alpha > 1:
            raise ValueError("augmentation needs alpha > 1")
        if not 0 <= self.unary_frac <= 1:
            raise ValueError("unary_frac must lie in [0, 1]")
        self.rand_sigma = tuple(self.rand_sigma)

    def fractions(self, iteration):
        """``(unary, rand, pair)`` shares of the added particles."""
        pair = min(self.pair_step * (iteration // self.pair_every), self.pair_max, 1.0 - self.unary_frac)
        pair = round(pair, 12)
        return self.unary_frac, round(1.0 - self.unary_frac - pair, 12), pair

    def pool_size(self, n):
        return int(math.ceil(self.alpha * n - 1e-9))


@dataclass
class InferenceConfig:
    n_particles: int = 300
    n_iterations: int = 100
    jitter_sigma: tuple = (0.005, 0.05)
    jitter: bool = True
    augment: AugmentConfig | None = None
    mode: str = "rgbd"
    use_messages: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if self.n_iterations < 0:
            raise ValueError("n_iterations must be >= 0")
        if self.mode not in ("rgb", "rgbd"):
            raise ValueError(f"mode must be 'rgb' or 'rgbd', got {self.mode!r}")
        self.jitter_sigma = tuple(self.jitter_sigma)
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig(**self.augment)

    def to_dict(self):
        return asdict(self)


@dataclass(eq=False)
class ParticleSet:
    translations: np.ndarray  # (N, 3)
    quaternions: np.ndarray  # (N, 4)
    log_weights: np.ndarray = None  # (N,), normalized

    def __post_init__(self):
        self.translations = np.asarray(self.translations, dtype=float).reshape(-1, 3)
        self.quaternions = np.asarray(self.quaternions, dtype=float).reshape(-1, 4)
        n = len(self.translations)
        if n < 1 or len(self.quaternions) != n:
            raise ValueError("particle set needs N >= 1 matching translations and rotations")
        if self.log_weights is None:
            self.log_weights = np.full(n, -math.log(n))
        self.log_weights = np.asarray(self.log_weights, dtype=float)

    def __len__(self):
        return len(self.translations)

    @property
    def weights(self):
        return np.exp(self.log_weights)

    def pose(self, i):
        return Pose(self.translations[i], self.quaternions[i])

    def poses(self):
        return [self.pose(i) for i in range(len(self))]

    def subset(self, idx):
        n = len(idx)
        return ParticleSet(self.translations[idx], self.quaternions[idx], np.full(n, -math.log(n)))

    def ess(self):
        w = self.weights
        return float(1.0 / np.sum(w * w))

    @classmethod
    def concat(cls, sets):
        return cls(np.vstack([s.translations for s in sets]), np.vstack([s.quaternions for s in sets]))


@dataclass(eq=False)
class BeliefState:
    sets: list
    iteration: int = 0

    def __len__(self):
        return len(self.sets)


def normalize_log_weights(log_w):
    log_w = np.asarray(log_w, dtype=float)
    if not np.all(np.isfinite(log_w)):
        warnings.warn("non-finite particle weights; falling back to uniform", RuntimeWarning, stacklevel=2)
        return np.full(len(log_w), -math.log(len(log_w)))
    return log_w - logsumexp(log_w)


def systematic_resample(weights, n, rng):
    """Indices of ``n`` systematic draws (one uniform offset, equal strata)."""
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    if not np.isfinite(total) or total <= 0:
        warnings.warn("degenerate weights; resampling uniformly", RuntimeWarning, stacklevel=2)
        weights = np.ones(len(weights))
        total = float(len(weights))
    cdf = np.cumsum(weights / total)
    positions = (rng.random() + np.arange(n)) / n
    return np.minimum(np.searchsorted(cdf, positions, side="right"), len(weights) - 1)


def resample(pset: ParticleSet, rng, n=None) -> ParticleSet:
    n = len(pset) if n is None else n
    return pset.subset(systematic_resample(pset.weights, n, rng))


def jitter(pset: ParticleSet, sigma, rng) -> ParticleSet:
    st, sr = sigma
    n = len(pset)
    t = pset.translations + rng.normal(0.0, st, (n, 3))
    q = quat_mul(pset.quaternions, quat_from_rotvec(rng.normal(0.0, sr, (n, 3))))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q = np.where(q[:, :1] < 0, -q, q)
    return ParticleSet(t, q, pset.log_weights)


def messages(sender: ParticleSet, recv_t, recv_q, joint, sender_log_unary, cfg=None):
    """Log messages from ``sender`` to each receiver particle.

    ``joint`` is oriented so that ``child_pose(X_sender, joint, q)`` predicts
    the receiver (as returned by :meth:`ArticulatedModel.neighbors`).
    """
    if joint.inverted:
        log_psi = log_pairwise_matrix(recv_t, recv_q, sender.translations, sender.quaternions, joint.forward_view(), cfg)
    else:
        log_psi = log_pairwise_matrix(sender.translations, sender.quaternions, recv_t, recv_q, joint, cfg).T
    out = logsumexp(log_psi + np.asarray(sender_log_unary)[None, :], axis=1)
    return np.maximum(out, LOG_FLOOR)


def message(sender: ParticleSet, receiver: Pose, joint, sender_log_unary, cfg=None) -> float:
    return float(messages(sender, receiver.translation[None], receiver.rotation[None], joint, sender_log_unary, cfg)[0])


class ParticleBP:
    """Belief propagation engine bound to one model and observation."""

    def __init__(self, model: ArticulatedModel, obs: Observation, cfg=None, potentials=None):
        if len(obs) != len(model.parts):
            raise ValueError(f"observation has {len(obs)} heatmaps for {len(model.parts)} parts")
        self.model = model
        self.obs = obs
        self.cfg = cfg or InferenceConfig()
        self.pcfg = potentials or PotentialConfig()
        self.unary = UnaryEvaluator(model, obs, self.pcfg, self.cfg.mode)
        self.neighbors = [model.neighbors(s) for s in range(len(model.parts))]
        seeds = np.random.SeedSequence(self.cfg.seed).spawn(len(model.parts))
        self.rngs = [np.random.default_rng(s) for s in seeds]
        thr = self.pcfg.heatmap_threshold
        self._cand = []
        for s in range(len(model.parts)):
            heat = obs.heatmaps[s]
            rows, cols = np.nonzero((heat >= thr) & (obs.depth > 0))
            p = heat[rows, cols].astype(float)
            self._cand.append((rows, cols, p / p.sum() if len(p) else p))

    def visible(self, s):
        return len(self._cand[s][0]) > 0

    # -- proposals ---------------------------------------------------------

    def sample_from_heat(self, s, n, rng):
        """Back-projected high-heat pixels with uniform orientations."""
        rows, cols, p = self._cand[s]
        k = rng.choice(len(rows), size=n, p=p)
        z = self.obs.depth[rows[k], cols[k]]
        t = self.obs.camera.pixel_centers(rows[k], cols[k], z)
        return t, random_quaternions(rng, n)

    def sample_from_neighbors(self, s, n, rng, sources, only=None):
        """Poses of part ``s`` implied by random neighbour particles and joint values."""
        nbrs = [(t, j) for t, j in self.neighbors[s] if only is None or t in only]
        pick = rng.integers(len(nbrs), size=n)
        ts, qs = np.empty((n, 3)), np.empty((n, 4))
        for k, (t, joint) in enumerate(nbrs):
            sel = np.nonzero(pick == k)[0]
            if len(sel) == 0:
                continue
            src = sources[t]
            j = rng.integers(len(src), size=len(sel))
            q = joint.sample(rng, len(sel))
            ts[sel], qs[sel] = batch_child_pose(src.translations[j], src.quaternions[j], joint, q)
        return ts, qs

    # -- steps ---------------------------------------------------------------

    def initialize(self) -> BeliefState:
        n = self.cfg.n_particles
        sets = [None] * len(self.model.parts)
        for s in range(len(sets)):
            if self.visible(s):
                sets[s] = ParticleSet(*self.sample_from_heat(s, n, self.rngs[s]))
        if all(x is None for x in sets):
            raise InitializationError("no part of the object is visible in any heatmap")
        # occluded parts grow outward from initialized neighbours
        while any(x is None for x in sets):
            for s in range(len(sets)):
                if sets[s] is not None:
                    continue
                done = {t for t, _ in self.neighbors[s] if sets[t] is not None}
                if done:
                    sets[s] = ParticleSet(*self.sample_from_neighbors(s, n, self.rngs[s], sets, only=done))
        return BeliefState(sets, 0)

    def augment(self, state: BeliefState):
        """Grow every set to ``ceil(alpha N)``; returns the pool and the shares used."""
        aug = self.cfg.augment
        fr = aug.fractions(state.iteration)
        out = []
        for s, pset in enumerate(state.sets):
            rng = self.rngs[s]
            extra = aug.pool_size(len(pset)) - len(pset)
            n_unary = int(round(fr[0] * extra)) if self.visible(s) else 0
            n_pair = int(round(fr[2] * extra)) if self.neighbors[s] else 0
            n_pair = min(n_pair, extra - n_unary)
            n_rand = extra - n_unary - n_pair
            parts = [pset]
            if n_unary:
                parts.append(ParticleSet(*self.sample_from_heat(s, n_unary, rng)))
            if n_pair:
                parts.append(ParticleSet(*self.sample_from_neighbors(s, n_pair, rng, state.sets)))
            if n_rand:
                base = pset.subset(rng.integers(len(pset), size=n_rand))
                parts.append(jitter(base, aug.rand_sigma, rng))
            out.append(ParticleSet.concat(parts))
        return BeliefState(out, state.iteration), fr

    def reweight(self, state: BeliefState):
        """Returns ``(normalized state, unnormalized log weights per part)``."""
        sets = state.sets
        log_u = [self.unary(s, p.translations, p.quaternions) for s, p in enumerate(sets)]
        new, raw = [], []
        for s, pset in enumerate(sets):
            lw = log_u[s].copy()
            if self.cfg.use_messages:
                for t, joint in self.neighbors[s]:
                    lw += messages(sets[t], pset.translations, pset.quaternions, joint, log_u[t], self.pcfg)
            raw.append(lw)
            new.append(ParticleSet(pset.translations, pset.quaternions, normalize_log_weights(lw)))
        return BeliefState(new, state.iteration), raw

    def resample(self, state: BeliefState):
        n = self.cfg.n_particles
        sets = [resample(p, self.rngs[s], n) for s, p in enumerate(state.sets)]
        return BeliefState(sets, state.iteration + 1)

    def jitter(self, state: BeliefState):
        sets = [jitter(p, self.cfg.jitter_sigma, self.rngs[s]) for s, p in enumerate(state.sets)]
        return BeliefState(sets, state.iteration)

    # -- driver --------------------------------------------------------------

    def snap_hidden(self, poses):
        """Project the estimate of every unobserved part onto the joint manifold
        of an already placed neighbour, keeping its best-fit joint value inside
        the limits. Such parts are informed by messages alone, whose maximum is
        reached exactly on that manifold."""
        poses = list(poses)
        placed = {s for s in range(len(poses)) if self.visible(s)}
        if not placed:
            return poses
        while len(placed) < len(poses):
            for s in range(len(poses)):
                if s in placed:
                    continue
                nbrs = [(t, j) for t, j in self.neighbors[s] if t in placed]
                if not nbrs:
                    continue
                # the neighbour the estimate already agrees with best
                fits = [(joint_residual(poses[t], j, poses[s]), t, j) for t, j in nbrs]
                (q_hat, _), t, joint = min(fits, key=lambda f: f[0][1])
                q = min(max(q_hat, joint.lower), joint.upper) if joint.kind != "fixed" else 0.0
                poses[s] = child_pose(poses[t], joint, q)
                placed.add(s)
        return poses

    def header(self):
        h = {"inference": self.cfg.to_dict(), "potentials": self.pcfg.to_dict()}
        aug = self.cfg.augment
        if aug is not None:
            h["augment_schedule"] = {
                "alpha": aug.alpha,
                "pool_size": aug.pool_size(self.cfg.n_particles),
                "fractions": [list(aug.fractions(it)) for it in range(self.cfg.n_iterations)],
            }
        return h

    def run(self, method="mp-rgbd", callback=None) -> EstimationResult:
        start = time.perf_counter()
        cfg = self.cfg
        state = self.initialize()
        diagnostics = []
        if cfg.n_iterations == 0:
            raw = [self.unary(s, p.translations, p.quaternions) for s, p in enumerate(state.sets)]
            weighted = state
        for it in range(cfg.n_iterations):
            if it > 0 and cfg.jitter:
                state = self.jitter(state)
            fr = (None, None, None)
            if cfg.augment is not None:
                state, fr = self.augment(state)
            weighted, raw = self.reweight(state)
            for s, pset in enumerate(weighted.sets):
                diagnostics.append(
                    {
                        "iteration": it,
                        "part": self.model.parts[s].name,
                        "pool_size": len(pset),
                        "ess": pset.ess(),
                        "best_log_weight": float(raw[s].max()),
                        "unary_frac": fr[0],
                        "rand_frac": fr[1],
                        "pair_frac": fr[2],
                    }
                )
            if callback is not None:
                callback(self, weighted, raw)
            state = self.resample(weighted)
        best = [int(np.argmax(r)) for r in raw]
        return EstimationResult(
            poses=self.snap_hidden([weighted.sets[s].pose(i) for s, i in enumerate(best)]),
            method=method,
            seed=cfg.seed,
            runtime=time.perf_counter() - start,
            log_weights=[float(raw[s][i]) for s, i in enumerate(best)],
            part_names=[p.name for p in self.model.parts],
            header=self.header(),
            diagnostics=diagnostics,
        )


# ---------------------------------------------------------------------------
# functional entry points
# ---------------------------------------------------------------------------


def initialize(model, obs, cfg=None, potentials=None) -> BeliefState:
    return ParticleBP(model, obs, cfg, potentials).initialize()


def reweight(state, model, obs, cfg=None, potentials=None) -> BeliefState:
    return ParticleBP(model, obs, cfg, potentials).reweight(state)[0]


def run(model, obs, cfg=None, potentials=None, method=None) -> EstimationResult:
    cfg = cfg or InferenceConfig()
    if method is None:
        method = ("mp-" if cfg.use_messages else "pf-") + cfg.mode + ("-aug" if cfg.augment else "")
    return ParticleBP(model, obs, cfg, potentials).run(method)


def with_overrides(cfg: InferenceConfig, **kw) -> InferenceConfig:
    return replace(cfg, **kw)
