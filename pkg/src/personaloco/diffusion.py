"""DDPM schedule, forward noising, x0-prediction reverse sampling.

Sampling runs the reverse chain from Gaussian noise with in-diffusion
blending (the first M noised frames are pulled toward the last past frame at
every step) and classifier-free guidance on the past-motion condition: the
denoiser is evaluated with and without past motion and the outputs combined
as uncond + gamma * (cond - uncond).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadScheduleParams, ShapeMismatch

DEFAULT_T = 4
DEFAULT_GAMMA = 0.7
DEFAULT_BLEND_M = 5


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: np.ndarray           # (T,)
    alphas_cumprod: np.ndarray  # (T,), strictly decreasing, in (0,1)

    def __post_init__(self):
        self.betas.setflags(write=False)
        self.alphas_cumprod.setflags(write=False)

    @property
    def T(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t: int) -> float:
        return float(self.alphas_cumprod[t])

    def alpha_bar_prev(self, t: int) -> float:
        return 1.0 if t == 0 else float(self.alphas_cumprod[t - 1])

    def posterior_coeffs(self, t: int) -> tuple[float, float, float]:
        """(c1, c2, variance): mean = c1*x0_hat + c2*x_t."""
        ab = self.alpha_bar(t)
        ab_prev = self.alpha_bar_prev(t)
        alpha_t = ab / ab_prev
        beta_t = 1.0 - alpha_t
        c1 = np.sqrt(ab_prev) * beta_t / (1.0 - ab)
        c2 = np.sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab)
        var = (1.0 - ab_prev) / (1.0 - ab) * beta_t
        return float(c1), float(c2), float(max(var, 0.0))

    def to_dict(self) -> dict:
        return {"betas": self.betas.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "DiffusionSchedule":
        betas = np.asarray(d["betas"], dtype=np.float64)
        return DiffusionSchedule(betas=betas, alphas_cumprod=np.cumprod(1.0 - betas))


def make_schedule(
    T: int = DEFAULT_T,
    beta_min: float = 1e-4,
    beta_max: float = 0.02,
    spacing: str = "linear",
) -> DiffusionSchedule:
    if T < 1:
        raise BadScheduleParams("T must be >= 1")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise BadScheduleParams("need 0 < beta_min <= beta_max < 1")
    if spacing != "linear":
        raise BadScheduleParams(f"unknown spacing {spacing!r}")
    betas = np.linspace(beta_min, beta_max, T) if T > 1 else np.array([beta_min])
    sched = DiffusionSchedule(betas=betas, alphas_cumprod=np.cumprod(1.0 - betas))
    if np.any(np.diff(sched.alphas_cumprod) >= 0):
        raise BadScheduleParams("alphas_cumprod must strictly decrease")
    return sched


def q_sample(x0: np.ndarray, t: int, eps: np.ndarray, schedule: DiffusionSchedule) -> np.ndarray:
    if x0.shape != eps.shape:
        raise ShapeMismatch(f"x0 {x0.shape} vs eps {eps.shape}")
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def posterior_step(
    x_hat0: np.ndarray,
    x_t: np.ndarray,
    t: int,
    rng: np.random.Generator,
    schedule: DiffusionSchedule,
) -> np.ndarray:
    """One reverse step x_t -> x_{t-1}; the t=0 step returns x_hat0 noiselessly."""
    if x_hat0.shape != x_t.shape:
        raise ShapeMismatch(f"x_hat0 {x_hat0.shape} vs x_t {x_t.shape}")
    if not 0 <= t < schedule.T:
        raise ValueError(f"t={t} outside [0, {schedule.T})")
    if t == 0:
        return x_hat0.copy()
    c1, c2, var = schedule.posterior_coeffs(t)
    mean = c1 * x_hat0 + c2 * x_t
    if var > 0.0:
        mean = mean + np.sqrt(var) * rng.standard_normal(x_t.shape)
    return mean


def blend_in_diffusion(x_t: np.ndarray, cp_end: np.ndarray, m: int = DEFAULT_BLEND_M) -> np.ndarray:
    """Pull the first m frames toward the last past frame.

    Frame i (1-indexed) mixes with weight w(i) = (m-i)/(m-1), the unique
    linear ramp from w(1)=1 to w(m)=0; frames beyond m pass through.
    """
    if m > x_t.shape[0]:
        raise ValueError(f"blend window {m} exceeds block length {x_t.shape[0]}")
    out = x_t.copy()
    if m < 1:
        return out
    if m == 1:
        out[0] = cp_end
        return out
    for i in range(1, m + 1):
        w = (m - i) / (m - 1)
        out[i - 1] = w * cp_end + (1.0 - w) * x_t[i - 1]
    return out


def cfg_combine(out_cond: np.ndarray, out_uncond: np.ndarray, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    if out_cond.shape != out_uncond.shape:
        raise ShapeMismatch(f"{out_cond.shape} vs {out_uncond.shape}")
    if gamma == 1.0:
        return out_cond.copy()
    if gamma == 0.0:
        return out_uncond.copy()
    return out_uncond + gamma * (out_cond - out_uncond)


def sample_block(
    model,
    bundle,
    gamma: float,
    rng: np.random.Generator,
    schedule: DiffusionSchedule,
    blend_m: int = DEFAULT_BLEND_M,
    block_len: int = 45,
    trace: list | None = None,
) -> np.ndarray:
    """Reverse-sample one future block; returns denormalized features.

    `model` must expose predict_x0(x_t, t, bundle, drop_past) -> x0_hat in
    normalized feature space, and `stats`. Both CFG branches are evaluated
    every step so the rng stream is independent of gamma. `trace`, when
    given, collects each step's blended denoiser input.
    """
    fdim = bundle.past.shape[1]
    x = rng.standard_normal((block_len, fdim))
    for t in reversed(range(schedule.T)):
        x = blend_in_diffusion(x, bundle.cp_end, blend_m)
        if trace is not None:
            trace.append(x.copy())
        out_c = model.predict_x0(x, t, bundle, drop_past=False)
        out_u = model.predict_x0(x, t, bundle, drop_past=True)
        x_hat0 = cfg_combine(out_c, out_u, gamma)
        x = posterior_step(x_hat0, x, t, rng, schedule)
    return model.stats.denormalize(x)
