"""Deterministic synthetic flow and depth samples and their on-disk cache."""
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..numerics import checkpoint


@dataclass
class SyntheticSample:
    frame1: np.ndarray  # (H, W, 1) in [0, 1]
    frame2: np.ndarray | None = None  # (H, W, 1)
    flow: np.ndarray | None = None  # (H, W, 2) as (u, v) = (columns, rows)
    depth: np.ndarray | None = None  # (H, W) > 0
    seed: int | None = None

    @property
    def task(self):
        return "flow" if self.flow is not None else "depth"


def sample_seed(base, index):
    return int(base) * 1_000_003 + int(index)


def smooth_texture(rng, height, width, sigma=1.5):
    """Gaussian-filtered white noise stretched to [0, 1], fp32-representable."""
    noise = rng.standard_normal((height, width))
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    lowpass = np.exp(-2.0 * (np.pi * sigma) ** 2 * (fx ** 2 + fy ** 2))
    tex = np.real(np.fft.ifft2(np.fft.fft2(noise) * lowpass))
    tex = (tex - tex.min()) / (tex.max() - tex.min())
    return checkpoint.fp32_round(tex)


def gen_flow_sample(seed, height=32, width=32, max_shift=3, shift=None, sigma=1.5):
    """Frame pair related by an integer translation.

    ``frame2[y + v, x + u] == frame1[y, x]`` wherever both sides are inside the
    image. ``shift`` forces ``(u, v)``; otherwise both are drawn uniformly
    from ``[-max_shift, max_shift]``.
    """
    if not max_shift < min(height, width) / 4:
        raise ValueError(f"max_shift {max_shift} must be < min(H, W)/4")
    rng = np.random.default_rng(seed)
    m = max_shift
    tex = smooth_texture(rng, height + 2 * m, width + 2 * m, sigma)
    if shift is None:
        du, dv = (int(s) for s in rng.integers(-m, m + 1, size=2))
    else:
        du, dv = (int(s) for s in shift)
        if max(abs(du), abs(dv)) > m:
            raise ValueError(f"shift {shift} exceeds max_shift {m}")
    f1 = tex[m:m + height, m:m + width]
    f2 = tex[m - dv:m - dv + height, m - du:m - du + width]
    flow = np.empty((height, width, 2))
    flow[..., 0] = du
    flow[..., 1] = dv
    return SyntheticSample(frame1=f1[..., None].copy(), frame2=f2[..., None].copy(),
                           flow=flow, seed=seed)


def _depth_shading(depth, albedo):
    return np.exp(-0.15 * depth) * (0.85 + 0.15 * albedo)


def gen_depth_sample(seed, height=32, width=32, n_rects=None, max_tries=100):
    """Fronto-parallel textured rectangles over a background plane.

    Nearer rectangles overwrite farther ones (painter's order). Every plane
    keeps at least one visible pixel, so the depth map has exactly
    ``n_rects + 1`` distinct values. Image intensity is the albedo texture
    attenuated by ``exp(-0.15 * depth)``.
    """
    rng = np.random.default_rng(seed)
    if n_rects is None:
        n_rects = int(rng.integers(2, 5))
    background = float(rng.uniform(7.0, 10.0))
    # distinct depths at least 0.5 apart
    levels = np.arange(1.5, 6.5, 0.5)
    rect_depths = np.sort(rng.choice(levels, size=n_rects, replace=False))[::-1]
    albedo = smooth_texture(rng, height, width, sigma=2.0)
    for _ in range(max_tries):
        depth = np.full((height, width), background)
        for z in rect_depths:
            rh = int(rng.integers(height // 4, height // 2 + 1))
            rw = int(rng.integers(width // 4, width // 2 + 1))
            y0 = int(rng.integers(0, height - rh + 1))
            x0 = int(rng.integers(0, width - rw + 1))
            depth[y0:y0 + rh, x0:x0 + rw] = z
        if len(np.unique(depth)) == n_rects + 1:
            break
    else:
        raise RuntimeError(f"could not place {n_rects} visible rectangles")
    depth = checkpoint.fp32_round(depth)
    image = checkpoint.fp32_round(_depth_shading(depth, albedo))
    return SyntheticSample(frame1=image[..., None], depth=depth, seed=seed)


def gen_dataset(task, count, seed, height=32, width=32, max_shift=3):
    if task == "flow":
        return [gen_flow_sample(sample_seed(seed, i), height, width, max_shift) for i in range(count)]
    if task == "depth":
        return [gen_depth_sample(sample_seed(seed, i), height, width) for i in range(count)]
    raise ValueError(f"unknown task {task!r}")


def split(samples, train_fraction=0.8):
    """First 80% (in seed order) for training, the rest held out."""
    n_train = int(round(train_fraction * len(samples)))
    return samples[:n_train], samples[n_train:]


def sample_tensors(sample):
    if sample.task == "flow":
        return {"frame1": sample.frame1, "frame2": sample.frame2, "flow": sample.flow}
    return {"frame1": sample.frame1, "depth": sample.depth}


def save_dataset(directory, samples):
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, s in enumerate(samples):
        p = out / f"sample_{i:05d}.pfkt"
        checkpoint.save(p, sample_tensors(s))
        paths.append(p)
    return paths


def load_sample(path):
    t = checkpoint.load(path)
    if "flow" in t:
        return SyntheticSample(frame1=t["frame1"], frame2=t["frame2"], flow=t["flow"])
    if "depth" in t:
        return SyntheticSample(frame1=t["frame1"], depth=t["depth"])
    raise checkpoint.CheckpointError(f"{path} is not a sample file")


def load_dataset(directory):
    paths = sorted(Path(directory).glob("sample_*.pfkt"))
    if not paths:
        raise FileNotFoundError(f"no sample files in {directory}")
    return [load_sample(p) for p in paths]
