"""Small N-MNIST-like corpus rendered from scikit-learn's bundled 8x8 digits.

Each digit is upsampled to 28x28, centered on a 34x34 canvas and moved along
three straight saccades (a triangle, 100 ms each). A pixel emits an ON or OFF
event whenever its log intensity drifts more than a contrast threshold from
the level at its previous event. The output directory mirrors the N-MNIST
layout (``Train/<digit>/*.bin``, ``Test/<digit>/*.bin``) and the files use the
same 5-byte AER records, so every loader path is exercised.

This is a stand-in for plumbing and smoke tests only; accuracies on it are
not comparable to N-MNIST.
"""
from pathlib import Path

import numpy as np
from scipy import ndimage
from sklearn.datasets import load_digits

from .events import NMNIST_SIZE, Recording, make_events, save_bin

SACCADE_US = 100_000
_TRIANGLE = np.array([[0.0, 0.0], [1.5, 2.5], [3.0, 0.0], [0.0, 0.0]])


def render_events(image, rng, threshold=0.25, frame_us=1000, noise_rate=2e-6):
    """Event stream for one grayscale image (values in [0, 16])."""
    img = ndimage.zoom(image.astype(float) / 16.0, 28 / image.shape[0], order=1)
    canvas = np.zeros(NMNIST_SIZE[::-1])
    canvas[3:31, 3:31] = np.clip(img, 0, 1)
    n_frames = 3 * SACCADE_US // frame_us
    ref = None
    xs, ys, ps, ts = [], [], [], []
    for k in range(n_frames + 1):
        t = k * frame_us
        leg = min(t // SACCADE_US, 2)
        frac = (t - leg * SACCADE_US) / SACCADE_US
        dx, dy = _TRIANGLE[leg] + frac * (_TRIANGLE[leg + 1] - _TRIANGLE[leg])
        frame = ndimage.shift(canvas, (dy, dx), order=1, mode="constant")
        logi = np.log(frame + 0.05)
        if ref is None:
            ref = logi
            continue
        diff = logi - ref
        fired = np.abs(diff) >= threshold
        yy, xx = np.nonzero(fired)
        if len(yy):
            xs.append(xx)
            ys.append(yy)
            ps.append((diff[yy, xx] > 0).astype(int))
            ts.append(t - frame_us + rng.integers(0, frame_us, len(yy)))
            ref[yy, xx] = logi[yy, xx]
    # background activity
    n_noise = rng.poisson(noise_rate * NMNIST_SIZE[0] * NMNIST_SIZE[1] * n_frames * frame_us)
    xs.append(rng.integers(0, NMNIST_SIZE[0], n_noise))
    ys.append(rng.integers(0, NMNIST_SIZE[1], n_noise))
    ps.append(rng.integers(0, 2, n_noise))
    ts.append(rng.integers(0, n_frames * frame_us, n_noise))
    ev = make_events(np.concatenate(xs), np.concatenate(ys), np.concatenate(ps),
                     np.concatenate(ts))
    return ev[np.argsort(ev["t"], kind="stable")]


def make_corpus(root, n_train=20, n_test=10, seed=0, threshold=0.25):
    """Write a synthetic corpus with ``n_train``/``n_test`` files per digit."""
    root = Path(root)
    digits = load_digits()
    rng = np.random.default_rng(seed)
    by_class = {c: np.flatnonzero(digits.target == c) for c in range(10)}
    for c, idx in by_class.items():
        idx = rng.permutation(idx)
        need = n_train + n_test
        if need > len(idx):
            raise ValueError(f"digit {c} has only {len(idx)} images, {need} requested")
        for split, chosen in (("Train", idx[:n_train]), ("Test", idx[n_train:need])):
            cdir = root / split / str(c)
            cdir.mkdir(parents=True, exist_ok=True)
            for j, i in enumerate(chosen):
                ev = render_events(digits.images[i], rng, threshold)
                save_bin(Recording(ev, c), cdir / f"{j:05d}.bin")
    return root
