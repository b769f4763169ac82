"""Independent brute-force oracles used to cross-check the package.

Everything here is written the slow, obvious way (plain Python loops,
explicit formulas) and must stay independent of the implementations it
checks: no imports from vocl beyond plain data.
"""

from __future__ import annotations

import math

import numpy as np


def infonce_mel_mel_bruteforce(v: np.ndarray, u: np.ndarray, tau: float) -> float:
    """Double-loop masked-view InfoNCE.

    v: [N, D] original embeddings (anchors), u: [N, D] masked views.
    Candidates for anchor i: every embedding in (v + u) except v[i] itself;
    positive is u[i].
    """
    n = v.shape[0]
    pool = list(v) + list(u)
    total = 0.0
    for i in range(n):
        numer = math.exp(tau * float(np.dot(v[i], u[i])))
        denom = 0.0
        for j, cand in enumerate(pool):
            if j == i:  # the anchor itself
                continue
            denom += math.exp(tau * float(np.dot(v[i], cand)))
        total += -math.log(numer / denom)
    return total / n


def infonce_mel_wave_bruteforce(
    v: np.ndarray,
    w: np.ndarray,
    tau: float,
    include_positive: bool = True,
    symmetric: bool = False,
) -> float:
    """Double-loop cross-modal InfoNCE; anchor v[i], positive w[i]."""

    def one_way(anchors, candidates):
        n = anchors.shape[0]
        total = 0.0
        for i in range(n):
            numer = math.exp(tau * float(np.dot(anchors[i], candidates[i])))
            denom = 0.0
            for j in range(n):
                if not include_positive and j == i:
                    continue
                denom += math.exp(tau * float(np.dot(anchors[i], candidates[j])))
            total += -math.log(numer / denom)
        return total / n

    loss = one_way(v, w)
    if symmetric:
        loss = 0.5 * (loss + one_way(w, v))
    return loss


def lsgan_bruteforce(real_scores, fake_scores) -> tuple[float, float]:
    """(l_adv_g, l_adv_d) via explicit elementwise means."""
    l_g = 0.0
    l_d = 0.0
    for real, fake in zip(real_scores, fake_scores):
        real = np.asarray(real, dtype=np.float64).ravel()
        fake = np.asarray(fake, dtype=np.float64).ravel()
        l_d += float(np.mean((real - 1.0) ** 2)) + float(np.mean(fake**2))
        l_g += float(np.mean((fake - 1.0) ** 2))
    return l_g, l_d


def feature_matching_bruteforce(real_features, fake_features) -> float:
    total = 0.0
    for real_layers, fake_layers in zip(real_features, fake_features):
        for r, f in zip(real_layers, fake_layers):
            r = np.asarray(r, dtype=np.float64)
            f = np.asarray(f, dtype=np.float64)
            total += float(np.mean(np.abs(r - f)))
    return total


def dct2_ortho_bruteforce(x: np.ndarray) -> np.ndarray:
    """Orthonormal DCT-II of each column, written out as explicit cosines."""
    m = x.shape[0]
    out = np.zeros_like(x, dtype=np.float64)
    for k in range(m):
        scale = math.sqrt(1.0 / m) if k == 0 else math.sqrt(2.0 / m)
        for t in range(x.shape[1]):
            acc = 0.0
            for i in range(m):
                acc += x[i, t] * math.cos(math.pi * k * (2 * i + 1) / (2 * m))
            out[k, t] = scale * acc
    return out


def mcd_bruteforce(ref_log_mel: np.ndarray, gen_log_mel: np.ndarray, n_coeffs: int = 13) -> float:
    """Kubichek-style distortion: dB-scaled cepstral L2, energy term excluded."""
    c_ref = dct2_ortho_bruteforce(np.asarray(ref_log_mel, dtype=np.float64))
    c_gen = dct2_ortho_bruteforce(np.asarray(gen_log_mel, dtype=np.float64))
    n_frames = ref_log_mel.shape[1]
    total = 0.0
    for t in range(n_frames):
        acc = 0.0
        for d in range(1, n_coeffs + 1):
            acc += (c_ref[d, t] - c_gen[d, t]) ** 2
        total += (10.0 / math.log(10.0)) * math.sqrt(2.0 * acc)
    return total / n_frames


def central_difference_grads(f, arrays: list[np.ndarray], step: float = 1e-4):
    """Numeric gradients of a black-box scalar function of numpy arrays."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = a[idx]
            a[idx] = orig + step
            up = f(arrays)
            a[idx] = orig - step
            down = f(arrays)
            a[idx] = orig
            g[idx] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def slaney_hz_to_mel(f: float) -> float:
    """Slaney mel scale, restated independently for filterbank fixtures."""
    if f < 1000.0:
        return f / (200.0 / 3.0)
    return 15.0 + math.log(f / 1000.0) / (math.log(6.4) / 27.0)


def slaney_mel_to_hz(mel: float) -> float:
    if mel < 15.0:
        return mel * (200.0 / 3.0)
    return 1000.0 * math.exp((math.log(6.4) / 27.0) * (mel - 15.0))


def slaney_band_centers(n_mels: int, fmin: float, fmax: float) -> list[float]:
    lo = slaney_hz_to_mel(fmin)
    hi = slaney_hz_to_mel(fmax)
    return [
        slaney_mel_to_hz(lo + (hi - lo) * (m + 1) / (n_mels + 1))
        for m in range(n_mels)
    ]
