"""IIR filtering and re-referencing applied before imaging."""
from __future__ import annotations

import shlex
import subprocess
import tempfile
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy.signal import sosfilt

from ._io import read_keyvalue, write_keyvalue
from .eeg_data import Recording, load_recording, save_recording


class UnstableFilterError(ValueError):
    pass


@dataclass(frozen=True)
class Biquad:
    b0: float
    b1: float
    b2: float
    a1: float
    a2: float

    def poles(self) -> np.ndarray:
        return np.roots([1.0, self.a1, self.a2])


@dataclass(frozen=True)
class BiquadCascade:
    sections: tuple[Biquad, ...]
    description: str = ""

    def __post_init__(self):
        for i, sec in enumerate(self.sections):
            r = np.abs(sec.poles()).max(initial=0.0)
            if not r < 1.0:
                raise UnstableFilterError(f"section {i} of {self.description!r} has a pole at radius {r}")

    @property
    def sos(self) -> np.ndarray:
        """``(n_sections, 6)`` array ``[b0, b1, b2, 1, a1, a2]`` per row."""
        return np.array([[s.b0, s.b1, s.b2, 1.0, s.a1, s.a2] for s in self.sections], dtype=np.float64)

    def response(self, freqs_hz, fs: float) -> np.ndarray:
        """Complex frequency response at ``freqs_hz``."""
        z = np.exp(-1j * 2 * np.pi * np.asarray(freqs_hz, dtype=float) / fs)
        h = np.ones_like(z)
        for s in self.sections:
            h *= (s.b0 + s.b1 * z + s.b2 * z * z) / (1.0 + s.a1 * z + s.a2 * z * z)
        return h


IDENTITY = BiquadCascade((Biquad(1.0, 0.0, 0.0, 0.0, 0.0),), "identity")


def design_bandpass(fs: float, low: float, high: float, order: int = 4) -> BiquadCascade:
    """Digital Butterworth bandpass as ``order`` second-order sections.

    ``order`` is the order of the lowpass prototype, so the bandpass has
    ``2*order`` poles.  The band edges are pre-warped before the bilinear
    transform so the -3 dB points land exactly on ``low`` and ``high``.
    """
    if not 0 < low < high < fs / 2:
        raise ValueError(f"need 0 < low < high < fs/2, got low={low}, high={high}, fs={fs}")
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    k2 = 2.0 * fs
    w1 = k2 * np.tan(np.pi * low / fs)
    w2 = k2 * np.tan(np.pi * high / fs)
    bw = w2 - w1
    w0sq = w1 * w2
    proto = np.exp(1j * np.pi * (2 * np.arange(order) + order + 1) / (2 * order))
    # lowpass-to-bandpass: each prototype pole p gives the roots of
    # s^2 - p*bw*s + w0^2
    pb = proto * bw
    disc = np.sqrt(pb * pb - 4 * w0sq + 0j)
    s_poles = np.concatenate([(pb + disc) / 2, (pb - disc) / 2])
    z_poles = (k2 + s_poles) / (k2 - s_poles)

    # pair conjugates, then leftover real poles with each other
    upper = sorted((p for p in z_poles if p.imag > 1e-12), key=lambda p: abs(p))
    reals = sorted((p.real for p in z_poles if abs(p.imag) <= 1e-12))
    if len(reals) % 2:
        raise AssertionError("odd number of real poles")
    sections_a = [(-2.0 * p.real, abs(p) ** 2) for p in upper]
    sections_a += [(-(r1 + r2), r1 * r2) for r1, r2 in zip(reals[::2], reals[1::2])]

    # every section gets one zero at z=1 (from s=0) and one at z=-1 (from s=inf)
    sections = [Biquad(1.0, 0.0, -1.0, a1, a2) for a1, a2 in sections_a]
    center = 2 * np.arctan(np.sqrt(w0sq) / k2)  # digital centre frequency, rad/sample
    gain = 1.0 / abs(BiquadCascade(tuple(sections)).response(center * fs / (2 * np.pi), fs))
    g = gain ** (1.0 / len(sections))
    sections = [Biquad(g * s.b0, g * s.b1, g * s.b2, s.a1, s.a2) for s in sections]
    return BiquadCascade(tuple(sections), f"butterworth bandpass {low}-{high} Hz, order {order}, fs {fs}")


def design_notch(fs: float, f0: float, q: float = 25.0) -> BiquadCascade:
    """Second-order notch at ``f0`` with -3 dB bandwidth ``f0 / q``."""
    if not 0 < f0 < fs / 2:
        raise ValueError(f"notch frequency must be in (0, fs/2), got {f0}")
    if not q > 0:
        raise ValueError(f"q must be positive, got {q}")
    w0 = 2 * np.pi * f0 / fs
    beta = np.tan(w0 / q / 2)
    g = 1.0 / (1.0 + beta)
    c = np.cos(w0)
    return BiquadCascade(
        (Biquad(g, -2.0 * g * c, g, -2.0 * g * c, 2.0 * g - 1.0),),
        f"notch {f0} Hz, q {q}, fs {fs}",
    )


def apply_filter(signal: np.ndarray, cascade: BiquadCascade) -> np.ndarray:
    """Causal transposed direct-form-II filtering along the last axis, zero initial state.

    Channels are filtered one at a time in float64; the output keeps the
    input dtype (float64 for integer input).
    """
    signal = np.asarray(signal)
    dtype = signal.dtype if np.issubdtype(signal.dtype, np.floating) else np.float64
    sos = cascade.sos
    if signal.ndim == 1:
        return sosfilt(sos, signal.astype(np.float64)).astype(dtype, copy=False)
    out = np.empty(signal.shape, dtype=dtype)
    flat_in = signal.reshape(-1, signal.shape[-1])
    flat_out = out.reshape(-1, signal.shape[-1])
    for i in range(flat_in.shape[0]):
        flat_out[i] = sosfilt(sos, flat_in[i].astype(np.float64))
    return out


def average_reference(rec: Recording | np.ndarray, block: int = 1 << 20):
    """Subtract the instantaneous cross-channel mean from every channel.

    Accepts a :class:`Recording` (returns a new one) or a bare
    ``(channels, samples)`` array.
    """
    samples = rec.samples if isinstance(rec, Recording) else np.asarray(rec)
    if samples.shape[0] < 2:
        raise ValueError("average reference needs at least 2 channels")
    out = np.empty(samples.shape, dtype=samples.dtype if np.issubdtype(samples.dtype, np.floating) else np.float64)
    for s in range(0, samples.shape[1], block):
        chunk = samples[:, s : s + block].astype(np.float64)
        out[:, s : s + block] = chunk - chunk.mean(axis=0)
    return rec.with_samples(out) if isinstance(rec, Recording) else out


@dataclass(frozen=True)
class PreprocessConfig:
    band_low_hz: float = 0.5
    band_high_hz: float = 100.0
    band_order: int = 4
    notch_hz: float = 50.0
    notch_q: float = 25.0
    apply_bandpass: bool = True
    apply_notch: bool = True
    apply_average_reference: bool = True
    #: external artifact-removal command, run as ``<command> <in-path> <out-path>``
    ica_hook: str | None = None

    def validate(self, fs: float) -> None:
        if self.apply_bandpass and not 0 < self.band_low_hz < self.band_high_hz < fs / 2:
            raise ValueError(f"bandpass edges {self.band_low_hz}-{self.band_high_hz} Hz invalid for fs={fs}")
        if self.apply_notch and not 0 < self.notch_hz < fs / 2:
            raise ValueError(f"notch frequency {self.notch_hz} Hz invalid for fs={fs}")

    def to_text(self) -> str:
        return write_keyvalue({f.name: ("off" if getattr(self, f.name) is None else getattr(self, f.name))
                               for f in fields(self)})

    @classmethod
    def from_text(cls, text: str) -> PreprocessConfig:
        values = read_keyvalue(text)
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in values.items():
            if key not in types:
                raise ValueError(f"unknown preprocessing option {key!r}")
            kwargs[key] = _parse_value(types[key], raw)
        return cls(**kwargs)


def _parse_value(type_name: str, raw: str):
    if type_name == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if type_name == "int":
        return int(raw)
    if type_name == "float":
        return float(raw)
    return None if raw.lower() in ("", "off", "none") else raw


def run_ica_hook(rec: Recording, command: str) -> Recording:
    """Round-trip ``rec`` through an external command; annotations are kept from ``rec``."""
    with tempfile.TemporaryDirectory() as tmp:
        src = save_recording(rec, Path(tmp) / "in.json")
        dst = Path(tmp) / "out.json"
        result = subprocess.run(shlex.split(command) + [str(src), str(dst)], capture_output=True, text=True)
        if result.returncode != 0:
            raise RuntimeError(f"ICA hook {command!r} failed with exit status {result.returncode}: {result.stderr}")
        out = load_recording(dst)
    if out.samples.shape != rec.samples.shape:
        raise RuntimeError(f"ICA hook changed the signal shape {rec.samples.shape} -> {out.samples.shape}")
    return rec.with_samples(out.samples)


def preprocess_recording(rec: Recording, cfg: PreprocessConfig = PreprocessConfig()) -> Recording:
    """Bandpass, then notch, then average reference, then the optional external hook."""
    cfg.validate(rec.fs)
    stages = []
    if cfg.apply_bandpass:
        stages.append(design_bandpass(rec.fs, cfg.band_low_hz, cfg.band_high_hz, cfg.band_order))
    if cfg.apply_notch:
        stages.append(design_notch(rec.fs, cfg.notch_hz, cfg.notch_q))
    samples = rec.samples
    if stages:
        cascade = BiquadCascade(sum((c.sections for c in stages), ()), " + ".join(c.description for c in stages))
        samples = apply_filter(samples, cascade)
    out = rec.with_samples(samples)
    if cfg.apply_average_reference:
        out = average_reference(out)
    if cfg.ica_hook:
        out = run_ica_hook(out, cfg.ica_hook)
    return out
