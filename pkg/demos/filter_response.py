"""Print the magnitude response of the default bandpass and notch filters.

Run with ``python demos/filter_response.py``.
"""
import numpy as np

from eegrisk.preprocess import design_bandpass, design_notch


def response_db(cascade, freqs, fs):
    z = np.exp(1j * 2 * np.pi * np.asarray(freqs) / fs)
    h = np.ones_like(z)
    for b0, b1, b2, _, a1, a2 in cascade.sos:
        h *= (b0 + b1 / z + b2 / z**2) / (1 + a1 / z + a2 / z**2)
    with np.errstate(divide="ignore"):
        return 20 * np.log10(np.abs(h))


def main():
    fs = 256.0
    bandpass = design_bandpass(fs, 0.5, 100.0, 4)
    notch = design_notch(fs, 50.0, 25.0)
    print(bandpass.description)
    print(notch.description)
    print(f"{'Hz':>8} {'bandpass dB':>12} {'notch dB':>10}")
    freqs = [0.1, 0.25, 0.5, 1, 2, 10, 45, 49, 50, 51, 55, 100, 110, 127]
    for f, b, n in zip(freqs, response_db(bandpass, freqs, fs), response_db(notch, freqs, fs)):
        print(f"{f:8g} {b:12.3f} {n:10.3f}")


if __name__ == "__main__":
    main()
