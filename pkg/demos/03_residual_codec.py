"""
Key frames and residuals
========================

Code one frame on its own and the same frame against a close prediction.
Sweep the rate factor and see how much a good reference saves.
"""

import numpy as np

from rfcodec.codec import LOSSLESS, CodecConfig, compression_savings, decode_delta, decode_key, encode_delta, encode_key, quantize_image
from rfcodec.metrics import psnr

rng = np.random.default_rng(3)
yy, xx = np.mgrid[0:96, 0:160] / 160
frame = quantize_image(np.clip(0.5 + 0.35 * np.sin(9 * xx + 5 * yy)[..., None] * [1, 0.8, 0.6] + rng.normal(0, 0.02, (96, 160, 3)), 0, 1))
prediction = quantize_image(np.clip(frame + rng.normal(0, 0.01, frame.shape), 0, 1))

# %% Rate factor sweep: bytes and fidelity for the key frame and for the residual.
print(" crf   key B   residual B   key PSNR   residual PSNR   savings %")
for crf in (0, 18, 23, 28, 35):
    cfg = LOSSLESS if crf == 0 else CodecConfig(crf)
    key, delta = encode_key(frame, cfg), encode_delta(frame, prediction, cfg)
    kp = psnr(decode_key(key, cfg), frame)
    dp = psnr(decode_delta(delta, prediction, cfg), frame)
    print(f"{crf:4d} {key.size_bytes:7d} {delta.size_bytes:12d} {kp:10.2f} {dp:15.2f} {compression_savings(key.size_bytes, delta.size_bytes):11.2f}")

# %% Presets trade encoder effort for size; the decoded pixels do not change.
for preset in ("veryfast", "medium", "veryslow"):
    cfg = CodecConfig(23, preset)
    d = encode_delta(frame, prediction, cfg)
    print(f"{preset:9s} residual {d.size_bytes} B")

# %% Lossless mode round-trips exactly.
cfg = LOSSLESS
back = decode_delta(encode_delta(frame, prediction, cfg), prediction, cfg)
print("lossless exact:", np.array_equal(np.rint(back * 255), np.rint(frame * 255)))
