"""
Swapping the soundtrack
=======================

Zorro's promise is that the video output never hears the audio. We check
it the blunt way: run a randomly initialised model twice with the same
video and two different soundtracks, and compare.
"""

import numpy as np

from zorro import tensor as T
from zorro.models import ZorroConfig, forward, init_params
from zorro.rng import Rng

rng = Rng(0, ("demo",))
for arch in ("vit", "swin", "hip"):
    for kind in ("zorro", "bottleneck") if arch == "vit" else ("zorro",):
        cfg = ZorroConfig.toy(arch).with_mask(kind)
        params = init_params(cfg, rng.split(arch, kind))
        video = rng.split("video").normal((2,) + cfg.video_shape)
        audio1 = rng.split("audio1").normal((2,) + cfg.audio_shape)
        audio2 = rng.split("audio2").normal((2,) + cfg.audio_shape)
        a = forward(params, video, audio1, cfg).o_v.data
        b = forward(params, video, audio2, cfg).o_v.data
        print(f"{arch:4s} {kind:10s} max |o_v(audio1) - o_v(audio2)| = {np.max(np.abs(a - b)):.3e}")

# %%
# Zero is exact, not merely small: masked logits become -inf before the
# softmax, so their weights are exactly 0.0. The gradient agrees.

cfg = ZorroConfig.toy("vit")
params = init_params(cfg, Rng(1))
video = T.Tensor(Rng(2).normal((2,) + cfg.video_shape), requires_grad=True)
audio = Rng(3).normal((2,) + cfg.audio_shape)
(g,) = T.grad(T.tsum(forward(params, video, audio, cfg).o_a), [video])
print("\nlargest |d sum(o_a) / d video|:", np.max(np.abs(g)))
