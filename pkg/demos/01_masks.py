"""
Four ways to mix two modalities
===============================

A model that reads video and audio tokens side by side decides, through its
attention masks, which tokens may look at which. This walk-through prints
the masks for a tiny layout of two video tokens, two audio tokens and one
fusion token, then follows information through two stacked layers.
"""

from zorro.masking import KINDS, MaskConfig, StreamLayout, build_decoder_mask, build_self_mask, layer_masks, \
    reachability, to_text

layout = StreamLayout(n_video=2, n_audio=2, n_fusion=1)
print("token order: v v a a f  (rows are queries, columns are keys)\n")

for kind in KINDS:
    print(f"--- {kind} ---")
    print(to_text(build_self_mask(layout, MaskConfig(kind))))
    print()

# %%
# Zorro keeps the unimodal rows block-diagonal and lets the fusion row read
# everything. Bottleneck differs in one column: unimodal tokens may also
# read the fusion token. One layer later that column has become a back door.

for kind in ("zorro", "bottleneck"):
    reach = reachability(layer_masks(layout, MaskConfig(kind), 2))
    print(f"{kind}: can video token 0 be influenced by audio token 2 after two layers? {bool(reach[0, 2])}")

# %%
# Outputs are read by four learned queries. Each one gets its own row.

print("\ndecoder rows (video, audio, fusion, global):")
print(to_text(build_decoder_mask(layout, MaskConfig("zorro"))))
