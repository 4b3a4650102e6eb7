"""Continuous motion-latent toolkit.

Submodules:

- ``diffcore``: float64 tensors with reverse-mode autodiff and AdamW
- ``motion_repr``: 269-dim motion representation codec and rotation utilities
- ``synth_data``: procedural motion corpus and synthetic visual feature maps
- ``cma_vae``: cross-modal aligned motion VAE with dual-posterior alignment
- ``backbone``: mixed-modality transformer with hybrid masking and routed LoRA
- ``flow``: flow-matching objective, velocity head, Euler sampler, guidance
- ``lra``: latent-reconstruction self-supervised pre-training
- ``metrics``: reconstruction / generation / spectral evaluation metrics
- ``config`` / ``cli``: run configuration and command-line orchestration
"""

__version__ = "0.1.0"
