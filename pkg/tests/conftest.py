import logging

import pytest
import torch

# Tiny-tensor workloads are dominated by thread-sync overhead; one thread is
# both faster and keeps op scheduling order fixed.
torch.set_num_threads(1)

logging.getLogger("avemo").setLevel(logging.ERROR)


@pytest.fixture
def tiny_encoder():
    from avemo.conformer import EncoderConfig

    return EncoderConfig(
        d_model=16, ffn_hidden=32, num_heads=2, layers_acoustic=2, layers_visual=2, layers_shared=1
    )


@pytest.fixture
def tiny_model_config(tiny_encoder):
    from avemo.model import ModelConfig

    return ModelConfig(
        encoder=tiny_encoder, num_classes=4, acoustic_dim=12, visual_dim=12, head_hidden=(32, 16)
    )


@pytest.fixture
def paired_dataset():
    from avemo.synth import SynthSpec, generate_synthetic

    spec = SynthSpec(
        num_samples=60, num_speakers=6, num_classes=4, acoustic_dim=12, visual_dim=12, noise_scale=0.3
    )
    return generate_synthetic(spec, seed=11)
