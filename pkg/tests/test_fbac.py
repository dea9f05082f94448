"""
Tests for the feedback-aware completion block
"""

import pytest
import torch
from torch.func import functional_call

from config.config import FbacConfig
from src.exceptions import ArgumentError
from src.fbac import FBACBlock, FeedbackState, fbac_forward
from src.fbnet import count_parameters
from src.geometry import duplicate


def make_block(r=2, channels=16, k=6, seed=0, live_head=True):
    torch.manual_seed(seed)
    block = FBACBlock(FbacConfig(r=r, channels=channels, k=k)).double()
    if live_head:
        with torch.no_grad():
            block.head.last_linear.weight.normal_(std=0.1)
            block.head.last_linear.bias.normal_(std=0.1)
    return block


@pytest.mark.parametrize("r,expected", [(1, 108803), (2, 125315), (16, 356483)])
def test_parameter_count(r, expected):
    assert count_parameters(FBACBlock(FbacConfig(r=r))) == expected


def test_untrained_block_duplicates_points(generator):
    block = make_block(r=4, live_head=False)
    p_in = torch.rand(2, 20, 3, generator=generator, dtype=torch.float64)
    p_out, state = block(p_in)
    assert torch.equal(p_out, duplicate(p_in, 4))
    assert state.features.shape == (2, 80, 16)


def test_output_and_state_shapes(generator):
    block = make_block(r=2)
    p_in = torch.rand(3, 24, 3, generator=generator, dtype=torch.float64)
    p_out, state = block(p_in)
    assert p_out.shape == (3, 48, 3)
    assert torch.equal(state.points, p_out)
    assert state.channels == 16


def test_feedback_changes_the_output(generator):
    block = make_block(r=2)
    p_in = torch.rand(1, 24, 3, generator=generator, dtype=torch.float64)
    first, state = fbac_forward(p_in, None, block)
    again, _ = fbac_forward(p_in, state, block)
    assert first.shape == again.shape
    assert not torch.allclose(first, again)


def test_feedback_of_another_size_is_accepted(generator):
    # a block's previous output is r times larger than its input
    block = make_block(r=2)
    p_in = torch.rand(1, 24, 3, generator=generator, dtype=torch.float64)
    feedback = FeedbackState(
        points=torch.rand(1, 48, 3, generator=generator, dtype=torch.float64),
        features=torch.randn(1, 48, 16, generator=generator, dtype=torch.float64),
    )
    p_out, _ = block(p_in, feedback)
    assert p_out.shape == (1, 48, 3)


def test_feedback_channel_mismatch_rejected(generator):
    block = make_block(r=1)
    p_in = torch.rand(1, 24, 3, generator=generator, dtype=torch.float64)
    feedback = FeedbackState(points=p_in, features=torch.zeros(1, 24, 8, dtype=torch.float64))
    with pytest.raises(ArgumentError):
        block(p_in, feedback)


def test_misaligned_state_rejected():
    with pytest.raises(ArgumentError):
        FeedbackState(points=torch.zeros(1, 10, 3), features=torch.zeros(1, 12, 16))


def test_rejects_input_smaller_than_k():
    with pytest.raises(ArgumentError):
        make_block(k=6)(torch.zeros(1, 5, 3, dtype=torch.float64))


def test_gradcheck_through_feedback(generator):
    block = make_block(r=2, channels=4, k=3)
    p_in = torch.rand(1, 8, 3, generator=generator, dtype=torch.float64)
    _, state = block(p_in)
    features = state.features.detach().clone().requires_grad_(True)

    def run(f):
        return block(p_in, FeedbackState(points=state.points.detach(), features=f))[0]

    assert torch.autograd.gradcheck(run, (features,))


def test_gradcheck_parameters_and_inputs(generator):
    torch.manual_seed(0)
    block = FBACBlock(FbacConfig(r=2, channels=4, k=3, head_hidden=6)).double()
    with torch.no_grad():
        block.head.last_linear.weight.normal_(std=0.5)
    p_in = torch.rand(1, 8, 3, generator=generator, dtype=torch.float64)
    _, state = block(p_in)
    names = [name for name, _ in block.named_parameters()]
    params = [p.detach().clone().requires_grad_(True) for p in block.parameters()]

    def run(points, features, *values):
        feedback = FeedbackState(points=state.points.detach(), features=features)
        return functional_call(block, dict(zip(names, values)), (points, feedback))[0]

    inputs = (p_in.clone().requires_grad_(True), state.features.detach().clone().requires_grad_(True))
    assert torch.autograd.gradcheck(run, (*inputs, *params))
