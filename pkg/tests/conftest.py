import os
import sys
import pytest
import torch

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))


@pytest.fixture
def generator():
    g = torch.Generator()
    g.manual_seed(1234)
    return g
