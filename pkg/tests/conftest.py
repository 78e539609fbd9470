import pytest
import torch

from varigan.synthesis import Generator, GeneratorSpec, refactor


def seeded_randn(*shape, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=g)


@pytest.fixture(scope="session")
def desk_generator():
    return Generator(GeneratorSpec.desk(256), seed=7)


@pytest.fixture(scope="session")
def desk_gex(desk_generator):
    return refactor(desk_generator)
