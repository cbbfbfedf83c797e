import numpy as np
import pytest

from scfa import GeneratorSpec, PartitionVector, UniformBlockMatrix

# Truth parameters shared by the reference simulation studies.
STUDY_A = np.array([0.1, 0.2, 0.5])
STUDY_B = np.array(
    [
        [2.02, 0.73, 1.15],
        [0.73, 3.13, 1.63],
        [1.15, 1.63, 3.69],
    ]
)
BASE_SIZES = (3, 3, 4)


def study_spec(n, multiplier=1, seed=0, sizes=None, noise=None):
    if sizes is None:
        sizes = tuple(s * multiplier for s in BASE_SIZES)
    return GeneratorSpec(
        n=n, partition=PartitionVector(sizes), a=STUDY_A, b=STUDY_B,
        seed=seed, noise=noise,
    )


def random_partition(rng, max_k=4, min_size=2, max_size=8):
    K = int(rng.integers(1, max_k + 1))
    sizes = rng.integers(min_size, max_size + 1, K)
    return PartitionVector(sizes.tolist())


def random_ub(rng, partition=None, pd=False, scale=1.0):
    """Random UB matrix; with pd=True, a > 0 and b is PD so the matrix is PD."""
    if partition is None:
        partition = random_partition(rng)
    K = partition.K
    max_size = max(partition.sizes)
    if pd:
        a = rng.uniform(0.3, 2.0, K) * scale
        g = rng.standard_normal((K, K))
        b = (g @ g.T) / (K * max_size) * scale + 0.05 * scale * np.eye(K)
    else:
        a = rng.uniform(-2.0, 2.0, K) * scale
        g = rng.standard_normal((K, K))
        b = (g + g.T) / (2.0 * max_size) * scale
    return UniformBlockMatrix(a, b, partition)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
