"""Shared constructors for tests."""
import numpy as np
from scipy.spatial.transform import Rotation

from mprim.skeleton import SkeletonSequence


def random_rotation(rng):
    return Rotation.random(random_state=int(rng.integers(2**31))).as_matrix()


def identity_sequence(n=2, rate=50.0):
    return SkeletonSequence.from_matrices(np.broadcast_to(np.eye(3), (n, 18, 3, 3)), np.zeros((n, 18, 3)), rate, "id")


def random_rigid_sequence(rng, n=4, rate=50.0):
    R = Rotation.random(n * 18, random_state=int(rng.integers(2**31))).as_matrix().reshape(n, 18, 3, 3)
    T = rng.normal(size=(n, 18, 3))
    return SkeletonSequence.from_matrices(R, T, rate, "rand")
