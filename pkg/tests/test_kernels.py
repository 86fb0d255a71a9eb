import numpy as np
import pytest

from res2lab import _pykernels, kernels

pytestmark = pytest.mark.skipif("cython" not in kernels.available(), reason="compiled kernels not built")

GEOMETRIES = [(1, 1, 1, 3), (2, 2, 1, 3), (4, 1, 0, 1), (1, 2, 0, 3), (2, 1, 0, 1), (1, 3, 2, 3)]


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("groups,stride,pad,k", GEOMETRIES)
def test_backends_bit_identical(dtype, groups, stride, pad, k, rng):
    from res2lab import _ckernels

    x = rng.standard_normal((2, 8, 7, 6)).astype(dtype)
    w = rng.standard_normal((8, 8 // groups, k, k)).astype(dtype)
    assert np.array_equal(_ckernels.conv2d_direct(x, w, stride, pad, groups),
                          _pykernels.conv2d_direct(x, w, stride, pad, groups))
    ca, cb = _ckernels.im2col(x, k, stride, pad), _pykernels.im2col(x, k, stride, pad)
    assert np.array_equal(ca, cb)
    assert np.array_equal(_ckernels.col2im(ca, 2, 8, 7, 6, k, stride, pad),
                          _pykernels.col2im(cb, 2, 8, 7, 6, k, stride, pad))


def test_use_backend_restores():
    before = kernels.backend_name()
    with kernels.use_backend("python"):
        assert kernels.backend_name() == "python"
    assert kernels.backend_name() == before


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.set_backend("fortran")


def test_col2im_is_adjoint_of_im2col(rng):
    # <im2col(x), c> == <x, col2im(c)>
    x = rng.standard_normal((2, 3, 5, 5))
    cols = kernels.im2col(x, 3, 2, 1)
    c = rng.standard_normal(cols.shape)
    lhs = float((cols * c).sum())
    rhs = float((x * kernels.col2im(c, 2, 3, 5, 5, 3, 2, 1)).sum())
    assert lhs == pytest.approx(rhs, rel=1e-12)
