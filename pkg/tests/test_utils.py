import math

import numpy as np
import pytest

from dpm_cvqkd import utils


def test_chunk_rng():
    a = utils.chunk_rng(7, 3).standard_normal(5)
    b = utils.chunk_rng(7, 3).standard_normal(5)
    c = utils.chunk_rng(7, 4).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_chunk_sizes():
    assert utils.chunk_sizes(10, 4) == [4, 4, 2]
    assert utils.chunk_sizes(8, 4) == [4, 4]
    assert utils.chunk_sizes(3, 100) == [3]
    with pytest.raises(ValueError):
        utils.chunk_sizes(0, 4)


def test_parallel_map():
    items = list(range(50))
    assert utils.parallel_map(lambda x: x * x, items, workers=1) == [x * x for x in items]
    assert utils.parallel_map(lambda x: x * x, items, workers=4) == [x * x for x in items]
    with pytest.raises(ValueError):
        utils.parallel_map(str, items, workers=0)


def test_distance_grid():
    assert utils.distance_grid(0, 0, 0.1) == [0]
    grid = utils.distance_grid(0, 20, 0.1)
    assert len(grid) == 201
    assert grid[-1] == pytest.approx(20)
    assert utils.distance_grid(1, 2, 0.5) == [1, 1.5, 2]
    with pytest.raises(ValueError):
        utils.distance_grid(2, 1, 0.5)
    with pytest.raises(ValueError):
        utils.distance_grid(0, 1, 0)


def test_format_value():
    assert utils.format_value(0.1) == "0.10000000000000001"
    assert utils.format_value(1.0) == "1"
    assert utils.format_value(math.nan) == "nan"
    assert utils.format_value(np.float64(2.5)) == "2.5"
    assert utils.format_value(10**8) == "100000000"
    assert utils.format_value(True) == "true"
    assert utils.format_value("local") == "local"
    assert float(utils.format_value(math.pi)) == math.pi


def test_relative_error():
    assert utils.relative_error(1.03, 1.0) == pytest.approx(0.03)
    assert utils.relative_error(-0.97, -1.0) == pytest.approx(0.03)
    assert math.isnan(utils.relative_error(1.0, 0.0))
