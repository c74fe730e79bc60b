import math
import pytest
import tempfile
from pathlib import Path

from ...modules.constants import BENCH_COLUMNS
from ...modules.data_types import BenchCommand, BenchmarkSpec
from ...modules.errors import InvalidArgumentError
from ...modules.file_formats import read_csv
from ...modules.functionality.bench import bench, estimate_memory_gb


@pytest.fixture
def temp_out_dir():
    with tempfile.TemporaryDirectory() as d:
        yield Path(d) / "bench"


def _spec(**overrides):
    return BenchmarkSpec(**{"grids": [[17, 17]], "block_sizes": [1, 2], "nlevels": 2, **overrides})


def test_bench_writes_one_row_per_case(temp_out_dir):
    result = bench(BenchCommand(spec=_spec(), out_dir=temp_out_dir, seed=1))

    assert len(result.rows) == 3 * 2
    assert {(r.method, r.block) for r in result.rows} == {
        (m, b) for m in ("mg_bicgstab", "mg_fgmres_w", "mg_fgmres_k") for b in (1, 2)
    }
    assert all(r.grid == "17x17" for r in result.rows)
    for row in result.rows:
        assert row.setup_s >= 0.0
        if row.converged:
            assert row.cycles_mean > 0 and row.solve_s_per_rhs >= 0.0
        else:
            assert math.isnan(row.cycles_mean)

    rows = read_csv(result.csv_path)
    assert result.csv_path == temp_out_dir / "bench.csv"
    assert list(rows[0]) == BENCH_COLUMNS
    assert len(rows) == 6


def test_bench_3d_grid(temp_out_dir):
    result = bench(BenchCommand(spec=_spec(grids=[[9, 9, 9]], methods=["mg_fgmres_k"], block_sizes=[1]),
                                out_dir=temp_out_dir))
    assert [r.grid for r in result.rows] == ["9x9x9"]


def test_rejects_uncoarsenable_grid(temp_out_dir):
    with pytest.raises(InvalidArgumentError):
        bench(BenchCommand(spec=_spec(grids=[[18, 17]]), out_dir=temp_out_dir))
    assert not temp_out_dir.exists()


def test_memory_cap_is_checked_first(temp_out_dir):
    spec = _spec(grids=[[17, 17], [257, 257]], max_memory_gb=0.01)
    with pytest.raises(InvalidArgumentError) as e:
        bench(BenchCommand(spec=spec, out_dir=temp_out_dir))
    assert "257x257" in str(e.value)
    assert not temp_out_dir.exists()


def test_memory_estimate_grows_with_grid_and_block():
    spec = _spec()
    assert estimate_memory_gb([33, 33], spec) > estimate_memory_gb([17, 17], spec)
    assert estimate_memory_gb([17, 17], _spec(block_sizes=[16])) > estimate_memory_gb([17, 17], spec)
