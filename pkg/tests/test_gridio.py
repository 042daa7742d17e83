import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semispde import gridio
from semispde.calculus import GridFunction
from semispde.mesh import Mesh, MeshSpec


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 3), N=st.integers(2, 5), which=st.sampled_from(["primal", "dual", "dual2", "boundary", "closure"]), seed=st.integers(0, 2**32 - 1))
def test_round_trip_is_bit_exact(n, N, which, seed):
    mesh = Mesh(MeshSpec(n, N))
    rng = np.random.default_rng(seed)
    k = int(rng.integers(n))
    l = int(rng.integers(n))
    pl = {
        "primal": mesh.primal,
        "dual": mesh.dual(k),
        "dual2": mesh.dual2(k, l),
        "boundary": mesh.boundary(k),
        "closure": mesh.closure_placement,
    }[which]
    u = GridFunction(mesh, pl, rng.standard_normal(mesh.shape(pl)))
    v = gridio.loads(gridio.dumps(u))
    assert v.mesh == mesh and v.placement == pl
    assert v.values.tobytes() == u.values.tobytes()


def test_file_round_trip(tmp_path):
    mesh = Mesh(MeshSpec(2, 3))
    u = GridFunction.from_function(mesh, mesh.closure_placement, lambda x: x[0] - 2 * x[1])
    path = gridio.write(tmp_path / "u.psgf", u)
    np.testing.assert_array_equal(gridio.read(path).values, u.values)


def test_header_layout():
    mesh = Mesh(MeshSpec(1, 4))
    data = gridio.dumps(GridFunction.zeros(mesh, mesh.primal))
    assert data[:4] == b"PSGF"
    assert len(data) == 28 + 8 * 4


def test_corrupt_data_rejected():
    mesh = Mesh(MeshSpec(1, 4))
    data = gridio.dumps(GridFunction.zeros(mesh, mesh.primal))
    with pytest.raises(gridio.GridFormatError):
        gridio.loads(b"XXXX" + data[4:])
    with pytest.raises(gridio.GridFormatError):
        gridio.loads(data[:-8])
    with pytest.raises(gridio.GridFormatError):
        gridio.loads(data[:10])
