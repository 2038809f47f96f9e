import hashlib
import io
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metaroute import edgenet, policy
from metaroute.evalbench import Report
from metaroute.io import (
    DatasetError,
    FormatError,
    format_cvrplib,
    format_tsplib,
    load_params,
    normalize,
    parse_cvrplib,
    parse_tsplib,
    read_dataset,
    read_report,
    read_tsplib,
    save_params,
    write_dataset,
    write_report,
)
from metaroute.io.reports import stable_json
from metaroute.oracles import held_karp
from metaroute.params import Architecture
from metaroute.solutions import solution_cost
from metaroute.taskgen import CVRP, TSP, Instance, TaskSpec, generate_dataset

DATA = Path(__file__).parent / "data" / "tsplib"

TRIANGLE = """NAME : tri
TYPE : TSP
DIMENSION : 3
EDGE_WEIGHT_TYPE : EUC_2D
NODE_COORD_SECTION
1 0.5 1.25
2 3 4
3 -2.75 1e3
EOF
"""

FOUR_CUSTOMERS = """NAME : four
TYPE : CVRP
DIMENSION : 5
EDGE_WEIGHT_TYPE : EUC_2D
CAPACITY : 15
NODE_COORD_SECTION
1 50 50
2 10 20
3 80 30
4 60 90
5 20 70
DEMAND_SECTION
1 0
2 4
3 7
4 9
5 2
DEPOT_SECTION
1
-1
EOF
"""


def test_triangle_fixture():
    inst = parse_tsplib(TRIANGLE)
    assert inst.n == 3 and inst.name == "tri"
    np.testing.assert_array_equal(inst.coords, [[0.5, 1.25], [3.0, 4.0], [-2.75, 1000.0]])


def test_accepts_stream_and_eof_less_document():
    assert parse_tsplib(io.StringIO(TRIANGLE.replace("EOF\n", ""))).n == 3


def test_real_file_header_matches():
    # eil51: DIMENSION 51, first row "1 37 52"
    inst = read_tsplib(DATA / "eil51.tsp")
    assert inst.n == 51 and tuple(inst.coords[0]) == (37.0, 52.0)


def test_explicit_weights_rejected():
    with pytest.raises(FormatError, match="EXPLICIT"):
        read_tsplib(DATA / "gr17.tsp")
    with pytest.raises(FormatError, match="EXPLICIT"):
        parse_tsplib(TRIANGLE.replace("EUC_2D", "EXPLICIT"))


def test_dimension_mismatch():
    with pytest.raises(FormatError, match="DIMENSION is 4 but 3"):
        parse_tsplib(TRIANGLE.replace("DIMENSION : 3", "DIMENSION : 4"))


def test_malformed_line_reports_line_number():
    with pytest.raises(FormatError, match="line 7"):
        parse_tsplib(TRIANGLE.replace("2 3 4", "2 3 four"))
    with pytest.raises(FormatError, match="line 8"):
        parse_tsplib(TRIANGLE.replace("3 -2.75 1e3", "3 -2.75"))


def test_out_of_range_and_duplicate_nodes():
    with pytest.raises(FormatError, match="outside 1..3"):
        parse_tsplib(TRIANGLE.replace("3 -2.75", "4 -2.75"))
    with pytest.raises(FormatError, match="duplicate node 2"):
        parse_tsplib(TRIANGLE.replace("3 -2.75", "2 -2.75"))


def test_normalize_divides_by_extent():
    inst = parse_tsplib(TRIANGLE)
    out, extent, lo = normalize(inst)
    assert extent == pytest.approx(1000.0 - 1.25)
    assert out.coords.min() == 0.0 and out.coords.max() == 1.0
    np.testing.assert_allclose(out.coords * extent + lo, inst.coords, atol=1e-12)
    tour = held_karp(inst)[0]
    assert solution_cost(out, tour) * extent == pytest.approx(solution_cost(inst, tour), rel=1e-12)


def test_tsplib_print_parse_round_trip(tsp10):
    for inst in tsp10:
        assert np.array_equal(parse_tsplib(format_tsplib(inst)).coords, inst.coords)


def test_cvrp_fixture():
    inst = parse_cvrplib(FOUR_CUSTOMERS)
    assert inst.problem == CVRP and inst.n == 4 and inst.capacity == 15
    np.testing.assert_array_equal(inst.depot, [50, 50])
    np.testing.assert_array_equal(inst.demands, [4, 7, 9, 2])
    again = parse_cvrplib(format_cvrplib(inst))
    assert again.capacity == 15 and np.array_equal(again.demands, inst.demands)
    assert np.array_equal(again.coords, inst.coords)


def test_cvrp_depot_not_first():
    doc = FOUR_CUSTOMERS.replace("1 0\n2 4", "1 4\n2 0").replace("DEPOT_SECTION\n1\n", "DEPOT_SECTION\n2\n")
    inst = parse_cvrplib(doc)
    np.testing.assert_array_equal(inst.depot, [10, 20])
    np.testing.assert_array_equal(inst.demands, [4, 7, 9, 2])


@pytest.mark.parametrize("drop,msg", [
    ("CAPACITY : 15\n", "missing CAPACITY"),
    ("DEPOT_SECTION\n1\n-1\n", "missing DEPOT_SECTION"),
    ("DEMAND_SECTION\n1 0\n2 4\n3 7\n4 9\n5 2\n", "missing DEMAND_SECTION"),
])
def test_cvrp_missing_parts(drop, msg):
    with pytest.raises(FormatError, match=msg):
        parse_cvrplib(FOUR_CUSTOMERS.replace(drop, ""))


def test_cvrp_depot_demand_must_be_zero():
    with pytest.raises(FormatError, match="depot demand"):
        parse_cvrplib(FOUR_CUSTOMERS.replace("1 0\n2 4", "1 3\n2 4"))


def test_cvrp_rejects_tsp_type():
    with pytest.raises(FormatError, match="unsupported TYPE TSP"):
        parse_cvrplib(TRIANGLE)


def test_dataset_round_trip_is_bit_identical(tmp_path, cvrp6):
    spec = TaskSpec(TSP, n_nodes=7, n_modes=2, cluster_std=0.03, seed=41)
    ds = generate_dataset(spec, 5)
    for items in (ds, cvrp6):
        back = read_dataset(write_dataset(tmp_path / "d.jsonl", items)).instances
        for a, b in zip(items, back):
            assert a.coords.tobytes() == b.coords.tobytes()
            assert a.source_task == b.source_task
            if a.problem == CVRP:
                assert a.depot.tobytes() == b.depot.tobytes()
                assert np.array_equal(a.demands, b.demands) and a.capacity == b.capacity
    back = read_dataset(write_dataset(tmp_path / "d.jsonl", ds)).instances[0].source_task
    assert back.cluster_std == 0.03 and back.seed == 41


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6)), min_size=1, max_size=6))
def test_arbitrary_coordinates_round_trip(tmp_path_factory, pts):
    inst = Instance(coords=np.array(pts, dtype=np.float64))
    path = tmp_path_factory.mktemp("ds") / "x.jsonl"
    assert read_dataset(write_dataset(path, [inst])).instances[0].coords.tobytes() == inst.coords.tobytes()


def test_solutions_and_labels_survive(tmp_path, tsp10):
    sols = [held_karp(i)[0] for i in tsp10]
    costs = [solution_cost(i, s) for i, s in zip(tsp10, sols)]
    labels = [edgenet.labels_from_tour(s, i.n) for i, s in zip(tsp10, sols)]
    back = read_dataset(write_dataset(tmp_path / "l.jsonl", tsp10, sols, costs, labels, meta={"oracle": "hk"}))
    assert back.meta == {"oracle": "hk"} and back.solutions == sols
    for inst, sol, c in zip(back.instances, back.solutions, back.costs):
        assert solution_cost(inst, sol) == pytest.approx(c, abs=1e-9)
    assert all(np.array_equal(a.s, b.s) for a, (_, b) in zip(labels, back.labeled()))


def test_unlabeled_dataset_has_no_labels(tmp_path, tsp10):
    with pytest.raises(DatasetError, match="no edge labels"):
        read_dataset(write_dataset(tmp_path / "u.jsonl", tsp10)).labeled()


def test_length_mismatch(tmp_path, tsp10):
    with pytest.raises(DatasetError, match="costs length"):
        write_dataset(tmp_path / "m.jsonl", tsp10, costs=[1.0])


def test_truncated_file(tmp_path, tsp10):
    path = write_dataset(tmp_path / "t.jsonl", tsp10)
    raw = path.read_bytes()
    for cut in (len(raw) - 1, len(raw) - 30, len(raw) // 2):
        path.write_bytes(raw[:cut])
        with pytest.raises(DatasetError, match="checksum"):
            read_dataset(path)


def test_tampered_record(tmp_path, tsp10):
    path = write_dataset(tmp_path / "t.jsonl", tsp10)
    lines = path.read_text().splitlines(keepends=True)
    lines[1] = lines[1].replace("0.", "0.9", 1)
    path.write_text("".join(lines))
    with pytest.raises(DatasetError, match="checksum failure"):
        read_dataset(path)


def _rewrite_header(path, **changes):
    lines = path.read_text().splitlines()
    head = json.loads(lines[0])
    head.update(changes)
    body = "\n".join([json.dumps(head, sort_keys=True, separators=(",", ":"))] + lines[1:-1]) + "\n"
    path.write_text(body + json.dumps({"checksum": hashlib.sha256(body.encode()).hexdigest()}) + "\n")


def test_version_mismatch(tmp_path, tsp10):
    path = write_dataset(tmp_path / "v.jsonl", tsp10)
    _rewrite_header(path, version=99)
    with pytest.raises(DatasetError, match="version 99"):
        read_dataset(path)


def test_foreign_file(tmp_path, tsp10):
    path = write_dataset(tmp_path / "f.jsonl", tsp10)
    _rewrite_header(path, format="other")
    with pytest.raises(DatasetError, match="not a dataset"):
        read_dataset(path)


def test_dataset_bytes_are_deterministic(tmp_path):
    a = write_dataset(tmp_path / "a.jsonl", generate_dataset(TaskSpec(TSP, n_nodes=8, seed=2), 4)).read_bytes()
    b = write_dataset(tmp_path / "b.jsonl", generate_dataset(TaskSpec(TSP, n_nodes=8, seed=2), 4)).read_bytes()
    assert a == b


def test_checkpoint_round_trip_and_bytes(tmp_path):
    params = policy.init_params(Architecture(embed_dim=8, n_layers=1), 3)
    p1 = save_params(tmp_path / "a.npz", params, {"note": "x"})
    p2 = save_params(tmp_path / "b.npz", params, {"note": "x"})
    assert p1.read_bytes() == p2.read_bytes()
    back, meta = load_params(p1)
    assert back.equals(params) and back.arch == params.arch and meta == {"note": "x"}


def test_report_files(tmp_path):
    rep = Report("demo", {"seed": 1}, ["model", "gap"], [["a", 0.1], ["b", 1 / 3]],
                 ["model", "i", "gap"], [["a", 0, 0.1], ["b", 0, 1 / 3]])
    paths = write_report(rep, tmp_path)
    assert set(paths) == {"csv", "json", "details"}
    back = read_report(tmp_path, "demo")
    assert back.rows == rep.rows and back.details == rep.details and back.header == {"seed": 1}
    first = (paths["csv"].read_bytes(), stable_json(paths["json"]))
    write_report(rep, tmp_path)
    assert (paths["csv"].read_bytes(), stable_json(paths["json"])) == first
    assert "timestamp" in json.loads(paths["json"].read_text())["volatile"]
