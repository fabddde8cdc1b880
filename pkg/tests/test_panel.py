from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from dynpanel.errors import DataError, InputOutputError
from dynpanel.panel import conform, forward_fill, load_panel, panel_from_frame, write_panel


def test_grid_completion_inserts_missing_rows():
    df = pd.DataFrame({"id": [1, 1, 2], "time": [1, 2, 2], "y": [0.5, 1.5, 2.5]})
    d = panel_from_frame(df, "time", "id")
    assert (d.N, d.T) == (2, 2)
    g = d.grid("y")
    assert g[0].tolist() == [0.5, 1.5]
    assert np.isnan(g[1, 0]) and g[1, 1] == 2.5


def test_rows_sorted_by_group_then_time():
    df = pd.DataFrame({"id": [2, 1, 2, 1], "time": [2, 2, 1, 1], "y": [4.0, 2.0, 3.0, 1.0]})
    d = panel_from_frame(df, "time", "id")
    assert d.grid("y").tolist() == [[1.0, 2.0], [3.0, 4.0]]


def test_duplicate_rows_rejected():
    df = pd.DataFrame({"id": [1, 1], "time": [1, 1], "y": [0.0, 1.0]})
    with pytest.raises(DataError, match="duplicate"):
        panel_from_frame(df, "time", "id")


def test_missing_time_rejected():
    df = pd.DataFrame({"id": [1, 1], "time": [1, np.nan], "y": [0.0, 1.0]})
    with pytest.raises(DataError, match="missing"):
        panel_from_frame(df, "time", "id")


def test_missing_columns():
    df = pd.DataFrame({"id": [1], "time": [1]})
    with pytest.raises(DataError, match="time column"):
        panel_from_frame(df, "t", "id")
    with pytest.raises(DataError, match="group column"):
        panel_from_frame(df, "time", "g")


def test_nonconsecutive_times_warn_and_reindex():
    df = pd.DataFrame({"time": [2, 4, 8], "y": [1.0, 2.0, 3.0]})
    with pytest.warns(UserWarning, match="re-indexing"):
        d = panel_from_frame(df, "time")
    assert d.times.tolist() == [1.0, 2.0, 3.0]


def test_single_series_without_group():
    d = panel_from_frame(pd.DataFrame({"time": [1, 2, 3], "y": [1.0, 2.0, 3.0]}), "time")
    assert d.N == 1 and d.group_labels() == ["1"]


def test_numeric_group_labels_prefixed():
    d = panel_from_frame(pd.DataFrame({"id": [38, 7], "time": [1, 1], "y": [0.0, 1.0]}), "time", "id")
    assert d.group_labels() == ["id7", "id38"]
    s = panel_from_frame(pd.DataFrame({"g": ["a", "b"], "time": [1, 1], "y": [0.0, 1.0]}), "time", "g")
    assert s.group_labels() == ["a", "b"]


def test_csv_type_detection(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("id,time,i,x,b,c\n1,1,3,0.5,TRUE,a\n1,2,NA,1.5,FALSE,b\n2,1,4,,true,\n2,2,5,2,false,a\n")
    d = load_panel(p, "time", "id")
    assert d.kinds == {"i": "integer", "x": "numeric", "b": "boolean", "c": "categorical"}
    assert d.levels["c"] == ["a", "b"]
    assert np.isnan(d.grid("i")[0, 1])
    assert d.grid("b").tolist() == [[1.0, 0.0], [1.0, 0.0]]
    assert np.isnan(d.grid("c")[1, 0])


def test_csv_round_trip(tmp_path, frame):
    d = panel_from_frame(frame, "time", "id")
    p = tmp_path / "out.csv"
    write_panel(d, p)
    e = load_panel(p, "time", "id")
    for v in ("z", "x", "c", "k"):
        np.testing.assert_array_equal(d.grid(v), e.grid(v))
    assert e.levels["k"] == d.levels["k"]


def test_list_columns_rejected(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text('time,y\n1,"[1, 2]"\n')
    with pytest.raises(DataError, match="list"):
        load_panel(p, "time")


def test_missing_file():
    with pytest.raises(InputOutputError):
        load_panel("/nonexistent/file.csv", "time")


def test_conform_rejects_unknown_levels_and_out_of_range_times(frame):
    d = panel_from_frame(frame, "time", "id")
    bad = frame.copy()
    bad.loc[0, "k"] = "Z"
    with pytest.raises(DataError, match="levels"):
        conform(bad, d)
    late = frame.copy()
    late["time"] = late["time"] + 100
    with pytest.raises(DataError, match="outside the fitted range"):
        conform(late, d)


def test_forward_fill():
    g = np.array([[np.nan, 1.0, np.nan, 3.0, np.nan], [2.0, np.nan, np.nan, np.nan, 5.0]])
    out = forward_fill(g)
    assert np.isnan(out[0, 0])
    assert out[0, 1:].tolist() == [1.0, 1.0, 3.0, 3.0]
    assert out[1].tolist() == [2.0, 2.0, 2.0, 2.0, 5.0]
