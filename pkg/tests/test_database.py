import database

SUMMARY = {
    "variant": "exact",
    "steps": 10,
    "max_step_time_us": 812.5,
    "median_step_time_us": 301.0,
    "average_retained_percent": 7.5,
    "violations": 0,
    "infeasible_steps": 0,
    "halted": False,
}


def test_record_and_read_runs(db_manager):
    assert db_manager.record_run("cfg", "prob", 330, 12, SUMMARY)
    assert db_manager.record_run("cfg", "prob", 330, 12, dict(SUMMARY, variant="full"))
    runs = db_manager.recent_runs()
    assert [r["variant"] for r in runs] == ["full", "exact"]
    assert runs[1]["average_retained_percent"] == 7.5
    assert runs[0]["created_at"] is not None
    assert len(db_manager.recent_runs(limit=1)) == 1


def test_sweep_points(db_manager):
    point = {"n_v": 30, "variant": "full", "total_constraints": 700, "max_step_time_us": 120.0, "error": ""}
    assert db_manager.record_sweep_point("cfg", point)
    failed = dict(point, variant="exact", error="InfeasibleError: " + "x" * 600)
    assert db_manager.record_sweep_point("cfg", failed)
    rows = db_manager.recent_sweep_points()
    assert rows[1]["error"] is None
    assert rows[0]["error"].startswith("InfeasibleError") and len(rows[0]["error"]) == 500


def test_failed_insert_is_rolled_back(db_manager):
    point = {"n_v": 30, "variant": "full", "total_constraints": None}
    assert not db_manager.record_sweep_point("cfg", point)
    assert db_manager.recent_sweep_points() == []


def test_verify_runs_store_one_row_per_suite(db_manager):
    suites = [
        {"name": "exactness", "passed": 98, "failed": 0, "skipped": 2},
        {"name": "geometry", "passed": 1000, "failed": 1, "skipped": 0},
    ]
    assert db_manager.record_verify(0, 100, suites)
    rows = db_manager.recent_verify_runs()
    assert {r["suite"] for r in rows} == {"exactness", "geometry"}
    assert all(r["cases"] == 100 for r in rows)


def test_managers_are_cached_per_url(registry_url):
    first = database.get_db_manager()
    assert first is database.get_db_manager(registry_url)
    assert first is not database.get_db_manager("sqlite:///:memory:")
