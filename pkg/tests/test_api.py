from factories import make_scenario


def _scenario(**kwargs) -> dict:
    return make_scenario(**kwargs).model_dump(mode="json")


def test_health(client):
    assert client.get("/health").json() == {"ok": True}


def test_create_and_fetch_run(client):
    r = client.post("/runs", json={"scenario": _scenario(mode="dmr", dim=4)})
    assert r.status_code == 201, r.text
    body = r.json()
    assert body["result_correct"] is True
    assert body["mode"] == "dmr"
    assert body["report"]["calibrated"] is False

    got = client.get(f"/runs/{body['id']}")
    assert got.status_code == 200
    assert got.json()["result_digest"] == body["result_digest"]
    assert [run["id"] for run in client.get("/runs").json()] == [body["id"]]


def test_calibrated_run_uses_stored_table(client):
    entries = client.get("/calibration", params={"section": "tcls_sw"}).json()
    unload = next(e for e in entries if e["phase"] == "unload")
    assert client.put(f"/calibration/{unload['id']}", json={"cycles": 200}).status_code == 200

    scenario = _scenario(
        mode="tmr",
        dim=4,
        faults=[{"cycle": 120, "core": 2, "kind": "set", "location": "interface", "field": "ifetch_addr", "bit": 2}],
    )
    r = client.post("/runs", json={"scenario": scenario, "calibrated": True})
    assert r.status_code == 201, r.text
    [trace] = r.json()["report"]["recovery_traces"]
    assert trace["total"] == 200 + 116


def test_unknown_run(client):
    r = client.get("/runs/999")
    assert r.status_code == 404
    assert r.json()["detail"] == "Run not found"


def test_invalid_scenario_is_rejected(client):
    r = client.post("/runs", json={"scenario": {"cluster": {"n_cores": 4, "boot_mode": "tmr"}}})
    assert r.status_code == 422
    r = client.post("/runs", json={"scenario": {"cluster": {"n_cores": 4, "spare": 1}}})
    assert r.status_code == 422


def test_simulator_error_maps_to_bad_request(client):
    scenario = _scenario(dim=64)
    scenario["cluster"]["tcdm_size"] = 16 * 1024
    r = client.post("/runs", json={"scenario": scenario})
    assert r.status_code == 400
    assert "does not fit" in r.json()["detail"]


def test_run_without_workload_is_a_bad_request(client):
    r = client.post("/runs", json={"scenario": {"cluster": {"n_cores": 6, "boot_mode": "dmr"}}})
    assert r.status_code == 400
    assert "workload" in r.json()["detail"]


def test_landmarks(client):
    body = client.get("/models/landmarks", params={"workload": "matmul"}).json()
    assert round(body["nominal_mops"]["independent"]) == 1165
    assert set(body["half_perf_rates"]) == {"dcls_sw", "dcls_rapid", "tcls_sw", "tcls_rapid"}
    assert client.get("/models/landmarks", params={"workload": "fir"}).status_code == 422


def test_curves(client):
    body = client.get("/models/curves", params={"points": 5, "rate_max": 1e8}).json()
    assert body["columns"][:2] == ["rate", "baseline"]
    assert len(body["rows"]) == 5
    assert body["rows"][0][0] == 0.0
    assert client.get("/models/curves", params={"points": 1}).status_code == 422


def test_calibration_table(client):
    entries = client.get("/calibration").json()
    assert len(entries) == 40
    entry = next(
        e for e in entries
        if (e["section"], e["mode"], e["variant"], e["role"], e["phase"]) == ("mc_entry", "tmr", "sw", "main", "setup")
    )
    assert entry["cycles"] == 87

    deltas = {(d["row"], d["config"]): d["delta"] for d in client.get("/calibration/reference").json()}
    assert deltas[("mc_entry", "tmr")] == -2

    r = client.put(f"/calibration/{entry['id']}", json={"cycles": 89})
    assert r.status_code == 200 and r.json()["cycles"] == 89
    deltas = {(d["row"], d["config"]): d["delta"] for d in client.get("/calibration/reference").json()}
    assert deltas[("mc_entry", "tmr")] == 0


def test_calibration_update_checks(client):
    assert client.put("/calibration/9999", json={"cycles": 1}).status_code == 404
    first = client.get("/calibration").json()[0]
    assert client.put(f"/calibration/{first['id']}", json={"cycles": -1}).status_code == 422


def test_campaign_round_trip(client):
    scenario = _scenario(dim=4, campaign={"runs": 3, "seed": 9, "mode": "tmr_rapid", "target": "rf"})
    r = client.post("/campaigns", json={"scenario": scenario})
    assert r.status_code == 201, r.text
    body = r.json()
    assert body["runs"] == 3
    assert body["masked"] + body["detected_recovered"] + body["sdc"] + body["hang"] == 3
    assert body["sdc"] == 0

    detail = client.get(f"/campaigns/{body['id']}").json()
    assert [rec["run_index"] for rec in detail["records"]] == [0, 1, 2]
    assert detail["report_hash"] == body["report_hash"]
    assert client.get("/campaigns/404").status_code == 404
