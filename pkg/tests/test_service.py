"""Judging service: session protocol, journal durability, HTTP surface."""

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from stedq import data, study
from stedq.errors import (DuplicateJudgmentError, OutOfOrderError,
                          SessionClosedError, StudyError, UnknownDatasetError)
from stedq.service import (DatasetItem, SessionStore, create_app,
                           load_study_dataset, report_to_json, save_study_dataset)


@pytest.fixture
def store_dir(tmp_path):
    """A data dir with one 6-item dataset of flat gray images."""
    dataset_dir = tmp_path / "datasets" / "demo"
    image_dir = dataset_dir / "images"
    image_dir.mkdir(parents=True)
    rng = np.random.default_rng(0)
    items = []
    for i in range(6):
        path = image_dir / f"item{i}.pgm"
        data.write_pgm(path, rng.uniform(size=(8, 8)))
        target = round(float(rng.uniform()), 6)
        prediction = round(float(np.clip(target + rng.normal(scale=0.1), 0, 1)), 6)
        items.append(DatasetItem(f"item{i}", path, target, prediction))
    save_study_dataset(dataset_dir, items)
    return tmp_path


def _judge_all(store, session, choice="left"):
    while True:
        view = store.next_item(session.session_id)
        if view["done"]:
            return
        store.submit_judgment(session.session_id, view["item_id"], choice)


class TestStudyDatasetFiles:
    def test_round_trip(self, store_dir):
        items = load_study_dataset(store_dir / "datasets" / "demo")
        assert len(items) == 6
        assert items[0].item_id == "item0"
        assert items[0].image_path.exists()


class TestSessionProtocol:
    def test_same_seed_same_order_and_blinds(self, store_dir):
        store = SessionStore(store_dir)
        a = store.create_session("alice", "demo", seed=5)
        b = store.create_session("bob", "demo", seed=5)
        assert a.order == b.order
        assert a.blind == b.blind

    def test_different_seeds_differ(self, store_dir):
        store = SessionStore(store_dir)
        orders = {tuple(store.create_session("t", "demo", seed=s).order) for s in range(20)}
        assert len(orders) > 1

    def test_unknown_dataset(self, store_dir):
        store = SessionStore(store_dir)
        with pytest.raises(UnknownDatasetError):
            store.create_session("alice", "ghost", seed=0)

    def test_empty_dataset_completes_immediately(self, store_dir):
        save_study_dataset(store_dir / "datasets" / "empty", [])
        store = SessionStore(store_dir)
        s = store.create_session("alice", "empty", seed=0)
        assert s.status == "complete"
        assert store.next_item(s.session_id) == {"done": True, "judged": 0, "total": 0}

    def test_next_is_idempotent(self, store_dir):
        store = SessionStore(store_dir)
        s = store.create_session("alice", "demo", seed=1)
        first = store.next_item(s.session_id)
        second = store.next_item(s.session_id)
        assert first == second
        assert not first["done"]
        assert first["judged"] == 0 and first["total"] == 6

    def test_view_shows_score_pair_per_blind_order(self, store_dir):
        store = SessionStore(store_dir)
        s = store.create_session("alice", "demo", seed=2)
        view = store.next_item(s.session_id)
        item = store.study_item(s, view["item_id"])
        assert {view["left_score"], view["right_score"]} == {item.target, item.prediction}
        shown_left = item.prediction if item.blind_order == "left" else item.target
        assert view["left_score"] == shown_left

    def test_judging_advances_and_completes(self, store_dir):
        store = SessionStore(store_dir)
        s = store.create_session("alice", "demo", seed=3)
        _judge_all(store, s)
        assert s.complete
        done = store.next_item(s.session_id)
        assert done == {"done": True, "judged": 6, "total": 6}

    def test_out_of_order_rejected_without_state_change(self, store_dir):
        store = SessionStore(store_dir)
        s = store.create_session("alice", "demo", seed=4)
        wrong = s.order[2]
        with pytest.raises(OutOfOrderError):
            store.submit_judgment(s.session_id, wrong, "left")
        assert s.cursor == 0

    def test_duplicate_rejected_without_state_change(self, store_dir):
        store = SessionStore(store_dir)
        s = store.create_session("alice", "demo", seed=5)
        first = s.order[0]
        store.submit_judgment(s.session_id, first, "equivalent")
        with pytest.raises(DuplicateJudgmentError):
            store.submit_judgment(s.session_id, first, "equivalent")
        assert s.cursor == 1

    def test_closed_session_rejects_judgments(self, store_dir):
        store = SessionStore(store_dir)
        s = store.create_session("alice", "demo", seed=6)
        _judge_all(store, s)
        with pytest.raises(SessionClosedError):
            store.submit_judgment(s.session_id, s.order[0], "left")

    def test_blind_resolution_recorded(self, store_dir):
        store = SessionStore(store_dir)
        s = store.create_session("alice", "demo", seed=7)
        item_id = s.order[0]
        store.submit_judgment(s.session_id, item_id, "left")
        j = s.judgments[0]
        expected = "prediction" if s.blind[item_id] == "left" else "target"
        assert j.resolved == expected


class TestJournal:
    def test_crash_and_reload_preserves_judgment_exactly_once(self, store_dir):
        store = SessionStore(store_dir)
        s = store.create_session("alice", "demo", seed=8)
        store.submit_judgment(s.session_id, s.order[0], "right")
        # simulate a crash: a brand-new store over the same directory
        reloaded = SessionStore(store_dir)
        s2 = reloaded.get_session(s.session_id)
        assert len(s2.judgments) == 1
        assert s2.judgments[0].item_id == s.order[0]
        assert s2.cursor == 1
        assert s2.order == s.order
        assert s2.blind == s.blind

    def test_replay_reconstructs_full_session(self, store_dir):
        store = SessionStore(store_dir)
        s = store.create_session("alice", "demo", seed=9)
        _judge_all(store, s, choice="equivalent")
        reloaded = SessionStore(store_dir)
        s2 = reloaded.get_session(s.session_id)
        assert s2.complete
        assert [j.resolved for j in s2.judgments] == [j.resolved for j in s.judgments]

    def test_journal_lines_reresolve_consistently(self, store_dir):
        store = SessionStore(store_dir)
        s = store.create_session("alice", "demo", seed=10)
        _judge_all(store, s, choice="left")
        journal = store_dir / "journals" / f"{s.session_id}.jsonl"
        records = [json.loads(line) for line in journal.read_text().splitlines()]
        header = records[0]
        for record in records[1:]:
            assert record["resolved"] == study.resolve_choice(
                record["raw"], header["blind"][record["item_id"]])


class TestResults:
    def test_results_equal_offline_computation(self, store_dir):
        store = SessionStore(store_dir)
        for tester, seed, choice in (("a", 1, "left"), ("b", 2, "equivalent")):
            s = store.create_session(tester, "demo", seed=seed)
            _judge_all(store, s, choice=choice)
        report = store.results("demo")
        targets = {i: it.target for i, it in store.datasets["demo"].items()}
        offline = study.binned_report(store.judgments_by_tester("demo"), targets)
        assert report_to_json(report) == report_to_json(offline)

    def test_in_progress_sessions_excluded(self, store_dir):
        store = SessionStore(store_dir)
        s1 = store.create_session("a", "demo", seed=1)
        _judge_all(store, s1)
        s2 = store.create_session("b", "demo", seed=2)
        store.submit_judgment(s2.session_id, s2.order[0], "left")
        report = store.results("demo")
        testers = {t for stats in [report.per_tester_tallies] for t in stats}
        assert testers == {"a"}

    def test_no_sessions_is_an_error(self, store_dir):
        store = SessionStore(store_dir)
        with pytest.raises(StudyError):
            store.results("demo")


class TestHttpApi:
    @pytest.fixture
    def client(self, store_dir):
        store = SessionStore(store_dir)
        return TestClient(create_app(store), raise_server_exceptions=False)

    def _create(self, client, tester="alice", seed=0):
        resp = client.post("/sessions", json={"tester_id": tester,
                                              "dataset_id": "demo", "seed": seed})
        assert resp.status_code == 200
        return resp.json()

    def test_full_session_over_http(self, client):
        session = self._create(client)
        sid = session["session_id"]
        judged = 0
        while True:
            view = client.get(f"/sessions/{sid}/next").json()
            if view["done"]:
                break
            resp = client.post(f"/sessions/{sid}/judgments",
                               json={"item_id": view["item_id"], "choice": "left"})
            assert resp.status_code == 200
            judged += 1
        assert judged == 6

    def test_error_codes_on_the_wire(self, client):
        session = self._create(client)
        sid = session["session_id"]
        view = client.get(f"/sessions/{sid}/next").json()

        resp = client.post(f"/sessions/{sid}/judgments",
                           json={"item_id": "item-nonexistent", "choice": "left"})
        assert resp.status_code == 404
        assert resp.json()["error"]["code"] == "unknown_item"

        client.post(f"/sessions/{sid}/judgments",
                    json={"item_id": view["item_id"], "choice": "left"})
        resp = client.post(f"/sessions/{sid}/judgments",
                           json={"item_id": view["item_id"], "choice": "left"})
        assert resp.status_code == 409
        assert resp.json()["error"]["code"] == "duplicate"

        resp = client.get("/sessions/nope/next")
        assert resp.status_code == 404
        assert resp.json()["error"]["code"] == "unknown_session"

        resp = client.post(f"/sessions/{sid}/judgments",
                           json={"item_id": view["item_id"], "choice": "maybe"})
        assert resp.status_code in (400, 409)

    def test_results_endpoint(self, client):
        session = self._create(client, tester="bob", seed=3)
        sid = session["session_id"]
        while True:
            view = client.get(f"/sessions/{sid}/next").json()
            if view["done"]:
                break
            client.post(f"/sessions/{sid}/judgments",
                        json={"item_id": view["item_id"], "choice": "equivalent"})
        resp = client.get("/datasets/demo/results")
        assert resp.status_code == 200
        body = resp.json()
        assert len(body["bins"]) == 5
        occupied = [b for b in body["bins"] if b["n_testers_confusion"] > 0]
        assert occupied, "at least one bin should have data"
        for b in occupied:
            assert b["mean_confusion"] == pytest.approx(1.0)  # all equivalent

    def test_image_endpoint_serves_png(self, client):
        resp = client.get("/items/item0/image")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        assert resp.content[:8] == b"\x89PNG\r\n\x1a\n"

    def test_unknown_dataset_results(self, client):
        resp = client.get("/datasets/ghost/results")
        assert resp.status_code == 404

    def test_static_ui_served_behind_api_routes(self, store_dir, tmp_path):
        ui = tmp_path / "dist"
        ui.mkdir()
        (ui / "index.html").write_text("<html><body>judge</body></html>")
        store = SessionStore(store_dir)
        client = TestClient(create_app(store, ui_dir=ui), raise_server_exceptions=False)
        page = client.get("/")
        assert page.status_code == 200
        assert "judge" in page.text
        # API routes still win over the static mount
        resp = client.post("/sessions", json={"tester_id": "a",
                                              "dataset_id": "demo", "seed": 0})
        assert resp.status_code == 200
