import json

import numpy as np
import pytest

from pplr.cli import DEFAULT_CONFIG, main, parse_config
from pplr.core import ConfigError


def write_config(tmp_path, content, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(content) if isinstance(content, dict) else content)
    return str(path)


SMALL_EXPERIMENT = {
    "synth": {
        "n_identities": 8,
        "samples_per_identity": 12,
        "dim": 16,
        "n_cameras": 3,
        "cluster_spread": 0.5,
        "occlusion_fraction": 0.1,
        "camera_shift": 0.3,
        "seed": 2,
    },
    "dbscan": {"eps": 0.4},
    "pipeline": {
        "epochs": 2,
        "iters_per_epoch": 3,
        "batch_p": 4,
        "batch_k": 2,
        "proj_dim": 8,
        "k_agreement": 6,
        "seed": 1,
    },
}


class TestParseConfig:
    def test_empty_file_gives_paper_defaults(self, tmp_path):
        cfg = parse_config(write_config(tmp_path, ""))
        assert cfg.refinement.beta == 0.5
        assert cfg.pipeline.k_agreement == 20
        assert cfg.dbscan.eps == 0.6
        assert cfg.dbscan.min_samples == 4
        assert cfg.loss_weights.tau == 0.07
        assert cfg.loss_weights.lambda_cam == 0.5
        assert cfg.loss_weights.n_hard_negatives == 50
        assert cfg.refinement.aals_warmup_epochs == 5
        assert cfg.synth.n_parts == 3

    def test_missing_config_is_all_defaults(self):
        cfg = parse_config(None)
        assert cfg.resolved == DEFAULT_CONFIG

    def test_flag_override_beats_file(self, tmp_path):
        path = write_config(tmp_path, {"refinement": {"beta": 0.5}})
        cfg = parse_config(path, {"refinement.beta": 0.9})
        assert cfg.refinement.beta == 0.9
        assert cfg.resolved["refinement"]["beta"] == 0.9

    def test_constraint_violation_names_key_path(self, tmp_path):
        path = write_config(tmp_path, {"refinement": {"beta": 1.5}})
        with pytest.raises(ConfigError, match="refinement.*beta"):
            parse_config(path)

    def test_unknown_keys_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown key: refinement.betta"):
            parse_config(write_config(tmp_path, {"refinement": {"betta": 0.5}}))
        with pytest.raises(ConfigError, match="unknown key: stuff"):
            parse_config(write_config(tmp_path, {"stuff": {}}))

    def test_type_mismatch_rejected(self, tmp_path):
        path = write_config(tmp_path, {"dbscan": {"min_samples": 2.5}})
        with pytest.raises(ConfigError, match="dbscan.min_samples"):
            parse_config(path)

    def test_invalid_json_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="JSON"):
            parse_config(write_config(tmp_path, "{not json"))

    def test_per_part_occlusion_accepted(self, tmp_path):
        path = write_config(tmp_path, {"synth": {"occlusion_fraction": [0.0, 0.0, 1.0]}})
        cfg = parse_config(path)
        assert cfg.synth.occlusion_fractions() == (0.0, 0.0, 1.0)

    def test_nullable_constant_alpha(self, tmp_path):
        path = write_config(tmp_path, {"refinement": {"constant_alpha": 0.9}})
        assert parse_config(path).refinement.constant_alpha == 0.9
        assert parse_config(None, {"refinement.constant_alpha": 0.7}).refinement.constant_alpha == 0.7
        with pytest.raises(ConfigError, match="constant_alpha"):
            parse_config(write_config(tmp_path, {"refinement": {"constant_alpha": "high"}}))
        with pytest.raises(ConfigError, match="paths.bank_in"):
            parse_config(write_config(tmp_path, {"paths": {"bank_in": 3}}))


@pytest.fixture()
def small_bank(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("bank")
    config = write_config(tmp, SMALL_EXPERIMENT)
    bank = tmp / "bank.pplb"
    assert main(["simgen", "--config", config, "--out", str(bank)]) == 0
    return config, str(bank)


class TestCliCommands:
    def test_simgen_deterministic(self, tmp_path, small_bank):
        config, bank = small_bank
        out2 = tmp_path / "again.pplb"
        assert main(["simgen", "--config", config, "--out", str(out2)]) == 0
        with open(bank, "rb") as f1, open(out2, "rb") as f2:
            assert f1.read() == f2.read()

    def test_cluster_output(self, tmp_path, small_bank):
        config, bank = small_bank
        out = tmp_path / "labels.jsonl"
        assert main(["cluster", "--config", config, "--bank", bank, "--out", str(out)]) == 0
        records = [json.loads(line) for line in out.read_text().splitlines()]
        assert len(records) == 96
        assert records[0].keys() == {"index", "label"}
        assert all(r["label"] >= -1 for r in records)

    def test_agree_output(self, tmp_path, small_bank):
        config, bank = small_bank
        out = tmp_path / "agree.jsonl"
        assert main(["agree", "--config", config, "--bank", bank, "--out", str(out)]) == 0
        records = [json.loads(line) for line in out.read_text().splitlines()]
        assert len(records) == 96
        assert all(len(r["scores"]) == 3 for r in records)
        assert all(0.0 <= s <= 1.0 for r in records for s in r["scores"])

    def test_refine_output(self, tmp_path, small_bank):
        config, bank = small_bank
        out = tmp_path / "refine.jsonl"
        assert main(["refine", "--config", config, "--bank", bank, "--out", str(out)]) == 0
        records = [json.loads(line) for line in out.read_text().splitlines()]
        assert len(records) == 96
        refined = [r for r in records if r["pglr"] is not None]
        assert refined, "expected at least one clustered sample"
        k = len(refined[0]["pglr"])
        for r in refined:
            assert abs(sum(r["pglr"]) - 1.0) < 1e-6
            assert len(r["aals"]) == 3
            assert all(len(row) == k and abs(sum(row) - 1.0) < 1e-6 for row in r["aals"])

    def test_eval_output(self, capsys, small_bank):
        config, bank = small_bank
        assert main(["eval", "--config", config, "--bank", bank]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert set(payload) == {"mAP", "CMC@1", "CMC@5", "CMC@10"}
        assert 0.0 <= payload["mAP"] <= 1.0

    def test_train_writes_trace(self, tmp_path, small_bank):
        config, bank = small_bank
        out = tmp_path / "trace.jsonl"
        model = tmp_path / "model.pplm"
        assert main([
            "train", "--config", config, "--bank", bank,
            "--out", str(out), "--model-out", str(model),
        ]) == 0
        lines = out.read_text().splitlines()
        assert "config" in json.loads(lines[0])
        assert "warnings" in json.loads(lines[-1])
        assert model.exists()

    def test_pipeline_writes_report_and_model(self, tmp_path, small_bank):
        config, bank = small_bank
        out = tmp_path / "report.jsonl"
        assert main(["pipeline", "--config", config, "--bank", bank, "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 3
        echoed = json.loads(lines[0])["config"]
        assert echoed["pipeline"]["epochs"] == 2
        assert (tmp_path / "report.jsonl.model").exists()

    def test_seed_override_targets_subcommand(self, tmp_path, small_bank):
        config, bank = small_bank
        other = tmp_path / "other.pplb"
        assert main(["simgen", "--config", config, "--out", str(other), "--seed", "9"]) == 0
        with open(bank, "rb") as f1, open(other, "rb") as f2:
            assert f1.read() != f2.read()

    def test_rerun_from_embedded_config_reproduces_artifact(self, tmp_path, small_bank):
        config, bank = small_bank
        first = tmp_path / "first.jsonl"
        assert main(["pipeline", "--config", config, "--bank", bank, "--out", str(first)]) == 0
        embedded = json.loads(first.read_text().splitlines()[0])["config"]
        extracted = tmp_path / "extracted.json"
        extracted.write_text(json.dumps(embedded))
        second = tmp_path / "second.jsonl"
        assert main([
            "pipeline", "--config", str(extracted), "--bank", bank, "--out", str(second)
        ]) == 0
        assert first.read_bytes() == second.read_bytes()


class TestExitCodes:
    def test_config_error_is_2(self, tmp_path):
        bad = write_config(tmp_path, {"refinement": {"beta": 2.0}})
        assert main(["simgen", "--config", bad, "--out", str(tmp_path / "x.pplb")]) == 2

    def test_missing_output_is_2(self):
        assert main(["simgen"]) == 2

    def test_missing_bank_file_is_3(self, tmp_path):
        assert main(["cluster", "--bank", str(tmp_path / "nope.pplb")]) == 3

    def test_corrupt_bank_is_3(self, tmp_path):
        path = tmp_path / "bad.pplb"
        path.write_bytes(b"XXXXsomethingelse" + b"\x00" * 30)
        assert main(["cluster", "--bank", str(path)]) == 3

    def test_bad_threads_is_2(self, tmp_path, small_bank):
        config, bank = small_bank
        assert main(["cluster", "--config", config, "--bank", bank, "--threads", "0"]) == 2

    def test_env_threads_fallback(self, small_bank, monkeypatch, tmp_path):
        config, bank = small_bank
        monkeypatch.setenv("PPLR_THREADS", "4")
        out = tmp_path / "labels.jsonl"
        assert main(["cluster", "--config", config, "--bank", bank, "--out", str(out)]) == 0

    def test_numerical_error_is_4(self, tmp_path):
        # A zero feature row is valid on disk but cannot be normalized.
        from pplr.core import FeatureBank
        from pplr.ingest import write_feature_bank

        feats = np.ones((6, 4), dtype=np.float32)
        feats[2] = 0.0
        bank = FeatureBank(global_feats=feats, part_feats=(np.ones((6, 4), dtype=np.float32),))
        path = tmp_path / "zero.pplb"
        write_feature_bank(bank, path)
        assert main(["cluster", "--bank", str(path)]) == 4
