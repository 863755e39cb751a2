import json

import jsonschema
import pytest

from orchsim import report_schema
from orchsim.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_VERIFY, main
from orchsim.config import RunConfig, Switches, config_from_dict, load_config
from orchsim.core import ConfigError

SMALL = {
    "topology": {"d": 4, "c": 2, "intra_bw": 10.0, "inter_bw": 1.0},
    "generation": {"n": 96},
    "mini_batch_size": 8,
    "seed": 4,
    "verify": {"trials": 20, "max_items": 8, "padded_trials": 20, "nodewise_trials": 10,
               "composition_trials": 10},
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(SMALL))
    return path


def run(*args):
    return main([str(a) for a in args])


class TestConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.topology.d == 32 and cfg.generation.n == 4096
        assert cfg.global_batch == 1024

    def test_trace_xor_generation(self):
        with pytest.raises(ConfigError):
            RunConfig(trace=None, generation=None)
        with pytest.raises(ConfigError):
            config_from_dict({"trace": "x.jsonl", "generation": {"n": 4}})

    def test_pad_switches_conflict(self):
        with pytest.raises(ConfigError):
            Switches(all_pad=True, all_rmpad=True)

    def test_other_switches_compose(self):
        sw = Switches(no_balance=True, llm_only_balance=True, all_pad=True,
                      allgather_communicator=True, disable_nodewise=True)
        opts = RunConfig(switches=sw).options()
        assert not opts.balance_llm and not opts.nodewise

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            config_from_dict({"topolgy": {}})

    def test_bad_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_round_trip(self):
        cfg = config_from_dict(SMALL)
        assert config_from_dict(cfg.to_dict()) == cfg

    def test_all_pad_only_changes_encoder_policies(self):
        cfg = RunConfig(switches=Switches(all_pad=True))
        for before, after in zip(cfg.phases, cfg.effective_phases()):
            assert before.cost_model == after.cost_model
            if before.modality == "llm":
                assert before.policy == after.policy
            else:
                assert after.policy.kind.value == "BinaryPadded"


class TestGenerate:
    def test_writes_n_lines(self, tmp_path, config_file):
        assert run("generate", "--config", config_file, "--out", tmp_path / "o") == EXIT_OK
        assert len((tmp_path / "o" / "trace.jsonl").read_text().splitlines()) == 96

    def test_bad_weights(self, tmp_path, capsys):
        path = tmp_path / "w.json"
        path.write_text(json.dumps({"generation": {"n": 10, "weights": [0.6, 0.6, 0.1]}}))
        assert run("generate", "--config", path, "--out", tmp_path / "o") == EXIT_CONFIG
        assert "sum to 1" in capsys.readouterr().err

    def test_byte_identical(self, tmp_path, config_file):
        run("generate", "--config", config_file, "--out", tmp_path / "a")
        run("generate", "--config", config_file, "--out", tmp_path / "b")
        assert (tmp_path / "a" / "trace.jsonl").read_bytes() == (tmp_path / "b" / "trace.jsonl").read_bytes()

    def test_seed_flag_overrides_file(self, tmp_path, config_file):
        run("generate", "--config", config_file, "--out", tmp_path / "a")
        run("generate", "--config", config_file, "--seed", 5, "--out", tmp_path / "b")
        assert (tmp_path / "a" / "trace.jsonl").read_bytes() != (tmp_path / "b" / "trace.jsonl").read_bytes()


def simulate(tmp_path, config_file, name, *flags):
    out = tmp_path / name
    assert run("simulate", "--config", config_file, "--out", out, *flags) == EXIT_OK
    return json.loads((out / "report.json").read_text()), out


class TestSimulate:
    def test_report_schema_and_csv(self, tmp_path, config_file):
        report, out = simulate(tmp_path, config_file, "r")
        jsonschema.validate(report, report_schema())
        assert report["summary"]["iterations"] == 3
        rows = (out / "summary.csv").read_text().splitlines()
        assert len(rows) == 1 + 3 * 3
        assert report["summary"]["multiset_ok"] and report["summary"]["assembly_ok"]

    def test_byte_identical(self, tmp_path, config_file):
        _, a = simulate(tmp_path, config_file, "a")
        _, b = simulate(tmp_path, config_file, "b")
        for name in ("report.json", "summary.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_trace_replay_matches_generation(self, tmp_path, config_file):
        run("generate", "--config", config_file, "--out", tmp_path / "g")
        direct, _ = simulate(tmp_path, config_file, "a")
        replay, _ = simulate(tmp_path, config_file, "b", "--trace", tmp_path / "g" / "trace.jsonl")
        assert direct["iterations"] == replay["iterations"]

    def test_no_balance(self, tmp_path, config_file):
        report, _ = simulate(tmp_path, config_file, "r", "--no-balance")
        for it in report["iterations"]:
            for p in it["per_phase"]:
                assert p["post_ratio"] == pytest.approx(p["pre_ratio"])

    def test_llm_only_balance(self, tmp_path, config_file):
        full, _ = simulate(tmp_path, config_file, "a")
        llm_only, _ = simulate(tmp_path, config_file, "b", "--llm-only-balance")
        for name in ("vision", "audio"):
            assert (llm_only["summary"]["per_phase"][name]["mean_post_ratio"]
                    > full["summary"]["per_phase"][name]["mean_post_ratio"])

    def test_disable_nodewise(self, tmp_path, config_file):
        on, _ = simulate(tmp_path, config_file, "a")
        off, _ = simulate(tmp_path, config_file, "b", "--disable-nodewise")
        for a, b in zip(on["iterations"], off["iterations"]):
            for pa, pb in zip(a["per_phase"], b["per_phase"]):
                assert pb["max_egress"] >= pa["max_egress"]

    def test_pad_flags_exclusive(self, tmp_path, config_file):
        with pytest.raises(SystemExit):
            run("simulate", "--config", config_file, "--all-pad", "--all-rmpad")

    def test_missing_trace_is_io_error(self, tmp_path, config_file):
        code = run("simulate", "--config", config_file, "--trace", tmp_path / "nope.jsonl", "--out", tmp_path / "o")
        assert code == EXIT_IO

    def test_malformed_trace_is_io_error(self, tmp_path, config_file, capsys):
        path = tmp_path / "t.jsonl"
        path.write_text('{"example_id": 0, "parts": [\n')
        assert run("simulate", "--config", config_file, "--trace", path, "--out", tmp_path / "o") == EXIT_IO
        assert "line 1" in capsys.readouterr().err

    def test_too_many_iterations(self, tmp_path, config_file):
        assert run("simulate", "--config", config_file, "--iterations", 50, "--out", tmp_path / "o") == EXIT_CONFIG


class TestVerify:
    def test_passes(self, tmp_path, config_file):
        assert run("verify", "--config", config_file, "--out", tmp_path / "v") == EXIT_OK
        result = json.loads((tmp_path / "v" / "verify.json").read_text())
        assert result["ok"] and len(result["checks"]) == 4

    def test_faulty_comparator(self, tmp_path, config_file, capsys):
        code = run("verify", "--config", config_file, "--inject-fault", "reversed", "--out", tmp_path / "v")
        assert code == EXIT_VERIFY
        err = capsys.readouterr().err
        assert "counterexample approximation_bound" in err

    def test_zero_trials_vacuous(self, tmp_path, config_file, capsys):
        assert run("verify", "--config", config_file, "--trials", 0, "--out", tmp_path / "v") == EXIT_OK
        assert "vacuously" in capsys.readouterr().out
