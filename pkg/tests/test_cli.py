"""Command-line tests: exit codes, emitted files, and override behavior."""

import json

import numpy as np
import pytest

from siasim.cli import main
from siasim.convert import AnnLayerParams
from siasim.model_io import save_ann, write_spikes
from siasim.neurons import QuantActParams
from siasim.synth import make_margin_dataset, make_toy_ann, random_frames


@pytest.fixture
def toy_bundle(tmp_path):
    toy = make_toy_ann(seed=0)
    base = tmp_path / "toy_ann"
    save_ann(base, toy.layers, toy.scales, input_scale=toy.input_scale)
    return base, toy


@pytest.fixture
def converted(tmp_path, toy_bundle):
    base, toy = toy_bundle
    out = tmp_path / "toy_net"
    assert main(["convert", str(base), "-o", str(out)]) == 0
    return out, toy


class TestConvert:
    def test_writes_network_and_report(self, tmp_path, toy_bundle, capsys):
        base, _ = toy_bundle
        out = tmp_path / "net"
        assert main(["convert", str(base), "-o", str(out)]) == 0
        assert (tmp_path / "net.manifest.json").exists()
        assert (tmp_path / "net.weights.bin").exists()
        printed = capsys.readouterr().out
        assert "theta" in printed and "conv1" in printed

    def test_threshold_underflow_exits_2(self, tmp_path, capsys):
        bad = AnnLayerParams(
            kind="conv",
            weights=np.ones((1, 1, 3, 3)),
            act=QuantActParams(64, 1e-5),
            kernel=3,
            name="shrunken",
        )
        base = tmp_path / "bad"
        save_ann(base, [bad], [1.0])
        assert main(["convert", str(base), "-o", str(tmp_path / "out")]) == 2
        assert "shrunken" in capsys.readouterr().err

    def test_missing_input_exits_1(self, tmp_path):
        assert main(["convert", str(tmp_path / "nope"), "-o", str(tmp_path / "x")]) == 1


class TestRun:
    def test_expected_class_and_reports(self, tmp_path, converted, capsys):
        out, toy = converted
        dataset = make_margin_dataset(toy, seed=5, count=1)
        frame, label = dataset[0]
        spikes = tmp_path / "input"
        write_spikes(spikes, [frame] * 16)
        outdir = tmp_path / "results"
        code = main(["run", str(out), str(spikes), "--strict", "--out-dir", str(outdir)])
        assert code == 0
        report = json.loads((outdir / "report.json").read_text())
        assert report["predicted_class"] == label
        for name in ("report.csv", "latency.csv", "spike_rates.csv"):
            assert (outdir / name).exists()
        assert f"predicted class: {label}" in capsys.readouterr().out

    def test_window_override_changes_only_time_fields(self, tmp_path, converted):
        out, _ = converted
        rng = np.random.default_rng(1)
        spikes = tmp_path / "input"
        write_spikes(spikes, random_frames(rng, (1, 8, 8), 16))
        d8, d16 = tmp_path / "o8", tmp_path / "o16"
        assert main(["run", str(out), str(spikes), "--T", "8", "--out-dir", str(d8)]) == 0
        assert main(["run", str(out), str(spikes), "--T", "16", "--out-dir", str(d16)]) == 0
        r8 = json.loads((d8 / "report.json").read_text())
        r16 = json.loads((d16 / "report.json").read_text())
        assert r8["timesteps"] == 8 and r16["timesteps"] == 16
        for key in ("pe_count", "clock_hz", "cycle_model", "transfer_model"):
            assert r8[key] == r16[key]
        assert r8["totals"]["peak_gops"] == r16["totals"]["peak_gops"]
        names8 = [l["name"] for l in r8["per_layer"]]
        names16 = [l["name"] for l in r16["per_layer"]]
        assert names8 == names16

    def test_window_beyond_file_exits_2(self, tmp_path, converted):
        out, _ = converted
        rng = np.random.default_rng(1)
        spikes = tmp_path / "input"
        write_spikes(spikes, random_frames(rng, (1, 8, 8), 4))
        assert main(["run", str(out), str(spikes), "--T", "9"]) == 2

    def test_dimension_mismatch_exits_2(self, tmp_path, converted, capsys):
        out, _ = converted
        rng = np.random.default_rng(1)
        spikes = tmp_path / "wrong"
        write_spikes(spikes, random_frames(rng, (3, 8, 8), 4))
        assert main(["run", str(out), str(spikes)]) == 2
        assert "channels" in capsys.readouterr().err

    def test_lif_override_accepted(self, tmp_path, converted):
        out, _ = converted
        rng = np.random.default_rng(2)
        spikes = tmp_path / "input"
        write_spikes(spikes, random_frames(rng, (1, 8, 8), 4))
        code = main(
            ["run", str(out), str(spikes), "--mode", "LIF", "--leak-shift", "3",
             "--out-dir", str(tmp_path / "lif_out")]
        )
        assert code == 0


class TestBench:
    def test_default_sweep_nondecreasing(self, capsys):
        assert main(["bench", "--out-dir", "/tmp/siabench"]) == 0
        lines = [
            l for l in capsys.readouterr().out.splitlines() if l and l[0].isdigit()
        ]
        assert len(lines) == 4
        cycles = [int(l.split(",")[2]) for l in lines]
        assert cycles == sorted(cycles), f"cycles not nondecreasing: {cycles}"

    def test_clock_scales_latency(self, capsys):
        assert main(["bench", "--k", "3"]) == 0
        ms_100 = float(capsys.readouterr().out.splitlines()[-1].split(",")[3])
        assert main(["bench", "--k", "3", "--clock", "500000000"]) == 0
        ms_500 = float(capsys.readouterr().out.splitlines()[-1].split(",")[3])
        assert ms_500 == pytest.approx(ms_100 / 5)

    def test_unsupported_kernel_exits_2(self):
        assert main(["bench", "--k", "4"]) == 2


class TestReport:
    def test_tables_from_run_report(self, tmp_path, converted):
        out, _ = converted
        rng = np.random.default_rng(3)
        spikes = tmp_path / "input"
        write_spikes(spikes, random_frames(rng, (1, 8, 8), 4))
        rundir = tmp_path / "run"
        assert main(["run", str(out), str(spikes), "--out-dir", str(rundir)]) == 0
        repdir = tmp_path / "rep"
        code = main(["report", str(rundir / "report.json"), "--out-dir", str(repdir)])
        assert code == 0
        assert (repdir / "latency.csv").exists()
        assert (repdir / "spike_rates.csv").exists()
        # regenerated table matches the one emitted by the run
        assert (repdir / "latency.csv").read_text() == (rundir / "latency.csv").read_text()

    def test_accuracy_curve_mode(self, tmp_path, converted):
        out, _ = converted
        base_ann = tmp_path / "toy_ann"
        repdir = tmp_path / "acc"
        code = main(
            [
                "report",
                "--accuracy-net", str(out),
                "--accuracy-ann", str(base_ann),
                "--T-values", "1,4",
                "--out-dir", str(repdir),
            ]
        )
        assert code == 0
        lines = (repdir / "accuracy.csv").read_text().splitlines()
        assert lines[0] == "timesteps,accuracy"
        assert len(lines) == 3
