import numpy as np
import pytest

from bridge_stub import StubServer
from stmp.cli import denoise_test, main

GOOD_CONFIG = """
system.k = 24
system.n = 4
system.m = 2
system.t = 10
system.lambda = 0.2
system.noise_var = 0.01
system.seed = 3
engine.max_iters = 12
engine.damping = 0.8
denoiser.kind = gaussian
channel.kind = iid_gaussian
snr.db = 15
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(GOOD_CONFIG)
    return str(path)


def test_validate_good_config(config_file):
    assert main(["validate", config_file]) == 0


def test_validate_unknown_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("system.quux = 1\n")
    assert main(["validate", str(path)]) == 1


def test_validate_bad_value(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("system.noise_var = 0\n")
    assert main(["validate", str(path)]) == 1


def test_validate_missing_file():
    assert main(["validate", "/nonexistent/run.cfg"]) == 1


def test_simulate_sweep_rows(config_file, tmp_path):
    out = tmp_path / "results.csv"
    code = main(["simulate", config_file, "--sweep", "snr.db=0,10,20",
                 "--trials", "2", "--workers", "1", "--out", str(out),
                 "--no-timing"])
    assert code == 0
    lines = out.read_text().strip().split("\n")
    assert len(lines) == 4  # header + 3 sweep points
    assert lines[0].startswith("axis,value,trials")
    assert lines[1].split(",")[0] == "snr_db"


def test_simulate_traces_flag(config_file, tmp_path):
    out = tmp_path / "r.csv"
    traces = tmp_path / "traces"
    code = main(["simulate", config_file, "--trials", "2", "--workers", "1",
                 "--out", str(out), "--traces", str(traces), "--no-timing"])
    assert code == 0
    files = sorted(p.name for p in traces.iterdir())
    assert files == ["trace_p0_t0.csv", "trace_p0_t1.csv"]
    first = (traces / files[0]).read_text().splitlines()
    assert first[0] == "iter,residual,nmse_db,v_pri_mean,v_post_mean,tau_pri,clamps,ms"


def test_simulate_stdout_when_no_out(config_file, capsys):
    code = main(["simulate", config_file, "--trials", "1", "--workers", "1",
                 "--no-timing"])
    assert code == 0
    captured = capsys.readouterr()
    assert captured.out.startswith("axis,value,trials")
    # the diagnostic stream carries progress only, never machine output
    assert "axis,value" not in captured.err


def test_simulate_unknown_axis(config_file):
    assert main(["simulate", config_file, "--sweep", "system.p=1,2"]) == 1


def test_simulate_runtime_error_exit_code(tmp_path):
    # >10% failed trials aborts with the runtime exit code
    path = tmp_path / "tiny.cfg"
    path.write_text("system.k = 2\nsystem.n = 2\nsystem.m = 1\nsystem.t = 2\n"
                    "system.lambda = 0.5\nsystem.seed = 0\n"
                    "channel.kind = iid_gaussian\n")
    assert main(["simulate", str(path), "--trials", "40", "--workers", "1"]) == 2


def test_simulate_bridge_without_addr(tmp_path):
    path = tmp_path / "bridge.cfg"
    path.write_text("denoiser.kind = bridge\n")
    assert main(["simulate", str(path)]) == 1


def test_simulate_unreachable_bridge_exit_3(tmp_path):
    path = tmp_path / "bridge.cfg"
    path.write_text("system.k = 8\nsystem.n = 2\nsystem.m = 1\nsystem.t = 4\n"
                    "denoiser.kind = bridge\n")
    code = main(["simulate", str(path), "--trials", "2", "--workers", "1",
                 "--bridge-addr", "127.0.0.1:1"])
    assert code == 3


def test_denoise_test_gaussian_closed_form():
    rows = denoise_test("gaussian", [0.0], sigma2=1.0, n=4, m=2, samples=512, seed=9)
    # sigma2 = tau = 1: closed form is -3.01 dB
    assert rows[0]["analytic_db"] == pytest.approx(-3.0103, abs=1e-3)
    assert rows[0]["nmse_db"] == pytest.approx(rows[0]["analytic_db"], abs=0.4)


def test_denoise_test_sentinel_at_tiny_noise():
    rows = denoise_test("gaussian", [300.0], sigma2=1.0, n=2, m=2, samples=8, seed=9)
    assert rows[0]["analytic_db"] == -300.0


def test_denoise_test_gm_close_to_gaussian_mix():
    rows = denoise_test("gaussian_mixture", [0.0, 10.0], sigma2=1.0, n=4, m=2,
                        samples=256, seed=9)
    assert all(np.isfinite(row["nmse_db"]) for row in rows)
    assert rows[1]["nmse_db"] < rows[0]["nmse_db"]


def test_denoise_test_gm_backend_matches_quadrature_oracle():
    # the mixture backend's per-entry posterior means sit within 1e-5 of the
    # literal quadrature denoiser on the same observations
    from stmp.denoisers import (ChannelDenoiser, GaussianMixtureScore,
                                brute_force_mmse)
    rng = np.random.default_rng(21)
    w, mu, v = [0.4, 0.6], [0.9 + 0.2j, -0.7 - 0.5j], [0.5, 1.2]
    den = ChannelDenoiser(GaussianMixtureScore(w, mu, v))
    tau = 0.8
    noisy = (rng.standard_normal((3, 1, 1)) + 1j * rng.standard_normal((3, 1, 1)))
    out = den(noisy, np.array([tau]))
    for k in range(3):
        ref_mean, _ = brute_force_mmse(("gm", w, mu, v), complex(noisy[k, 0, 0]), tau)
        assert abs(out.h_post[k, 0, 0] - ref_mean) <= 1e-5


def test_denoise_test_cli_table(capsys):
    assert main(["denoise-test", "--backend", "gaussian", "--snr", "0,10",
                 "--samples", "32", "--n", "2", "--m", "2"]) == 0
    out = capsys.readouterr().out
    assert "snr_db" in out and "analytic_db" in out


def test_bridge_check_ok():
    with StubServer() as server:
        assert main(["bridge-check", "--addr", server.addr]) == 0


def test_bridge_check_status_error_exit_3():
    with StubServer(mode="status1") as server:
        assert main(["bridge-check", "--addr", server.addr]) == 3


def test_bridge_check_unreachable_exit_3():
    assert main(["bridge-check", "--addr", "127.0.0.1:1"]) == 3


def test_denoise_test_bridge_backend_matches_gaussian():
    with StubServer(sigma2=1.0) as server:
        rows = denoise_test("bridge", [10.0], sigma2=1.0, n=2, m=2, samples=64,
                            seed=4, addr=server.addr)
    assert np.isfinite(rows[0]["nmse_db"])
