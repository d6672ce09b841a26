import os
import re

import pytest

from nlsqp.cli import (
    ConfigError,
    EXIT_CONDITION,
    EXIT_CONFIG,
    EXIT_EXCISED,
    EXIT_NO_CONVERGENCE,
    EXIT_OK,
    config_hash,
    load_config,
    main,
    parse_config,
    read_solution,
    run_command,
    serialize_config,
    write_solution,
)
from nlsqp.lattice import FrequencyVector, linear_solution, make_spec


TP1_CFG = """
[problem]
d = 1
b = 1
p = 1
delta = 0.001
modes = (2):0.7
"""

TP2_CFG = """
[problem]
d = 1
b = 2
p = 1
delta = 0.001
modes = (1):0.6, (2):0.8

[newton]
tol = 1e-11
max_iter = 8
"""


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_load_minimal_fills_defaults(tmp_path):
    cfg = load_config(write(tmp_path, "a.cfg", TP1_CFG))
    assert cfg.problem.b == 1
    assert cfg.newton.tol == 1e-11
    assert cfg.sweep.seed == 1234
    assert cfg.box().j_radius == 3


def test_config_rejects_zero_mode(tmp_path):
    bad = TP1_CFG.replace("(2):0.7", "(0):0.7")
    with pytest.raises(ConfigError, match="j_k != 0"):
        load_config(write(tmp_path, "b.cfg", bad))


def test_config_rejects_unknown_key(tmp_path):
    bad = TP1_CFG + "\nfoo = 1\n"
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(write(tmp_path, "c.cfg", bad))


def test_config_rejects_duplicate_key(tmp_path):
    bad = TP1_CFG + "\nd = 2\n"
    with pytest.raises(ConfigError, match="duplicate"):
        load_config(write(tmp_path, "d.cfg", bad))


def test_config_error_carries_line_number(tmp_path):
    bad = TP1_CFG + "\n[newton]\ntol = not_a_number\n"
    with pytest.raises(ConfigError, match=r"line \d+"):
        load_config(write(tmp_path, "e.cfg", bad))


def test_config_roundtrip_idempotent():
    cfg = parse_config(TP2_CFG)
    once = serialize_config(cfg)
    twice = serialize_config(parse_config(once))
    assert once == twice
    assert config_hash(cfg) == config_hash(parse_config(once))


def test_config_roundtrip_d2():
    text = """
[problem]
d = 2
b = 2
p = 2
delta = 0.001
modes = (1,0):0.9, (0,1):0.35
"""
    cfg = parse_config(text)
    assert cfg.problem.j_list == ((1, 0), (0, 1))
    assert serialize_config(parse_config(serialize_config(cfg))) == serialize_config(cfg)


def test_solution_roundtrip(tp2):
    u0, _ = linear_solution(tp2)
    omega = FrequencyVector((1.25, 4.5))
    text = write_solution(tp2, omega, u0)
    spec2, om2, u2 = read_solution(text)
    assert spec2 == tp2
    assert om2.omega == omega.omega
    assert u2.items() == u0.items()


def test_check_command_tp2(tmp_path, capsys):
    cfg = parse_config(TP2_CFG)
    code = run_command("check", cfg, out_path=str(tmp_path / "rep.txt"))
    assert code == EXIT_OK
    text = (tmp_path / "rep.txt").read_text()
    assert "verdict = pass" in text
    assert "[conditions.non_intersection]" in text
    assert "[conditions.non_spiral]" in text
    assert "[conditions.rank_test]" in text


def test_check_reports_kernel_for_b4(tmp_path):
    cfg = parse_config("""
[problem]
d = 1
b = 4
p = 1
delta = 0.001
modes = (1):0.5, (2):0.5, (3):0.5, (4):0.5
""")
    code = run_command("check", cfg, out_path=str(tmp_path / "rep.txt"))
    text = (tmp_path / "rep.txt").read_text()
    assert code == EXIT_OK  # rank inconclusive defers; walk and graph pass
    assert "verdict = inconclusive" in text
    assert "kernel = -1, 3, -3, 1" in text


def test_solve_command_tp1(tmp_path):
    cfg = parse_config(TP1_CFG)
    out = str(tmp_path / "out")
    assert run_command("solve", cfg, out_path=out) == EXIT_OK
    rep = (tmp_path / "out" / "report.txt").read_text()
    assert "omega = 4.00049" in rep
    sol = (tmp_path / "out" / "solution.txt").read_text()
    spec, omega, u = read_solution(sol)
    assert omega.omega[0] == pytest.approx(4.00049)
    # Physical amplitude delta^(1/2) * a.
    from nlsqp.lattice import site
    assert abs(u[site((-1,), (2,))]) == pytest.approx(0.001 ** 0.5 * 0.7)


def test_verify_command(tmp_path):
    cfg = parse_config(TP1_CFG + "\n[verify]\nT = 5.0\ndt = 0.001\n")
    out = str(tmp_path / "out")
    run_command("solve", cfg, out_path=out)
    code = run_command("verify", cfg, out_path=str(tmp_path / "v.txt"),
                       solution=os.path.join(out, "solution.txt"))
    assert code == EXIT_OK
    text = (tmp_path / "v.txt").read_text()
    sup = float(re.search(r"sup = (\S+)", text).group(1))
    assert sup < 1e-12


def test_sweep_command_csv(tmp_path):
    cfg = parse_config(TP1_CFG + """
[sweep]
epsilons = 0.1, 0.01
n_samples = 200
seed = 5
""")
    out = str(tmp_path / "sweep.csv")
    assert run_command("sweep", cfg, out_path=out) == EXIT_OK
    lines = (tmp_path / "sweep.csv").read_text().strip().splitlines()
    assert lines[0].startswith("epsilon,")
    assert len(lines) == 3
    fracs = [float(line.split(",")[2]) for line in lines[1:]]
    assert fracs[0] >= fracs[1]


def test_exit_condition_failure(tmp_path):
    # Three corners of a rectangle in d = 2: the cubic error term pumps the
    # fourth corner resonantly, so the non-intersection condition fails.
    cfg = parse_config("""
[problem]
d = 2
b = 3
p = 1
delta = 0.001
modes = (-2,-2):0.5, (-2,2):0.5, (2,2):0.5
""")
    code = run_command("check", cfg, out_path=str(tmp_path / "r.txt"))
    assert code == EXIT_CONDITION
    assert "verdict = fail" in (tmp_path / "r.txt").read_text()


def test_exit_excised(tmp_path):
    # Amplitudes parked on a small divisor of the second-step operator.
    cfg = parse_config("""
[problem]
d = 2
b = 2
p = 2
delta = 0.001
modes = (1,0):0.5, (0,1):0.6

[truncation]
n_radius = 6
j_radius = 3
""")
    code = run_command("solve", cfg, out_path=str(tmp_path / "out"))
    assert code == EXIT_EXCISED


def test_exit_no_convergence(tmp_path):
    cfg = parse_config(TP2_CFG.replace("tol = 1e-11", "tol = 1e-30")
                       .replace("max_iter = 8", "max_iter = 2"))
    code = run_command("solve", cfg, out_path=str(tmp_path / "out"))
    assert code == EXIT_NO_CONVERGENCE


def test_sweep_byte_determinism(tmp_path):
    cfg = parse_config(TP1_CFG + """
[sweep]
epsilons = 0.01
n_samples = 100
seed = 11
""")
    run_command("sweep", cfg, out_path=str(tmp_path / "a.csv"))
    run_command("sweep", cfg, out_path=str(tmp_path / "b.csv"))
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_main_config_error_exit(tmp_path):
    bad = write(tmp_path, "bad.cfg", "not a config")
    assert main(["check", bad]) == EXIT_CONFIG


def test_report_determinism(tmp_path):
    cfg = parse_config(TP2_CFG)
    p1, p2 = str(tmp_path / "r1.txt"), str(tmp_path / "r2.txt")
    run_command("check", cfg, out_path=p1)
    run_command("check", cfg, out_path=p2)
    strip = lambda t: "\n".join(l for l in t.splitlines()
                                if not l.startswith("generated_at"))
    assert strip((tmp_path / "r1.txt").read_text()) == \
        strip((tmp_path / "r2.txt").read_text())


def test_report_embeds_config_hash(tmp_path):
    cfg = parse_config(TP2_CFG)
    run_command("check", cfg, out_path=str(tmp_path / "r.txt"))
    assert config_hash(cfg) in (tmp_path / "r.txt").read_text()
