import subprocess
import sys

import pytest

from hytegrid import mesh as M
from hytegrid.apps.cli import EXIT_INVALID, EXIT_OK, main


def _header(out):
    """Leading key=value lines, before the first report line."""
    head = []
    for line in out.splitlines():
        if " " in line:
            break
        head.append(line.split("=", 1))
    return dict(head)


def test_poisson_prints_header_and_report(capsys):
    assert main(["poisson", "--mesh", "square", "--level", "3", "--cycles", "4"]) == EXIT_OK
    out = capsys.readouterr().out
    h = _header(out)
    assert h["command"] == "poisson"
    assert (h["mesh"], h["level"], h["cycles"], h["ranks"], h["partitioner"]) == ("square", "3", "4", "1", "rr")
    assert "error" in out


def test_partition_writes_vtk(tmp_path, capsys):
    code = main(["partition", "--mesh", "ring", "--level", "2", "--ranks", "4", "--partitioner", "greedy",
                 "--vtk-out", str(tmp_path)])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "edge_cut=" in out
    assert (tmp_path / "partition.vtk").is_file()
    assert f"vtk={tmp_path / 'partition.vtk'}" in out


def test_mesh_file_argument(tmp_path, capsys):
    path = tmp_path / "square.msh"
    path.write_text(M.format_mesh(M.unit_square()))
    assert main(["poisson", "--mesh", str(path), "--level", "2"]) == EXIT_OK
    assert f"mesh={path}" in capsys.readouterr().out


def test_annulus_short_run(capsys):
    argv = ["annulus", "--level", "2", "--faces", "8", "--ra", "100", "--steps", "6", "--cycles", "2"]
    assert main(argv) == EXIT_OK
    out = capsys.readouterr().out
    h = _header(out)
    assert (h["Ra"], h["steps"], h["stokesEvery"]) == ("100.0", "6", "3")
    assert "digest=" in out


@pytest.mark.parametrize("argv", [
    ["poisson", "--level", "0"],
    ["poisson", "--level", "12"],
    ["stokes", "--ranks", "0"],
    ["poisson", "--mesh", "does-not-exist"],
    ["annulus", "--inv-pe", "-1"],
    ["annulus", "--faces", "9"],
    ["poisson", "--cycles", "-2"],
])
def test_validation_failures_exit_2(argv, capsys):
    assert main(argv) == EXIT_INVALID
    captured = capsys.readouterr()
    assert captured.out.startswith(f"command={argv[0]}")
    assert "error=" in captured.err


def test_malformed_mesh_file_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.msh"
    path.write_text("3\n0 0 0\n1 0 0\n0 1 0\n1\n0 1 7 0\n")
    assert main(["poisson", "--mesh", str(path), "--level", "2"]) == EXIT_INVALID
    assert "error=" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["frobnicate"], ["poisson", "--partitioner", "metis"], ["poisson", "--level", "x"]])
def test_usage_errors_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == EXIT_INVALID


def test_console_script_entry():
    proc = subprocess.run([sys.executable, "-m", "hytegrid.apps.cli", "partition", "--ranks", "2"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.startswith("command=partition\n")
