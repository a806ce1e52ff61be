"""
Matrix sequence files and the command line
==========================================

Write a stream to the text sequence format, read it back and run the
``dyntrace file`` subcommand on it.
"""

import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

from dyntrace.formats import read_records, read_sequence_matrices, write_sequence_file

rng = np.random.default_rng(0)
n, steps = 60, 20
G = rng.standard_normal((n, n))
base = (G + G.T) / (2 * n)
drift = np.diag(rng.uniform(-1, 1, n)) / n

mats = [base + i * drift for i in range(steps)]
tmp = Path(tempfile.mkdtemp())
path = tmp / "stream.seq"
write_sequence_file(path, mats)
back = read_sequence_matrices(path)
print("round trip exact:", all(np.array_equal(a, b) for a, b in zip(mats, back)))

out = tmp / "results.csv"
cmd = [sys.executable, "-m", "dyntrace", "file", "--file", str(path),
       "--estimators", "tree,hutch,diffsum", "--budget", "2000", "--trials", "3",
       "--out", str(out)]
proc = subprocess.run(cmd, capture_output=True, text=True, check=True)
print(proc.stderr.strip())

rows = read_records(out)
print(f"{len(rows)} rows, columns: {', '.join(rows[0])}")
