"""External performance evaluators over a line-oriented subprocess protocol.

One request per line: space-separated decimal coordinates (17 significant
digits, round-trip safe).  One response per request, in order: a single
decimal performance value.  Processes are spawned once and fed requests
until EOF terminates them.  A pool of identical children splits batches for
concurrent evaluation.
"""

import shlex
import subprocess
from concurrent.futures import ThreadPoolExecutor

import numpy as np


class ProtocolError(RuntimeError):
    """Malformed response or premature exit of an evaluator process."""


class _Worker:
    def __init__(self, cmd):
        self.cmd = cmd
        self.proc = None

    def _ensure(self):
        if self.proc is None or self.proc.poll() is not None:
            self.proc = subprocess.Popen(
                shlex.split(self.cmd),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )

    def evaluate_rows(self, rows):
        self._ensure()
        out = np.empty(len(rows))
        for i, row in enumerate(rows):
            line = " ".join(f"{v:.17g}" for v in row)
            try:
                self.proc.stdin.write(line + "\n")
                self.proc.stdin.flush()
                resp = self.proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                raise ProtocolError(f"evaluator {self.cmd!r} died: {exc}") from exc
            if not resp:
                raise ProtocolError(f"evaluator {self.cmd!r} closed its output")
            try:
                out[i] = float(resp.strip())
            except ValueError as exc:
                raise ProtocolError(
                    f"evaluator {self.cmd!r} returned non-numeric {resp.strip()!r}"
                ) from exc
        return out

    def close(self):
        if self.proc is not None and self.proc.poll() is None:
            try:
                self.proc.stdin.close()
                self.proc.wait(timeout=10)
            except Exception:
                self.proc.kill()
        self.proc = None


class ExternalEvaluator:
    """Vectorized facade over a pool of protocol child processes."""

    def __init__(self, cmd, n_procs=1):
        self.cmd = cmd
        self.workers = [_Worker(cmd) for _ in range(max(1, int(n_procs)))]

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = X.shape[0]
        k = len(self.workers)
        if k == 1 or n == 1:
            return self.workers[0].evaluate_rows(X)
        # contiguous slices preserve per-process request order
        bounds = np.linspace(0, n, k + 1).astype(int)
        out = np.empty(n)
        with ThreadPoolExecutor(max_workers=k) as pool:
            futs = {}
            for w, a, b in zip(self.workers, bounds[:-1], bounds[1:]):
                if b > a:
                    futs[pool.submit(w.evaluate_rows, X[a:b])] = (a, b)
            for fut, (a, b) in futs.items():
                out[a:b] = fut.result()
        return out

    def close(self):
        for w in self.workers:
            w.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
