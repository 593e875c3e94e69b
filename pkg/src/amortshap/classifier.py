"""Black-box classifiers: batch scoring of (possibly masked) token sequences.

Two builtin analytic classifiers are provided, plus an adapter that talks to
an external process (or TCP endpoint) over line-delimited JSON:

    request:   {"type": "predict", "id": 7, "inputs": [["tok", ...], ...]}
    response:  {"type": "result", "id": 7, "values": [[v0, ..., vC-1], ...]}
    handshake: {"type": "hello"} -> {"type": "meta", "num_classes": C, "value_mode": "probability"}
"""

from __future__ import annotations

import hashlib
import json
import shlex
import socket
import subprocess
import threading
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from . import kernels
from .core import DEFAULT_PAD, VALUE_MODES, ContractViolation, TokenSequence

VALUE_MODE_ALIASES = {"prob": "probability", "probability": "probability", "raw": "raw_score", "raw_score": "raw_score"}


class TransportError(RuntimeError):
    def __init__(self, message, payload=None):
        super().__init__(message if payload is None else f"{message}; payload={payload!r}")
        self.payload = payload


class ProtocolError(RuntimeError):
    pass


def normalize_value_mode(mode: str) -> str:
    try:
        return VALUE_MODE_ALIASES[mode]
    except KeyError:
        raise ContractViolation(f"unknown value mode {mode!r}") from None


def softmax_rows(raw: np.ndarray) -> np.ndarray:
    # explicit per-class loops keep the reduction order independent of batch shape
    raw = np.asarray(raw, dtype=np.float64)
    shifted = raw - raw.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    total = e[:, 0].copy()
    for c in range(1, e.shape[1]):
        total = total + e[:, c]
    return e / total[:, None]


def _as_tokens(item) -> tuple[str, ...]:
    return item.tokens if isinstance(item, TokenSequence) else tuple(item)


class ClassifierHandle:
    """Base class. Subclasses implement ``_predict_tokens``."""

    descriptor: str = "abstract"
    num_classes: int = 1
    value_mode: str = "probability"

    def _predict_tokens(self, batch: list[tuple[str, ...]]) -> np.ndarray:
        raise NotImplementedError

    def predict_batch(self, inputs: Sequence[TokenSequence | Sequence[str]]) -> np.ndarray:
        batch = [_as_tokens(x) for x in inputs]
        for toks in batch:
            if len(toks) == 0:
                raise ContractViolation("cannot score an empty token sequence")
        if not batch:
            return np.zeros((0, self.num_classes))
        out = np.asarray(self._predict_tokens(batch), dtype=np.float64)
        if out.shape != (len(batch), self.num_classes):
            raise ProtocolError(
                f"classifier returned shape {out.shape}, expected {(len(batch), self.num_classes)}"
            )
        return out

    def predict_masked(self, tokens: Sequence[str], masks: np.ndarray, pad: str = DEFAULT_PAD) -> np.ndarray:
        """Score ``tokens`` under each row of ``masks`` (n x L, 0/1)."""
        tokens = tuple(tokens)
        batch = [tuple(t if b else pad for t, b in zip(tokens, row)) for row in np.asarray(masks)]
        return self.predict_batch(batch)

    def value(self, x_s: TokenSequence | Sequence[str], y: int) -> float:
        self._check_label(y)
        return float(self.predict_batch([x_s])[0, y])

    def predicted_label(self, x: TokenSequence | Sequence[str]) -> int:
        # np.argmax returns the first maximum: ties go to the lowest class index
        return int(np.argmax(self.predict_batch([x])[0]))

    def _check_label(self, y: int):
        if not 0 <= int(y) < self.num_classes:
            raise ContractViolation(f"label {y} out of range for {self.num_classes} classes")

    def close(self):
        pass


class BuiltinClassifier(ClassifierHandle):
    """Linear logits over token weights plus optional pairwise bonuses.

    For class c, the raw score of a masked input is
    ``bias[c] + sum_{i unmasked} W[token_i, c] + sum_{rules (a, b) with a and b unmasked} bonus[c]``.
    Unknown tokens (including the pad token) have weight zero. In
    probability mode the raw scores pass through a softmax.

    A scalar weight is shorthand for a binary classifier with the class-0
    logit pinned at zero: ``w -> [0, w]``.
    """

    kind = "interaction"

    def __init__(self, weights: dict, bias=0.0, pairs: Iterable = (), num_classes: int = 2,
                 value_mode: str = "probability"):
        self.num_classes = int(num_classes)
        if self.num_classes < 1:
            raise ContractViolation("num_classes must be >= 1")
        self.value_mode = normalize_value_mode(value_mode)
        self.vocab = {}
        rows = []
        for tok, w in weights.items():
            self.vocab[str(tok)] = len(rows)
            rows.append(self._expand(w))
        self.W = np.array(rows, dtype=np.float64).reshape(len(rows), self.num_classes)
        self.bias = self._expand(bias)
        self.pairs = [(str(a), str(b), self._expand(bonus)) for a, b, bonus in pairs]
        self.descriptor = f"builtin:{self.kind}:{self.params_digest()}"

    def _expand(self, w) -> np.ndarray:
        arr = np.atleast_1d(np.asarray(w, dtype=np.float64))
        if arr.size == 1 and self.num_classes == 2:
            return np.array([0.0, float(arr[0])])
        if arr.size == 1 and self.num_classes == 1:
            return arr.copy()
        if arr.size != self.num_classes:
            raise ContractViolation(f"weight vector of length {arr.size} for {self.num_classes} classes")
        return arr.copy()

    def to_dict(self) -> dict:
        inv = sorted(self.vocab.items(), key=lambda kv: kv[1])
        return {
            "type": self.kind,
            "num_classes": self.num_classes,
            "weights": {tok: self.W[i].tolist() for tok, i in inv},
            "bias": self.bias.tolist(),
            "pairs": [[a, b, bonus.tolist()] for a, b, bonus in self.pairs],
            "link": "softmax",
        }

    def params_digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_value_mode(self, value_mode: str) -> "BuiltinClassifier":
        d = self.to_dict()
        return type(self)(d["weights"], d["bias"], d["pairs"], d["num_classes"], value_mode)

    def token_weight(self, token: str, y: int = 1) -> float:
        i = self.vocab.get(token)
        return 0.0 if i is None else float(self.W[i, y])

    def _raw_masked(self, tokens: tuple[str, ...], masks: np.ndarray) -> np.ndarray:
        masks = np.asarray(masks).astype(bool)
        n, L = masks.shape
        zero = np.zeros(self.num_classes)
        pos_w = np.array([self.W[self.vocab[t]] if t in self.vocab else zero for t in tokens]).reshape(L, -1)
        # sequential over positions so every row is summed in the same order
        acc = kernels.masked_sum(masks.view(np.uint8), pos_w, self.bias)
        for a, b, bonus in self.pairs:
            pa = [i for i, t in enumerate(tokens) if t == a]
            pb = [i for i, t in enumerate(tokens) if t == b]
            if not pa or not pb:
                continue
            both = masks[:, pa].any(axis=1) & masks[:, pb].any(axis=1)
            acc = acc + np.where(both[:, None], bonus[None, :], 0.0)
        return acc

    def _finish(self, raw: np.ndarray) -> np.ndarray:
        return softmax_rows(raw) if self.value_mode == "probability" else raw

    def predict_masked(self, tokens, masks, pad=DEFAULT_PAD):
        tokens = tuple(tokens)
        masks = np.asarray(masks)
        if masks.ndim != 2 or masks.shape[1] != len(tokens):
            raise ContractViolation(f"mask matrix shape {masks.shape} does not match L={len(tokens)}")
        return self._finish(self._raw_masked(tokens, masks))

    def _predict_tokens(self, batch):
        rows = []
        for toks in batch:
            ones = np.ones((1, len(toks)), dtype=bool)
            rows.append(self._finish(self._raw_masked(toks, ones))[0])
        return np.array(rows)


class InteractionClassifier(BuiltinClassifier):
    kind = "interaction"


class AdditiveClassifier(BuiltinClassifier):
    kind = "additive"

    def __init__(self, weights, bias=0.0, pairs=(), num_classes=2, value_mode="raw_score"):
        if list(pairs):
            raise ContractViolation("additive classifier takes no pair rules")
        super().__init__(weights, bias, (), num_classes, value_mode)


def classifier_from_dict(d: dict, value_mode: str | None = None) -> BuiltinClassifier:
    kind = d.get("type", "interaction")
    cls = {"additive": AdditiveClassifier, "interaction": InteractionClassifier}.get(kind)
    if cls is None:
        raise ContractViolation(f"unknown builtin classifier type {kind!r}")
    if d.get("link", "softmax") != "softmax":
        raise ContractViolation(f"unsupported link {d['link']!r}")
    mode = value_mode or d.get("value_mode") or ("raw_score" if kind == "additive" else "probability")
    return cls(d["weights"], d.get("bias", 0.0), d.get("pairs", ()), d.get("num_classes", 2), mode)


def save_classifier(clf: BuiltinClassifier, path) -> None:
    Path(path).write_text(json.dumps(clf.to_dict(), indent=1, sort_keys=True) + "\n")


class ExternalClassifier(ClassifierHandle):
    """Adapter for the line-delimited JSON protocol over a child process or TCP socket.

    Requests are serialized on a single channel; replies must arrive in
    request order.
    """

    def __init__(self, command: str, value_mode: str | None = None, max_batch: int = 64,
                 timeout: float | None = 60.0):
        self.command = command
        self.max_batch = int(max_batch)
        self._lock = threading.Lock()
        self._next_id = 0
        self._proc = None
        self._sock = None
        if command.startswith("tcp://"):
            host, port = command[len("tcp://"):].rsplit(":", 1)
            self._sock = socket.create_connection((host, int(port)), timeout=timeout)
            self._rfile = self._sock.makefile("rb")
            self._wfile = self._sock.makefile("wb")
        else:
            self._proc = subprocess.Popen(
                shlex.split(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0
            )
            self._rfile, self._wfile = self._proc.stdout, self._proc.stdin
        meta = self._roundtrip({"type": "hello"})
        if meta.get("type") != "meta":
            raise ProtocolError(f"expected meta frame, got {meta!r}")
        self.num_classes = int(meta["num_classes"])
        self.remote_mode = normalize_value_mode(meta.get("value_mode", "probability"))
        self.value_mode = normalize_value_mode(value_mode) if value_mode else self.remote_mode
        if self.value_mode == "raw_score" and self.remote_mode == "probability":
            raise ContractViolation("endpoint serves probabilities; raw scores are unavailable")
        self.descriptor = f"external:{command}"

    def _roundtrip(self, frame: dict) -> dict:
        line = json.dumps(frame, separators=(",", ":")) + "\n"
        try:
            self._wfile.write(line.encode("utf-8"))
            self._wfile.flush()
            reply = self._rfile.readline()
        except (OSError, ValueError) as exc:
            raise TransportError(f"transport failure: {exc}", frame) from exc
        if not reply:
            raise TransportError("endpoint closed the channel", frame)
        try:
            return json.loads(reply.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise TransportError(f"malformed reply {reply[:200]!r}", frame) from exc

    def _predict_tokens(self, batch):
        out = []
        with self._lock:
            for start in range(0, len(batch), self.max_batch):
                chunk = [list(t) for t in batch[start:start + self.max_batch]]
                rid = self._next_id
                self._next_id += 1
                frame = {"type": "predict", "id": rid, "inputs": chunk}
                reply = self._roundtrip(frame)
                if reply.get("type") != "result" or reply.get("id") != rid:
                    raise TransportError(f"unexpected reply {reply!r}", frame)
                values = reply.get("values")
                if not isinstance(values, list) or len(values) != len(chunk):
                    raise ProtocolError(f"expected {len(chunk)} value vectors, got {values!r}")
                for v in values:
                    if not isinstance(v, list) or len(v) != self.num_classes:
                        raise ProtocolError(f"value vector {v!r} does not have {self.num_classes} entries")
                out.extend(values)
        arr = np.array(out, dtype=np.float64)
        if self.value_mode == "probability" and self.remote_mode == "raw_score":
            arr = softmax_rows(arr)
        return arr

    def close(self):
        for f in (getattr(self, "_wfile", None), getattr(self, "_rfile", None)):
            try:
                f and f.close()
            except OSError:
                pass
        if self._proc is not None:
            self._proc.wait(timeout=10)
        if self._sock is not None:
            self._sock.close()


def load_classifier(spec: str, value_mode: str | None = None, max_batch: int = 64) -> ClassifierHandle:
    """Resolve ``builtin:<file>`` or ``external:<command>`` (or ``external:tcp://host:port``)."""
    if spec.startswith("builtin:"):
        d = json.loads(Path(spec[len("builtin:"):]).read_text())
        return classifier_from_dict(d, normalize_value_mode(value_mode) if value_mode else None)
    if spec.startswith("external:"):
        return ExternalClassifier(spec[len("external:"):], value_mode, max_batch=max_batch)
    raise ContractViolation(f"classifier spec must start with builtin: or external:, got {spec!r}")


def serve(clf: ClassifierHandle, instream: IO[bytes], outstream: IO[bytes]) -> None:
    """Answer protocol frames from ``instream`` until EOF."""
    for raw in instream:
        raw = raw.strip()
        if not raw:
            continue
        frame = json.loads(raw.decode("utf-8"))
        if frame.get("type") == "hello":
            reply = {"type": "meta", "num_classes": clf.num_classes, "value_mode": clf.value_mode}
        elif frame.get("type") == "predict":
            values = clf.predict_batch([tuple(t) for t in frame["inputs"]])
            reply = {"type": "result", "id": frame["id"], "values": values.tolist()}
        else:
            reply = {"type": "error", "message": f"unknown frame type {frame.get('type')!r}"}
        outstream.write((json.dumps(reply, separators=(",", ":")) + "\n").encode("utf-8"))
        outstream.flush()
