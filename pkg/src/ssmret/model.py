"""Pieces shared by both encoder architectures.

Byte-level tokenization, right-padded batching, EOS pooling and the binary
checkpoint container live here so the SSM and attention encoders differ only
in their blocks.
"""

from __future__ import annotations

import dataclasses
import os
import struct
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import DimMismatchError, LengthError, MagicError, TruncatedFileError, VocabularyError
from .tensor import Tensor

EOS_TOKEN_ID = 256
BYTE_VOCAB_SIZE = 257


def tokenize(text: str) -> list[int]:
    """UTF-8 bytes as token ids; id 256 is reserved for EOS and never produced."""
    return list(text.encode("utf-8"))


def rms_norm(x: Tensor, weight: Tensor, eps: float = 1e-6) -> Tensor:
    scale = T.power(T.mean(x * x, axis=-1, keepdims=True) + eps, -0.5)
    return x * scale * weight


class Encoder:
    """Base class: token ids -> unit-norm embedding taken at the appended EOS.

    Subclasses define ``config`` (a dataclass whose fields are the checkpoint
    header, all u32), ``MAGIC``, ``_param_specs()`` and ``hidden_states()``.
    """

    MAGIC: bytes = b""
    config: object

    def __init__(self, config, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    # -- parameters ------------------------------------------------------------

    def _param_specs(self) -> list[tuple[str, tuple[int, ...]]]:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        return [self.params[name] for name, _ in self._param_specs()]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(name, self.params[name]) for name, _ in self._param_specs()]

    def num_parameters(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self._param_specs())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    # -- forward -----------------------------------------------------------------

    def hidden_states(self, ids: np.ndarray) -> Tensor:
        """[batch, length] int ids -> final-layer hidden states [batch, length, model_dim]."""
        raise NotImplementedError

    def prepare(self, tokens: Sequence[int], max_len: int | None = None) -> list[int]:
        """Validate ids, truncate to ``max_len - 1`` and append EOS."""
        cfg = self.config
        limit = cfg.max_seq_len if max_len is None else max_len
        if limit > cfg.max_seq_len:
            raise LengthError(f"requested length {limit} exceeds model max_seq_len {cfg.max_seq_len}")
        ids = list(tokens)[: limit - 1]
        for t in ids:
            if not 0 <= t < cfg.vocab_size:
                raise VocabularyError(f"token id {t} outside vocabulary of size {cfg.vocab_size}")
        return ids + [cfg.eos_token_id]

    def encode_batch(self, batch: Sequence[Sequence[int]], max_len: int | None = None) -> Tensor:
        """Embed several token lists at once; rows are unit-norm.

        Sequences are right-padded with EOS.  Both architectures are causal, so
        padding after a sequence's own EOS cannot change its pooled output.
        """
        seqs = [self.prepare(toks, max_len) for toks in batch]
        width = max(len(s) for s in seqs)
        ids = np.full((len(seqs), width), self.config.eos_token_id, dtype=np.int64)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = s
        hidden = self.hidden_states(ids)
        last = np.array([len(s) - 1 for s in seqs])
        pooled = hidden[np.arange(len(seqs)), last]
        return T.l2_normalize(pooled, axis=-1)

    def encode(self, tokens: Sequence[int], max_len: int | None = None) -> np.ndarray:
        with T.no_grad():
            return self.encode_batch([tokens], max_len).data[0].copy()

    def embed_texts(self, texts: Sequence[str], max_len: int | None = None, batch_size: int = 32) -> np.ndarray:
        """Inference-only embeddings for raw strings, [len(texts), model_dim]."""
        out = np.zeros((len(texts), self.config.model_dim))
        with T.no_grad():
            for i in range(0, len(texts), batch_size):
                chunk = [tokenize(t) for t in texts[i : i + batch_size]]
                out[i : i + len(chunk)] = self.encode_batch(chunk, max_len).data
        return out

    # -- persistence ----------------------------------------------------------------

    def to_bytes(self) -> bytes:
        fields = [getattr(self.config, f.name) for f in dataclasses.fields(self.config)]
        parts = [self.MAGIC, struct.pack(f"<{len(fields)}I", *fields)]
        for _, p in self.named_parameters():
            parts.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        return b"".join(parts)

    def save(self, path: str | os.PathLike) -> None:
        atomic_write(path, self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes):
        magic = cls.MAGIC
        if len(blob) < len(magic) or blob[: len(magic)] != magic:
            raise MagicError(f"not a {magic.decode()} checkpoint")
        cfg_cls = cls.config_class()
        n_fields = len(dataclasses.fields(cfg_cls))
        head = len(magic) + 4 * n_fields
        if len(blob) < head:
            raise TruncatedFileError("checkpoint header is truncated")
        values = struct.unpack_from(f"<{n_fields}I", blob, len(magic))
        config = cfg_cls(*values)
        model = cls.__new__(cls)
        model.config = config
        specs = model._param_specs()
        expected = head + 8 * sum(int(np.prod(s)) for _, s in specs)
        if len(blob) < expected:
            raise TruncatedFileError(f"checkpoint has {len(blob)} bytes, config needs {expected}")
        if len(blob) > expected:
            raise DimMismatchError(f"checkpoint has {len(blob) - expected} bytes beyond the declared parameters")
        params = {}
        offset = head
        for name, shape in specs:
            count = int(np.prod(shape))
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).astype(np.float64)
            params[name] = Tensor(arr.reshape(shape), requires_grad=True)
            offset += 8 * count
        model.params = params
        return model

    @classmethod
    def load(cls, path: str | os.PathLike):
        return cls.from_bytes(Path(path).read_bytes())

    @classmethod
    def config_class(cls):
        raise NotImplementedError


def atomic_write(path: str | os.PathLike, payload: bytes) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_encoder(path: str | os.PathLike) -> Encoder:
    """Open either checkpoint kind by sniffing its magic."""
    from .attention import AttentionEncoder
    from .ssm import SsmEncoder

    blob = Path(path).read_bytes()
    for cls in (SsmEncoder, AttentionEncoder):
        if blob.startswith(cls.MAGIC):
            return cls.from_bytes(blob)
    raise MagicError(f"{path}: unrecognised checkpoint magic")
