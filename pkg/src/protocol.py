import json
import logging
import os
import re
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Type, TypeVar, get_args

from pydantic import BaseModel, ConfigDict, Field, RootModel, ValidationError, model_validator

from src.errors import ProtocolError

logger = logging.getLogger(__name__)

TOKEN_PATTERN = re.compile(r"^[0-9a-f]{16}$")

M = TypeVar("M", bound="Message")


class Message(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)

    @classmethod
    def parse_payload(cls: Type[M], payload: bytes) -> M:
        try:
            data = json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ProtocolError(f"Malformed {cls.__name__} payload: {e}") from e
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ProtocolError(f"{cls.__name__} schema violation: {e}") from e

    def to_payload(self) -> bytes:
        return json.dumps(self.model_dump(), allow_nan=False).encode("utf-8")


class TmMessage(Message):
    dim: int = Field(..., ge=1)
    margin: float
    entities: Dict[str, List[float]]
    relations: Dict[str, List[float]]

    @model_validator(mode="after")
    def _check_tables(self):
        for table_name in ("entities", "relations"):
            for tok, vec in getattr(self, table_name).items():
                if not TOKEN_PATTERN.match(tok):
                    raise ValueError(f"{table_name} key {tok!r} is not an opaque token")
                if len(vec) != self.dim:
                    raise ValueError(f"{table_name}[{tok}] has length {len(vec)}, expected {self.dim}")
        return self


class EmMessage(Message):
    d_in: int = Field(..., ge=1)
    d_h: int = Field(..., ge=1)
    d_out: int = Field(..., ge=1)
    self_loops: bool = False
    W1: List[float]
    W2: List[float]

    @model_validator(mode="after")
    def _check_shapes(self):
        if self.d_out != self.d_in:
            raise ValueError(f"d_out ({self.d_out}) must equal d_in ({self.d_in})")
        if len(self.W1) != self.d_in * self.d_h:
            raise ValueError(f"W1 has {len(self.W1)} values, expected {self.d_in * self.d_h}")
        if len(self.W2) != self.d_h * self.d_out:
            raise ValueError(f"W2 has {len(self.W2)} values, expected {self.d_h * self.d_out}")
        return self


class EncodedQuestionRecord(Message):
    qid: int = Field(..., ge=0)
    kind: Literal["judgment", "choice"]
    fsg: List[float]
    candidates: List[List[float]]

    @model_validator(mode="after")
    def _check_vectors(self):
        if not self.candidates:
            raise ValueError(f"question {self.qid} has no candidates")
        if (self.kind == "judgment") != (len(self.candidates) == 1):
            raise ValueError(f"question {self.qid}: kind {self.kind} with {len(self.candidates)} candidates")
        for c in self.candidates:
            if len(c) != len(self.fsg):
                raise ValueError(f"question {self.qid}: candidate length {len(c)} != fsg length {len(self.fsg)}")
        return self


class QuestionsMessage(RootModel[List[EncodedQuestionRecord]]):
    @model_validator(mode="after")
    def _unique_qids(self):
        qids = [q.qid for q in self.root]
        if len(set(qids)) != len(qids):
            raise ValueError("duplicate qid in question set")
        return self


class AnswerRecord(Message):
    qid: int = Field(..., ge=0)
    judgment: Optional[bool] = None
    choice: Optional[int] = Field(None, ge=0)

    @model_validator(mode="after")
    def _exactly_one(self):
        if (self.judgment is None) == (self.choice is None):
            raise ValueError(f"answer {self.qid} must carry exactly one of judgment/choice")
        return self

    def model_dump(self, **kwargs) -> Dict[str, Any]:
        data = super().model_dump(**kwargs)
        return {k: v for k, v in data.items() if v is not None}


class AnswersMessage(RootModel[List[AnswerRecord]]):
    def model_dump(self, **kwargs) -> Any:
        return [a.model_dump(**kwargs) for a in self.root]


class ScoreMessage(Message):
    n: int = Field(..., ge=1)
    n_correct: int = Field(..., ge=0)
    score: float = Field(..., ge=0.0, le=100.0)

    @model_validator(mode="after")
    def _consistent(self):
        if self.n_correct > self.n:
            raise ValueError(f"n_correct ({self.n_correct}) exceeds n ({self.n})")
        if self.score != 100.0 * self.n_correct / self.n:
            raise ValueError(f"score {self.score} != 100*{self.n_correct}/{self.n}")
        return self


def _parse_root(model: Type[RootModel], payload: bytes):
    try:
        data = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ProtocolError(f"Malformed {model.__name__} payload: {e}") from e
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ProtocolError(f"{model.__name__} schema violation: {e}") from e


def parse_questions(payload: bytes) -> QuestionsMessage:
    return _parse_root(QuestionsMessage, payload)


def parse_answers(payload: bytes) -> AnswersMessage:
    return _parse_root(AnswersMessage, payload)


def dump_root(message: RootModel) -> bytes:
    return json.dumps(message.model_dump(), allow_nan=False).encode("utf-8")


# --- File naming and inspection ---

SCHEMAS = {
    "tm": ("TM handoff", TmMessage.parse_payload),
    "em": ("EM exchange", EmMessage.parse_payload),
    "questions": ("encoded questions", parse_questions),
    "answers": ("answer sheet", parse_answers),
    "score": ("score", ScoreMessage.parse_payload),
}

_FILE_PATTERN = re.compile(r"^(tm|em|questions|answers|score)(?:_([a-z0-9]+))?\.json$")


def message_kind(path: str) -> str:
    m = _FILE_PATTERN.match(os.path.basename(path))
    if not m:
        raise ProtocolError(f"{path}: not an exchange message file name")
    return m.group(1)


def inspect_message(path: str) -> Dict[str, Any]:
    """Validate a message file against the schema its name selects and summarise it."""
    kind = message_kind(path)
    label, parser = SCHEMAS[kind]
    msg = parser(Path(path).read_bytes())
    summary: Dict[str, Any] = {"file": path, "kind": label, "valid": True}
    if isinstance(msg, TmMessage):
        summary.update(dim=msg.dim, entities=len(msg.entities), relations=len(msg.relations))
    elif isinstance(msg, EmMessage):
        summary.update(d_in=msg.d_in, d_h=msg.d_h, d_out=msg.d_out)
    elif isinstance(msg, QuestionsMessage):
        kinds = [q.kind for q in msg.root]
        summary.update(questions=len(kinds), judgment=kinds.count("judgment"), choice=kinds.count("choice"))
    elif isinstance(msg, AnswersMessage):
        summary.update(answers=len(msg.root))
    elif isinstance(msg, ScoreMessage):
        summary.update(n=msg.n, n_correct=msg.n_correct, score=msg.score)
    return summary


# Schema-owned words: field names and the question-kind enum values.
SCHEMA_KEYS = frozenset(name for model in (TmMessage, EmMessage, EncodedQuestionRecord, AnswerRecord, ScoreMessage)
                        for name in model.model_fields)
KIND_VALUES = frozenset(get_args(EncodedQuestionRecord.model_fields["kind"].annotation))
