import json
import os
import tempfile
import unittest

from src.errors import ProtocolError
from src.protocol import (AnswerRecord, AnswersMessage, EmMessage, ScoreMessage, TmMessage, dump_root,
                          inspect_message, message_kind, parse_answers, parse_questions)

TOKEN = "0123456789abcdef"


def payload(obj) -> bytes:
    return json.dumps(obj).encode("utf-8")


class TestTmMessage(unittest.TestCase):
    def test_valid(self):
        msg = TmMessage.parse_payload(payload({"dim": 2, "margin": 1.0, "entities": {TOKEN: [0.1, 0.2]},
                                               "relations": {}}))
        self.assertEqual(msg.entities[TOKEN], [0.1, 0.2])

    def test_surface_form_key_rejected(self):
        with self.assertRaises(ProtocolError):
            TmMessage.parse_payload(payload({"dim": 1, "margin": 1.0, "entities": {"Berlin": [0.0]},
                                             "relations": {}}))

    def test_vector_length(self):
        with self.assertRaises(ProtocolError):
            TmMessage.parse_payload(payload({"dim": 2, "margin": 1.0, "entities": {TOKEN: [0.0]},
                                             "relations": {}}))

    def test_nan_rejected(self):
        with self.assertRaises(ProtocolError):
            TmMessage.parse_payload(b'{"dim": 1, "margin": NaN, "entities": {}, "relations": {}}')

    def test_unknown_field_rejected(self):
        with self.assertRaises(ProtocolError):
            TmMessage.parse_payload(payload({"dim": 1, "margin": 1.0, "entities": {}, "relations": {},
                                             "names": ["x"]}))

    def test_reals_survive_round_trip(self):
        value = 0.1 + 0.2
        msg = TmMessage(dim=1, margin=1.0, entities={TOKEN: [value]}, relations={})
        self.assertEqual(TmMessage.parse_payload(msg.to_payload()).entities[TOKEN][0], value)


class TestEmMessage(unittest.TestCase):
    def test_output_dim_must_match_input(self):
        with self.assertRaises(ProtocolError):
            EmMessage.parse_payload(payload({"d_in": 2, "d_h": 1, "d_out": 3, "W1": [0, 0], "W2": [0, 0, 0]}))

    def test_weight_count(self):
        with self.assertRaises(ProtocolError):
            EmMessage.parse_payload(payload({"d_in": 2, "d_h": 2, "d_out": 2, "W1": [0, 0, 0], "W2": [0] * 4}))


class TestQuestionsMessage(unittest.TestCase):
    def record(self, qid, kind="choice", n=2):
        return {"qid": qid, "kind": kind, "fsg": [0.0, 1.0], "candidates": [[1.0, 0.0]] * n}

    def test_valid_set(self):
        msg = parse_questions(payload([self.record(0), self.record(1, "judgment", 1)]))
        self.assertEqual([q.kind for q in msg.root], ["choice", "judgment"])

    def test_duplicate_qids(self):
        with self.assertRaises(ProtocolError):
            parse_questions(payload([self.record(0), self.record(0)]))

    def test_judgment_needs_one_candidate(self):
        with self.assertRaises(ProtocolError):
            parse_questions(payload([self.record(0, "judgment", 2)]))

    def test_choice_needs_several(self):
        with self.assertRaises(ProtocolError):
            parse_questions(payload([self.record(0, "choice", 1)]))

    def test_candidate_length(self):
        rec = self.record(0)
        rec["candidates"] = [[1.0], [0.0]]
        with self.assertRaises(ProtocolError):
            parse_questions(payload([rec]))

    def test_no_string_fields_beyond_kind(self):
        with self.assertRaises(ProtocolError):
            parse_questions(payload([dict(self.record(0), entity="Berlin")]))

    def test_malformed_json(self):
        with self.assertRaises(ProtocolError):
            parse_questions(b"[{")


class TestAnswers(unittest.TestCase):
    def test_exactly_one_field(self):
        with self.assertRaises(ValueError):
            AnswerRecord(qid=0)
        with self.assertRaises(ValueError):
            AnswerRecord(qid=0, judgment=True, choice=1)

    def test_dump_omits_unused_field(self):
        message = AnswersMessage([AnswerRecord(qid=0, judgment=False), AnswerRecord(qid=1, choice=2)])
        self.assertEqual(json.loads(dump_root(message)), [{"qid": 0, "judgment": False}, {"qid": 1, "choice": 2}])
        self.assertEqual(parse_answers(dump_root(message)).root[1].choice, 2)


class TestScoreMessage(unittest.TestCase):
    def test_consistent(self):
        self.assertEqual(ScoreMessage(n=1000, n_correct=397, score=39.7).score, 39.7)

    def test_inconsistent_score(self):
        with self.assertRaises(ProtocolError):
            ScoreMessage.parse_payload(payload({"n": 4, "n_correct": 1, "score": 50.0}))

    def test_more_correct_than_asked(self):
        with self.assertRaises(ProtocolError):
            ScoreMessage.parse_payload(payload({"n": 2, "n_correct": 3, "score": 150.0}))


class TestInspect(unittest.TestCase):
    def test_message_kind(self):
        self.assertEqual(message_kind("runs/set_00/questions_alpha.json"), "questions")
        self.assertEqual(message_kind("tm.json"), "tm")
        with self.assertRaises(ProtocolError):
            message_kind("notes.json")

    def test_inspect_questions(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "questions_beta.json")
            with open(path, "wb") as f:
                f.write(payload([{"qid": 0, "kind": "judgment", "fsg": [0.0], "candidates": [[1.0]]},
                                 {"qid": 1, "kind": "choice", "fsg": [0.0], "candidates": [[1.0], [2.0]]}]))
            summary = inspect_message(path)
        self.assertTrue(summary["valid"])
        self.assertEqual((summary["questions"], summary["judgment"], summary["choice"]), (2, 1, 1))

    def test_inspect_invalid_score(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "score_alpha.json")
            with open(path, "wb") as f:
                f.write(payload({"n": 0, "n_correct": 0, "score": 0.0}))
            with self.assertRaises(ProtocolError):
                inspect_message(path)


if __name__ == '__main__':
    unittest.main()
