"""Shared builders for the test suite: the worked case, fixtures and synthetic corpora."""

from __future__ import annotations

import json
import random
from pathlib import Path

from radjudge.gateway import CompletionRequest, write_fixture
from radjudge.models import ReportPair
from radjudge.prompting import (
    build_evaluation_prompt,
    build_refinement_prompt,
    load_templates,
    refinement_template,
)

CASE_ORIGINAL = (
    "Comparison is made to prior study from. "
    "There is a swan-ganz catheter whose distal lead tip is in the main pulmonary outflow tract. "
    "The cardiac silhouette is enlarged. "
    "There is again seen moderate <unk> pleural effusion which is stable. "
    "There is some improvement in the pulmonary vascular edema. "
    "There are no pneumothoraces identified."
)
CASE_PREDICTED = (
    "The patient is status post median sternotomy and cabg. "
    "Left-sided AICD device is noted with leads terminating in the right atrium, right ventricle, "
    "and region of the coronary sinus. "
    "Moderate to severe cardiomegaly is re-demonstrated. "
    "The mediastinal contour is unchanged. "
    "There is mild pulmonary vascular congestion. "
    "Small bilateral pleural effusions are noted. "
    "Patchy opacities in the lung bases likely reflect areas of atelectasis. "
    "No pneumothorax is identified."
)
CASE_EXPLANATION = (
    "The AI's generated report has some alignment with the ground truth - the cardiac silhouette "
    "enlargement and the absence of pneumothorax are accurate. The AI report does not mention the "
    "swan-ganz catheter and reports small bilateral effusions instead of a moderate stable effusion."
)
# The judge's answer for the worked case (overall 3, c/C scored 1).
CASE_JUDGE_OUTPUT = f"""Original,a,comparison is made to prior study from,-,0,
Original,b,there is a swan-ganz catheter whose distal lead tip is in the main pulmonary outflow tract,-,0,
Original,c,the cardiac silhouette is enlarged,C,1,
Original,d,there is again seen moderate <unk> pleural effusion which is stable,F,0.5,
Original,e,there is some improvement in the pulmonary vascular edema,E,0.5,
Original,f,there are no pneumothoraces identified,H,1,
Prediction,A,the patient is status post median sternotomy and cabg,-,0,
Prediction,B,"left-sided aicd device is noted with leads terminating in the right atrium, right ventricle, and region of the coronary sinus",-,0,
Prediction,C,moderate to severe cardiomegaly is re-demonstrated,c,1,
Prediction,D,the mediastinal contour is unchanged,-,0,
Prediction,E,there is mild pulmonary vascular congestion,e,0.5,
Prediction,F,small bilateral pleural effusions are noted,d,0.5,
Prediction,G,patchy opacities in the lung bases likely reflect areas of atelectasis,-,0,
Prediction,H,no pneumothorax is identified,f,1,
,,-,,,3/5, "{CASE_EXPLANATION}"
"""
CASE_FEATURES = (1 / 3, 1 / 3, 1 / 3, 0.0, 0.5, 0.25, 0.25, 0.0)

CASE_PAIR = ReportPair("case-1", CASE_ORIGINAL, CASE_PREDICTED)


def write_pairs(path: Path, pairs) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps({"case_id": p.case_id, "original": p.original, "predicted": p.predicted}) + "\n")
    return path


def eval_request(pair: ReportPair, instructions="detailed", shots=5, model_name="gpt-4",
                 temperature=0.0, max_tokens=2048) -> CompletionRequest:
    bundle = build_evaluation_prompt(pair, instructions, load_templates()[:shots])
    return CompletionRequest(bundle.system_text, bundle.user_text, temperature, max_tokens, model_name)


def refine_request(predicted: str, explanation: str) -> CompletionRequest:
    bundle = build_refinement_prompt(predicted, explanation, refinement_template())
    return CompletionRequest(bundle.system_text, bundle.user_text, 0.0, 2048, "gpt-4")


def add_eval_fixture(fixtures: Path, pair: ReportPair, text: str, iterations: int = 1, **kw) -> None:
    request = eval_request(pair, **kw)
    for i in range(iterations):
        write_fixture(fixtures, request, i, text)


def judge_output_for(pair: ReportPair, orig_scores, pred_scores, overall: float, explanation: str) -> str:
    """A well-formed judge answer; matches pair sentences positionally when both are non-zero."""
    from radjudge.models import Role, format_score
    from radjudge.prompting import segment_pair

    original, predicted = segment_pair(pair)
    lines = []
    for units, scores, other in ((original, orig_scores, predicted), (predicted, pred_scores, original)):
        for k, (u, s) in enumerate(zip(units, scores)):
            label = "Original" if u.role is Role.ORIGINAL else "Prediction"
            match = other[k].identifier if s != 0 and k < len(other) else "-"
            text = u.text.replace('"', "'")
            lines.append(f'{label},{u.identifier},"{text}",{match},{format_score(s)},')
    lines.append(f',,-,,,{overall:g}/5, "{explanation}"')
    return "\n".join(lines) + "\n"


def synthetic_corpus(n: int, seed: int):
    """Feature vectors with Y = 5*r_p1 - 2*r_pm1 + uniform(+-0.25) noise, clamped to [0, 5]."""
    rng = random.Random(seed)
    X, Y = [], []
    for _ in range(n):
        n_o = rng.randint(3, 10)
        n_p = rng.randint(3, 10)
        o = [rng.choice((0.0, 0.5, 1.0, -1.0)) for _ in range(n_o)]
        weights = [rng.random() for _ in range(4)]
        p = rng.choices((0.0, 0.5, 1.0, -1.0), weights=weights, k=n_p)
        ratios_o = [o.count(v) / n_o for v in (0.0, 0.5, 1.0, -1.0)]
        ratios_p = [p.count(v) / n_p for v in (0.0, 0.5, 1.0, -1.0)]
        x = ratios_o + ratios_p
        y = 5 * x[6] - 2 * x[7] + rng.uniform(-0.25, 0.25)
        X.append(x)
        Y.append(min(5.0, max(0.0, y)))
    return X, Y
