from shared.schemas import Criterion, CriterionKind, DnfExpression, DnfLiteral


def lit(question_id: str, negated: bool = False) -> DnfLiteral:
    return DnfLiteral(question_id=question_id, negated=negated)


def dnf(*clauses) -> DnfExpression:
    """dnf(["Q1", "!Q2"], ["Q3"]) -> (Q1 AND NOT Q2) OR Q3"""
    return DnfExpression(clauses=[
        [lit(q[1:], True) if q.startswith("!") else lit(q) for q in clause] for clause in clauses
    ])


def criterion(logic, kind=CriterionKind.INCLUSION, tier=1, cid="I1") -> Criterion:
    return Criterion(id=cid, source_text="criterion text", kind=kind, logic=logic, tier=tier)
