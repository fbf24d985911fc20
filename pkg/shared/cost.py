from decimal import Decimal, ROUND_HALF_UP

from shared.schemas import ThroughputProfile, TokenUsage


def count_tokens(text: str) -> int:
    """Whitespace tokens, same unit the chunker budgets in."""
    return len(text.split())

def runtime_hours(usage: TokenUsage, profile: ThroughputProfile) -> float:
    """
    Implements T = in_tokens / (in_speed * 3600) + out_tokens / (out_speed * 3600)
    """
    if profile.input_speed <= 0 or profile.output_speed <= 0:
        raise ValueError("throughput speeds must be positive")
    return (usage.input_tokens / (profile.input_speed * 3600)
            + usage.output_tokens / (profile.output_speed * 3600))

def self_hosted_cost(usage: TokenUsage, profile: ThroughputProfile) -> float:
    """
    Implements C = T * hourly_rate
    """
    return runtime_hours(usage, profile) * profile.hourly_rate

def api_cost(usage: TokenUsage, price_per_1k_in: float, price_per_1k_out: float) -> float:
    if price_per_1k_in < 0 or price_per_1k_out < 0:
        raise ValueError("prices must be non-negative")
    return usage.input_tokens / 1000 * price_per_1k_in + usage.output_tokens / 1000 * price_per_1k_out

def per_pair_cost(total: float, n_pairs: int) -> float:
    if n_pairs < 1:
        raise ValueError("per-pair cost needs at least one pair")
    return total / n_pairs

def round_cents(amount: float) -> Decimal:
    """Half-up to cents, for display only."""
    return Decimal(repr(amount)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
