"""Service configuration."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class BackendConfig:
    """Settings for real-model serving.

    ``declared_shape`` is checked against the loaded weights at startup:
    under the ``total`` convention the declared count must match the full
    parameter count (the convention used for the reference 1B entailer,
    whose headline size includes embeddings); ``strict_nonembedding``
    subtracts embedding and untied output-head parameters instead.
    """

    generator_model: str | None = None
    entailer_model: str | None = None
    device: str = "cpu"
    top_n_ceiling: int = 200
    entail_prompt_template: str = "Premise: {premise} Hypothesis: {hypothesis}"
    entail_positive_token: str = "1"
    entail_negative_token: str = "0"
    renormalize_over_class_tokens: bool = False
    truncate_inputs: bool = True
    max_input_tokens: int = 2048
    param_count_convention: str = "total"  # or "strict_nonembedding"
    param_count_tolerance: float = 0.01
    deterministic: bool = True

    def __post_init__(self) -> None:
        if self.param_count_convention not in ("total", "strict_nonembedding"):
            raise ValueError("param_count_convention must be 'total' or 'strict_nonembedding'")
        if self.top_n_ceiling < 1:
            raise ValueError("top_n_ceiling must be positive")
        if self.max_input_tokens < 1:
            raise ValueError("max_input_tokens must be positive")
