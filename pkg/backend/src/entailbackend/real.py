"""Model-backed implementations of the two backend roles.

Imports torch/transformers lazily so the stub path stays dependency-light.
Both roles run single forward passes with gradients disabled; with
``deterministic`` set, identical requests produce identical responses on a
pinned build.
"""

from __future__ import annotations

from .config import BackendConfig
from .protocol import BackendUnavailable, UnknownRequest


def _load_torch():
    try:
        import torch

        return torch
    except ImportError as exc:  # pragma: no cover - real mode needs the extra
        raise BackendUnavailable("torch is not installed; install the 'real' extra") from exc


def count_parameters(model, convention: str) -> int:
    """Parameter count under the declared convention.

    ``total`` counts everything; ``strict_nonembedding`` drops input
    embeddings and, when untied, the output head.
    """
    total = sum(p.numel() for p in model.parameters())
    if convention == "total":
        return total
    embedding = model.get_input_embeddings()
    removed = embedding.weight.numel() if embedding is not None else 0
    output = model.get_output_embeddings()
    if output is not None and output.weight is not getattr(embedding, "weight", None):
        removed += output.weight.numel()
    return total - removed


def _verify_declared_shape(model, declared: dict, config: BackendConfig, role: str) -> None:
    declared_n = int(declared["n_params_nonembed"])
    actual = count_parameters(model, config.param_count_convention)
    if abs(actual - declared_n) > config.param_count_tolerance * declared_n:
        raise ValueError(
            f"{role}: declared parameter count {declared_n} does not match loaded "
            f"weights ({actual}) under the {config.param_count_convention!r} convention"
        )


class RealGeneratorBackend:
    """Causal LM serving raw top-n next-token logits.

    The request's full prefix is re-sent on every call; serving frameworks may
    cache the shared prefix, which changes nothing observable here.
    """

    def __init__(self, config: BackendConfig, declared_info: dict) -> None:
        torch = _load_torch()
        from transformers import AutoModelForCausalLM, AutoTokenizer

        if not config.generator_model:
            raise ValueError("generator_model is required")
        self.config = config
        self.tokenizer = AutoTokenizer.from_pretrained(config.generator_model)
        self.model = AutoModelForCausalLM.from_pretrained(config.generator_model)
        self.model.to(config.device)
        self.model.eval()
        _verify_declared_shape(self.model, declared_info, config, "generator")
        self._info = dict(declared_info)
        self.ready = True

    def info(self) -> dict:
        return self._info

    def candidates(
        self, context_id: str, prompt_text: str | None, prefix_token_ids: list[int], top_n: int
    ) -> tuple[list[tuple[int, str, float]], int]:
        torch = _load_torch()
        if top_n > self.config.top_n_ceiling:
            raise UnknownRequest(
                "top_n_too_large", f"top_n {top_n} exceeds ceiling {self.config.top_n_ceiling}"
            )
        prompt_ids = self.tokenizer(prompt_text or "", add_special_tokens=True).input_ids
        ids = list(prompt_ids) + list(prefix_token_ids)
        if self.config.truncate_inputs and len(ids) > self.config.max_input_tokens:
            ids = ids[-self.config.max_input_tokens :]
        with torch.no_grad():
            input_ids = torch.tensor([ids], device=self.config.device)
            logits = self.model(input_ids=input_ids).logits[0, -1]
        values, indices = torch.topk(logits, k=min(top_n, logits.shape[-1]))
        out = []
        for value, index in zip(values.tolist(), indices.tolist()):
            text = self.tokenizer.decode([index], clean_up_tokenization_spaces=False)
            out.append((int(index), text, float(value)))
        return out, int(self.tokenizer.eos_token_id)


class RealEntailBackend:
    """Classifier-over-LM entailment scorer.

    Builds the classifier prompt from the configured template and returns the
    next-token probability of the positive class token (full-vocabulary
    softmax by default; optionally renormalized over the two class tokens).
    """

    def __init__(self, config: BackendConfig, declared_info: dict) -> None:
        _load_torch()
        from transformers import AutoModelForCausalLM, AutoTokenizer

        if not config.entailer_model:
            raise ValueError("entailer_model is required")
        self.config = config
        self.tokenizer = AutoTokenizer.from_pretrained(config.entailer_model)
        self.model = AutoModelForCausalLM.from_pretrained(config.entailer_model)
        self.model.to(config.device)
        self.model.eval()
        _verify_declared_shape(self.model, declared_info, config, "entailer")
        self._info = dict(declared_info)
        pos = self.tokenizer.encode(config.entail_positive_token, add_special_tokens=False)
        neg = self.tokenizer.encode(config.entail_negative_token, add_special_tokens=False)
        if len(pos) != 1 or len(neg) != 1:
            raise ValueError("class labels must each map to a single token")
        self._positive_id, self._negative_id = pos[0], neg[0]
        self.ready = True

    def info(self) -> dict:
        return self._info

    def _prompt_ids(self, premise: str, hypothesis: str) -> list[int]:
        template = self.config.entail_prompt_template
        if self.config.truncate_inputs:
            scaffold = self.tokenizer(
                template.format(premise="", hypothesis=hypothesis), add_special_tokens=True
            ).input_ids
            budget = max(self.config.max_input_tokens - len(scaffold), 0)
            premise_ids = self.tokenizer(premise, add_special_tokens=False).input_ids
            if len(premise_ids) > budget:
                # truncate the document tail; the template and hypothesis survive
                premise = self.tokenizer.decode(
                    premise_ids[:budget], clean_up_tokenization_spaces=False
                )
        return self.tokenizer(
            template.format(premise=premise, hypothesis=hypothesis), add_special_tokens=True
        ).input_ids

    def entail_probs(self, pairs: list[tuple[str, str]]) -> list[float]:
        torch = _load_torch()
        probs = []
        with torch.no_grad():
            for premise, hypothesis in pairs:
                ids = self._prompt_ids(premise, hypothesis)
                input_ids = torch.tensor([ids], device=self.config.device)
                logits = self.model(input_ids=input_ids).logits[0, -1]
                if self.config.renormalize_over_class_tokens:
                    two = torch.softmax(
                        logits[[self._positive_id, self._negative_id]], dim=-1
                    )
                    probs.append(float(two[0]))
                else:
                    dist = torch.softmax(logits, dim=-1)
                    probs.append(float(dist[self._positive_id]))
        return probs
