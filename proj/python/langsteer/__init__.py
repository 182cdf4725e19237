"""Language-specific neuron identification and steering."""

from ._langsteer import (
    ComputeError,
    ConfigError,
    DataError,
    LangsteerError,
    Model,
    Plan,
    Profile,
    FACTORS,
    accumulate_profile,
    bleu,
    build_synthetic_model,
    detokenize,
    emit_report,
    greedy_generate,
    identify,
    lape_entropy,
    load_model,
    lss_score,
    make_plan,
    mc_accuracy,
    perplexity,
    random_model,
    run_pipeline,
    tokenize,
    write_synthetic_workspace,
)

__all__ = [name for name in dir() if not name.startswith("_")]
