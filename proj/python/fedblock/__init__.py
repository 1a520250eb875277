"""Federated domain-blocking core: filter-list parsing, hash embeddings,
the MLP classifier and the federated simulation harness."""

from fedblock._core import (
    FedblockError,
    HashEmbedder,
    Model,
    canonicalize_domains,
    categorize_list,
    default_experiment_config,
    embed_whois_lines,
    evaluate_model,
    normalize_domain,
    parse_rule,
    roc_auc,
    run_experiment,
    train_model,
    __version__,
)

__all__ = [
    "FedblockError",
    "HashEmbedder",
    "Model",
    "canonicalize_domains",
    "categorize_list",
    "default_experiment_config",
    "embed_whois_lines",
    "evaluate_model",
    "normalize_domain",
    "parse_rule",
    "roc_auc",
    "run_experiment",
    "train_model",
    "__version__",
]
