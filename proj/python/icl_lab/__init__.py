"""Task-mixture HMM toolkit with exact Bayesian and kernel-regression predictors."""

import json

from ._icl_lab import (
    Demo,
    GeneratorSpec,
    Hmm,
    IclError,
    KernelModel,
    Prediction,
    Prompt,
    __version__,
    bayes_predict,
    build_prompt,
    check_anchor,
    epsilon_d,
    epsilon_kl,
    epsilon_r,
    epsilon_theta,
    eta_bound,
    flatten,
    forward_likelihood,
    forward_log_likelihood,
    generate_compliant_hmm,
    kernel_predict,
    label_distribution,
    margin_delta,
    moment_matrix,
    n_threshold,
    next_token_distribution,
    operator_likelihood,
    operator_of,
    prediction_similarity,
    random_hmm,
    ridge_inverse,
    sample_sequence,
    spectral_radius_sym,
    task_posterior,
)
from . import _icl_lab as _core


def _dump(config):
    return json.dumps(config or {})


def normalize_config(config=None):
    """Every field of a config dict, defaults filled in."""
    return json.loads(_core._normalize_config(_dump(config)))


def config_hash(config=None):
    return _core._config_hash(_dump(config))


def check_assumptions(hmm, config=None):
    return json.loads(_core._check_assumptions(hmm, _dump(config)))


def _suite(runner):
    def run(config=None):
        name, csv, summary = runner(_dump(config))
        return {"name": name, "csv": csv, "summary": json.loads(summary)}

    run.__name__ = runner.__name__.lstrip("_")
    return run


run_agreement = _suite(_core._run_agreement)
run_identity = _suite(_core._run_identity)
run_hoeffding = _suite(_core._run_hoeffding)
run_concentration = _suite(_core._run_concentration)
run_retrieval = _suite(_core._run_retrieval)
run_label_permutation = _suite(_core._run_label_permutation)
run_ood = _suite(_core._run_ood)
run_eq2 = _suite(_core._run_eq2)
