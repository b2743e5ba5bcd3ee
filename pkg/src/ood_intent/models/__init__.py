import json
from pathlib import Path

from .base import SequenceModel, VocabularyMismatch, derive_seed
from .discriminative import (DiscConfig, DiscriminativeClassifier, disc_posterior, lmcl_loss,
                             penultimate_features)
from .generative import (GenConfig, GenerativeClassifier, gen_conditional_loglik, gen_marginal_loglik,
                         gen_predict)
from .language_model import LanguageModel, LMConfig, background_config, lm_log_likelihood
from .training import (RunLog, train_discriminative_classifier, train_generative_classifier,
                       train_language_model)

MODEL_CLASSES = {cls.kind: cls for cls in (LanguageModel, GenerativeClassifier, DiscriminativeClassifier)}


def load_model(stem):
    """Load any checkpoint by its model-kind tag."""
    kind = json.loads(Path(stem).with_suffix(".json").read_text())["metadata"]["kind"]
    return MODEL_CLASSES[kind].load(stem)
