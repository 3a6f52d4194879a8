"""Neuro-fuzzy ship type classification from AIS fields and detector features."""

from .cart import (AIS_FIELDS, CartParams, ClassRule, Comparison, Condition, RuleSet,
                   TreeNode, extract_rules, fit_one_vs_all, fit_tree, predict_tree,
                   rule_stats)
from .data import (AisStaticRecord, Dataset, ImageFeatureRecord, SplitSpec,
                   build_image_centred, build_vessel_centred, filter_rare_classes,
                   load_ais_csv, read_nff1, split, write_nff1)
from .fuzzy import (FuzzyRuleSet, crisp_classify, eval_rule_crisp, eval_rule_fuzzy,
                    membership_gt, membership_le, normalize_scores_l1, wem_and, wem_or)
from .model import NeuroFuzzyConfig, NeuroFuzzyModel
from .baselines import BaselineConfig, BilinearBaseline, GaussianNB, LogisticRegression, knn_predict
from .evaluation import average_precision, macro_f1, mean_average_precision, ablation_sweep
from .synthetic import gen_synthetic, perturb_ais

__version__ = "0.1.0"
