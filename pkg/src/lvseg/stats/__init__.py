from .anova import AnovaResult, PairComparison, TukeyResult, one_way_anova, tukey_hsd
from .metrics import (BlandAltman, PairedVolumes, RegressionResult, bland_altman, cov_of, dsc,
                      linear_regression)
from .special import betainc_reg, f_sf, studentized_range_cdf, studentized_range_sf, t_sf2

__all__ = ["AnovaResult", "PairComparison", "TukeyResult", "one_way_anova", "tukey_hsd",
           "BlandAltman", "PairedVolumes", "RegressionResult", "bland_altman", "cov_of", "dsc",
           "linear_regression", "betainc_reg", "f_sf", "studentized_range_cdf",
           "studentized_range_sf", "t_sf2"]
