#pragma once

#include <span>
#include <vector>

namespace ews::metrics {

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

// ROC over all distinct score values (descending), starting at (0,0).
// Tied scores form one diagonal segment. Throws kDomain on single-class labels.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

double trapezoid_auc(std::span<const RocPoint> roc);

// Trapezoidal AUROC; equals the Mann-Whitney U statistic with ties at 1/2.
double auroc(std::span<const double> scores, std::span<const int> labels);

// Linear-interpolated quantile (type 7) of unsorted data; NaN for empty input.
double quantile(std::vector<double> values, double q);
double median(std::vector<double> values);

}  // namespace ews::metrics
