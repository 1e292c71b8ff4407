#include "scn/losses.hpp"

#include <cmath>

namespace scn {

void LossWeights::validate() const {
  for (double w : {lambda_1, lambda_2, lambda_z, alpha}) {
    if (!std::isfinite(w) || w < 0.0) throw InvalidArgument("loss weights must be finite and non-negative");
  }
  if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
}

double total_seg_loss(double l_iou, double l_z, double l_disc, const LossWeights& weights) {
  const double total = l_iou + weights.lambda_1 * l_z + weights.lambda_2 * l_disc;
  if (!std::isfinite(l_iou) || !std::isfinite(l_z) || !std::isfinite(l_disc) || !std::isfinite(total)) {
    throw TrainingDivergence("non-finite segmentation loss (l_iou=" + std::to_string(l_iou) +
                             ", l_z=" + std::to_string(l_z) + ", l_disc=" + std::to_string(l_disc) + ")");
  }
  return total;
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"lambda_1", w.lambda_1}, {"lambda_2", w.lambda_2}, {"lambda_z", w.lambda_z},
       {"alpha", w.alpha},       {"epsilon", w.epsilon}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  w = LossWeights{};
  for (const auto& [key, value] : j.items()) {
    if (key == "lambda_1") value.get_to(w.lambda_1);
    else if (key == "lambda_2") value.get_to(w.lambda_2);
    else if (key == "lambda_z") value.get_to(w.lambda_z);
    else if (key == "alpha") value.get_to(w.alpha);
    else if (key == "epsilon") value.get_to(w.epsilon);
    else throw ConfigurationError("unknown key 'weights." + key + "'");
  }
}

}  // namespace scn
