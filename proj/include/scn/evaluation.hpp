#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "scn/dataset.hpp"
#include "scn/geometry.hpp"
#include "scn/networks.hpp"

namespace scn {

/// |pred_c ∩ gt_c| / |pred_c ∪ gt_c|; nullopt when the union is empty.
std::optional<double> class_iou(const EyeMask& pred, const EyeMask& gt, int class_id);

struct ImageIou {
  std::optional<double> sclera;
  std::optional<double> iris;

  /// Mean over the defined classes; nullopt when neither is defined.
  std::optional<double> mean() const;
};

/// Percentages. A class whose IoU is undefined on every image is reported as
/// not applicable (nullopt); Mean mIoU then averages the defined classes.
struct EvalReport {
  std::optional<double> s_miou;
  std::optional<double> i_miou;
  double mean_miou = 0.0;
  std::vector<ImageIou> per_image_ious;  // fractions in [0, 1]
  int n_images = 0;
  std::optional<double> timing_seconds_per_image;
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

EvalReport evaluate_masks(std::span<const EyeMask> predictions, std::span<const EyeMask> ground_truth);

/// Argmax predictions of `model` on every sample, in fixed-size batches.
template <typename Scalar>
std::vector<EyeMask> predict_masks(const SegNet<Scalar>& model, std::span<const Sample> samples, int batch_size = 64) {
  std::vector<EyeMask> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const Image*> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(&samples[i].image);
    for (auto& m : argmax_masks(model.predict(images_to_batch<Scalar>(images)))) out.push_back(std::move(m));
  }
  return out;
}

template <typename Scalar>
EvalReport evaluate_model(const SegNet<Scalar>& model, std::span<const Sample> samples, int batch_size = 64) {
  if (samples.empty()) throw InvalidArgument("evaluation split is empty");
  const std::vector<EyeMask> predictions = predict_masks(model, samples, batch_size);
  std::vector<EyeMask> truth;
  truth.reserve(samples.size());
  for (const auto& s : samples) truth.push_back(s.mask);
  return evaluate_masks(predictions, truth);
}

/// Anything that maps a batch of samples to predicted masks, one per sample.
using MaskPredictor = std::function<std::vector<EyeMask>(std::span<const Sample>)>;

/// Loads `split` of the manifest at width x height and evaluates the
/// predictor on it.
EvalReport evaluate_split(const MaskPredictor& predictor, const DatasetManifest& manifest, Split split, int width,
                          int height);

/// Same, at the model's input size.
EvalReport evaluate_split(const SegNet<float>& model, const DatasetManifest& manifest, Split split);

struct TTestResult {
  double t_stat = 0.0;
  double p_raw = 1.0;
  double p_corrected = 1.0;
  bool significant_at_95 = false;
  bool degenerate = false;  // zero-variance differences
  int n = 0;
};

void to_json(nlohmann::json& j, const TTestResult& r);

/// Two-sided paired t-test on a - b with Bonferroni correction over
/// `num_comparisons` tests.
TTestResult paired_ttest_bonferroni(std::span<const double> a, std::span<const double> b, int num_comparisons);

/// Pairs the per-image Mean IoUs of two reports over the same images,
/// skipping images undefined in either.
TTestResult paired_ttest_bonferroni(const EvalReport& a, const EvalReport& b, int num_comparisons);

/// Median wall-clock seconds of a single-image forward pass, after `warmup`
/// discarded passes. Images are cycled through.
double bench_inference(const SegNet<float>& model, std::span<const Image> images, int warmup, int reps);

}  // namespace scn
