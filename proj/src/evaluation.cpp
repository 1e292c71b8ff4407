#include "scn/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <boost/math/distributions/students_t.hpp>

namespace scn {

std::optional<double> class_iou(const EyeMask& pred, const EyeMask& gt, int class_id) {
  if (pred.width() != gt.width() || pred.height() != gt.height()) {
    throw InvalidArgument("class_iou: mask dimensions differ");
  }
  if (class_id < 0 || class_id >= kNumClasses) throw InvalidArgument("class_iou: class id out of range");
  const auto c = static_cast<std::uint8_t>(class_id);
  const auto p = (pred.labels.array() == c);
  const auto g = (gt.labels.array() == c);
  const long inter = (p && g).count();
  const long uni = (p || g).count();
  if (uni == 0) return std::nullopt;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::optional<double> ImageIou::mean() const {
  if (sclera && iris) return (*sclera + *iris) / 2.0;
  if (sclera) return sclera;
  return iris;
}

namespace {

std::optional<double> mean_percent(const std::vector<ImageIou>& rows, std::optional<double> ImageIou::*field) {
  double sum = 0.0;
  int count = 0;
  for (const auto& r : rows) {
    if (r.*field) {
      sum += *(r.*field);
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return 100.0 * sum / count;
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::optional<double> optional_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::vector<EyeMask> masks_of_samples(std::span<const Sample> samples) {
  std::vector<EyeMask> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.mask);
  return out;
}

}  // namespace

EvalReport evaluate_masks(std::span<const EyeMask> predictions, std::span<const EyeMask> ground_truth) {
  if (predictions.size() != ground_truth.size()) throw InvalidArgument("evaluate: prediction/label count differs");
  if (predictions.empty()) throw InvalidArgument("evaluate: empty split");
  EvalReport r;
  r.n_images = static_cast<int>(predictions.size());
  r.per_image_ious.reserve(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    r.per_image_ious.push_back(
        {class_iou(predictions[i], ground_truth[i], kSclera), class_iou(predictions[i], ground_truth[i], kIris)});
  }
  r.s_miou = mean_percent(r.per_image_ious, &ImageIou::sclera);
  r.i_miou = mean_percent(r.per_image_ious, &ImageIou::iris);
  if (r.s_miou && r.i_miou) {
    r.mean_miou = (*r.s_miou + *r.i_miou) / 2.0;
  } else {
    r.mean_miou = r.s_miou.value_or(r.i_miou.value_or(0.0));
  }
  return r;
}

EvalReport evaluate_split(const MaskPredictor& predictor, const DatasetManifest& manifest, Split split, int width,
                          int height) {
  const std::vector<Sample> samples = load_split(manifest, split, width, height);
  if (samples.empty()) throw InvalidArgument("evaluation split '" + to_string(split) + "' is empty");
  const std::vector<EyeMask> predictions = predictor(samples);
  return evaluate_masks(predictions, masks_of_samples(samples));
}

EvalReport evaluate_split(const SegNet<float>& model, const DatasetManifest& manifest, Split split) {
  return evaluate_split([&model](std::span<const Sample> s) { return predict_masks(model, s); }, manifest, split,
                        model.config().width, model.config().height);
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = nlohmann::json::object();
  j["s_miou"] = optional_json(r.s_miou);
  j["i_miou"] = optional_json(r.i_miou);
  j["mean_miou"] = r.mean_miou;
  j["n_images"] = r.n_images;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& p : r.per_image_ious) rows.push_back({optional_json(p.sclera), optional_json(p.iris)});
  j["per_image_ious"] = std::move(rows);
  j["timing_seconds_per_image"] = optional_json(r.timing_seconds_per_image);
}

void from_json(const nlohmann::json& j, EvalReport& r) {
  r.s_miou = optional_from(j.at("s_miou"));
  r.i_miou = optional_from(j.at("i_miou"));
  r.mean_miou = j.at("mean_miou").get<double>();
  r.n_images = j.at("n_images").get<int>();
  r.per_image_ious.clear();
  for (const auto& row : j.at("per_image_ious")) {
    r.per_image_ious.push_back({optional_from(row.at(0)), optional_from(row.at(1))});
  }
  r.timing_seconds_per_image = j.contains("timing_seconds_per_image")
                                   ? optional_from(j.at("timing_seconds_per_image"))
                                   : std::nullopt;
}

void to_json(nlohmann::json& j, const TTestResult& r) {
  j = {{"t_stat", r.t_stat},       {"p_raw", r.p_raw},           {"p_corrected", r.p_corrected},
       {"significant_at_95", r.significant_at_95}, {"degenerate", r.degenerate}, {"n", r.n}};
}

TTestResult paired_ttest_bonferroni(std::span<const double> a, std::span<const double> b, int num_comparisons) {
  if (a.size() != b.size()) throw InvalidArgument("paired t-test: score lists differ in length");
  if (a.size() < 2) throw InvalidArgument("paired t-test: need at least two pairs");
  if (num_comparisons < 1) throw InvalidArgument("paired t-test: num_comparisons must be at least 1");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  TTestResult r;
  r.n = static_cast<int>(n);
  if (!(sd > 0.0)) {
    r.degenerate = true;
    return r;
  }
  r.t_stat = mean / (sd / std::sqrt(static_cast<double>(n)));
  const boost::math::students_t dist(static_cast<double>(n - 1));
  r.p_raw = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t_stat)));
  r.p_corrected = std::min(1.0, r.p_raw * num_comparisons);
  r.significant_at_95 = r.p_corrected < 0.05;
  return r;
}

TTestResult paired_ttest_bonferroni(const EvalReport& a, const EvalReport& b, int num_comparisons) {
  if (a.per_image_ious.size() != b.per_image_ious.size()) {
    throw InvalidArgument("paired t-test: reports cover different image counts");
  }
  std::vector<double> sa, sb;
  for (std::size_t i = 0; i < a.per_image_ious.size(); ++i) {
    const auto ma = a.per_image_ious[i].mean();
    const auto mb = b.per_image_ious[i].mean();
    if (ma && mb) {
      sa.push_back(*ma);
      sb.push_back(*mb);
    }
  }
  return paired_ttest_bonferroni(sa, sb, num_comparisons);
}

double bench_inference(const SegNet<float>& model, std::span<const Image> images, int warmup, int reps) {
  if (reps < 1) throw InvalidArgument("bench: reps must be at least 1");
  if (images.empty()) throw InvalidArgument("bench: no images");
  using Clock = std::chrono::steady_clock;
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(reps));
  for (int i = 0; i < warmup + reps; ++i) {
    const Image* im = &images[static_cast<std::size_t>(i) % images.size()];
    const auto batch = images_to_batch<float>(std::span<const Image* const>(&im, 1));
    const auto t0 = Clock::now();
    const auto probs = model.predict(batch);
    const auto t1 = Clock::now();
    if (probs.values.size() == 0) throw InternalConsistency("bench: empty prediction");
    if (i >= warmup) times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t m = times.size() / 2;
  return times.size() % 2 == 1 ? times[m] : (times[m - 1] + times[m]) / 2.0;
}

}  // namespace scn
