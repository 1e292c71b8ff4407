#include "scn/networks.hpp"

#include "scn/errors.hpp"

namespace scn {

namespace {

void check_divisible(int width, int height, std::size_t stages, const char* who) {
  const int down = 1 << stages;
  if (width % down != 0 || height % down != 0) {
    throw InvalidArgument(std::string(who) + ": input size must be divisible by 2^stages");
  }
}

void check_widths(const std::vector<int>& widths, const char* who) {
  if (widths.empty()) throw InvalidArgument(std::string(who) + ": needs at least one stage");
  for (int w : widths) {
    if (w < 1) throw InvalidArgument(std::string(who) + ": channel widths must be positive");
  }
}

}  // namespace

void SegNetConfig::validate() const {
  check_widths(channel_widths, "segmentation network");
  if (num_classes != kNumClasses) throw InvalidArgument("segmentation network: num_classes must be 3");
  if (in_channels < 1) throw InvalidArgument("segmentation network: in_channels must be positive");
  if (convs_per_stage < 1) throw InvalidArgument("segmentation network: convs_per_stage must be positive");
  check_divisible(width, height, channel_widths.size(), "segmentation network");
}

void VaeGanConfig::validate() const {
  if (latent_dim < 1) throw InvalidArgument("VAE-GAN: latent_dim must be positive");
  check_widths(encoder_widths, "encoder");
  check_widths(generator_widths, "generator");
  check_widths(discriminator_widths, "discriminator");
  check_divisible(width, height, encoder_widths.size(), "encoder");
  check_divisible(width, height, generator_widths.size(), "generator");
  check_divisible(width, height, discriminator_widths.size(), "discriminator");
  if (rec_feature_layer < 1 || rec_feature_layer > static_cast<int>(discriminator_widths.size())) {
    throw InvalidArgument("VAE-GAN: rec_feature_layer must index a discriminator conv layer");
  }
}

void to_json(nlohmann::json& j, const SegNetConfig& c) {
  j = {{"input_size", {c.width, c.height}}, {"in_channels", c.in_channels},
       {"channel_widths", c.channel_widths}, {"convs_per_stage", c.convs_per_stage},
       {"num_classes", c.num_classes}};
}

void from_json(const nlohmann::json& j, SegNetConfig& c) {
  c = SegNetConfig{};
  for (const auto& [key, value] : j.items()) {
    if (key == "input_size") {
      c.width = value.at(0).get<int>();
      c.height = value.at(1).get<int>();
    } else if (key == "in_channels") value.get_to(c.in_channels);
    else if (key == "channel_widths") value.get_to(c.channel_widths);
    else if (key == "convs_per_stage") value.get_to(c.convs_per_stage);
    else if (key == "num_classes") value.get_to(c.num_classes);
    else throw ConfigurationError("unknown key 'segnet." + key + "'");
  }
}

void to_json(nlohmann::json& j, const VaeGanConfig& c) {
  j = {{"input_size", {c.width, c.height}},
       {"latent_dim", c.latent_dim},
       {"encoder_widths", c.encoder_widths},
       {"generator_widths", c.generator_widths},
       {"discriminator_widths", c.discriminator_widths},
       {"rec_feature_layer", c.rec_feature_layer}};
}

void from_json(const nlohmann::json& j, VaeGanConfig& c) {
  c = VaeGanConfig{};
  for (const auto& [key, value] : j.items()) {
    if (key == "input_size") {
      c.width = value.at(0).get<int>();
      c.height = value.at(1).get<int>();
    } else if (key == "latent_dim") value.get_to(c.latent_dim);
    else if (key == "encoder_widths") value.get_to(c.encoder_widths);
    else if (key == "generator_widths") value.get_to(c.generator_widths);
    else if (key == "discriminator_widths") value.get_to(c.discriminator_widths);
    else if (key == "rec_feature_layer") value.get_to(c.rec_feature_layer);
    else throw ConfigurationError("unknown key 'vaegan." + key + "'");
  }
}

}  // namespace scn
