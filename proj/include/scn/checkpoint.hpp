#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "scn/errors.hpp"
#include "scn/layers.hpp"

namespace scn {

/// Single-file archive of named parameter stores plus a JSON metadata block.
///
/// Layout: 8-byte magic, little-endian u64 header length, JSON header
/// (metadata and a tensor directory), then raw tensor data in column-major
/// order. Tensors keep their scalar width (f32 or f64).
class CheckpointWriter {
 public:
  explicit CheckpointWriter(nlohmann::json metadata = nlohmann::json::object()) : meta_(std::move(metadata)) {}

  template <typename Scalar>
  void add(const std::string& section, const ParamStore<Scalar>& store) {
    for (const auto& e : entries_) {
      if (e.section == section) throw InvalidArgument("checkpoint section '" + section + "' added twice");
    }
    add_all(section, "param", store.names, store.values);
    add_all(section, "buffer", store.buffer_names, store.buffers);
    sections_.push_back(section);
  }

  nlohmann::json& metadata() { return meta_; }

  /// Writes to a temporary sibling and renames it into place.
  void write(const std::filesystem::path& path) const;

 private:
  struct Entry {
    std::string section, kind, name, dtype;
    std::int64_t rows = 0, cols = 0;
    std::vector<unsigned char> bytes;
  };

  template <typename Scalar>
  void add_all(const std::string& section, const char* kind, const std::vector<std::string>& names,
               const std::vector<Mat<Scalar>>& values) {
    static_assert(sizeof(Scalar) == 4 || sizeof(Scalar) == 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
      Entry e{section, kind, names[i], sizeof(Scalar) == 4 ? "f32" : "f64", values[i].rows(), values[i].cols(), {}};
      const auto* p = reinterpret_cast<const unsigned char*>(values[i].data());
      e.bytes.assign(p, p + sizeof(Scalar) * static_cast<std::size_t>(values[i].size()));
      entries_.push_back(std::move(e));
    }
  }

  nlohmann::json meta_;
  std::vector<std::string> sections_;
  std::vector<Entry> entries_;
};

class CheckpointReader {
 public:
  /// Throws IoError on a missing, truncated or malformed file.
  explicit CheckpointReader(const std::filesystem::path& path);

  const nlohmann::json& metadata() const { return meta_; }
  bool has_section(const std::string& section) const;
  std::vector<std::string> sections() const;

  /// Overwrites every tensor of `store` from `section`. The section must list
  /// exactly the store's tensor names in order with identical shapes;
  /// anything else throws CheckpointMismatch and leaves `store` untouched.
  template <typename Scalar>
  void restore(const std::string& section, ParamStore<Scalar>& store) const {
    std::vector<Mat<Scalar>> values = read_all<Scalar>(section, "param", store.names, store.values);
    std::vector<Mat<Scalar>> buffers = read_all<Scalar>(section, "buffer", store.buffer_names, store.buffers);
    store.values = std::move(values);
    store.buffers = std::move(buffers);
  }

 private:
  struct Entry {
    std::string section, kind, name, dtype;
    std::int64_t rows = 0, cols = 0;
    std::size_t offset = 0;
  };

  template <typename Scalar>
  std::vector<Mat<Scalar>> read_all(const std::string& section, const std::string& kind,
                                    const std::vector<std::string>& names,
                                    const std::vector<Mat<Scalar>>& current) const {
    std::vector<const Entry*> found;
    for (const auto& e : entries_) {
      if (e.section == section && e.kind == kind) found.push_back(&e);
    }
    if (!has_section(section)) throw CheckpointMismatch("checkpoint has no section '" + section + "'");
    if (found.size() != names.size()) {
      throw CheckpointMismatch("checkpoint section '" + section + "' has " + std::to_string(found.size()) + " " +
                               kind + " tensors, model expects " + std::to_string(names.size()));
    }
    std::vector<Mat<Scalar>> out;
    out.reserve(found.size());
    for (std::size_t i = 0; i < found.size(); ++i) {
      const Entry& e = *found[i];
      if (e.name != names[i]) {
        throw CheckpointMismatch("checkpoint tensor '" + e.name + "' where model expects '" + names[i] + "'");
      }
      if (e.rows != current[i].rows() || e.cols != current[i].cols()) {
        throw CheckpointMismatch("shape mismatch for '" + e.name + "': checkpoint " + std::to_string(e.rows) + "x" +
                                 std::to_string(e.cols) + ", model " + std::to_string(current[i].rows()) + "x" +
                                 std::to_string(current[i].cols()));
      }
      Mat<Scalar> m(e.rows, e.cols);
      const unsigned char* src = data_.data() + e.offset;
      if (e.dtype == "f32") {
        Eigen::MatrixXf raw(e.rows, e.cols);
        std::memcpy(raw.data(), src, sizeof(float) * static_cast<std::size_t>(raw.size()));
        m = raw.template cast<Scalar>();
      } else {
        Eigen::MatrixXd raw(e.rows, e.cols);
        std::memcpy(raw.data(), src, sizeof(double) * static_cast<std::size_t>(raw.size()));
        m = raw.template cast<Scalar>();
      }
      out.push_back(std::move(m));
    }
    return out;
  }

  nlohmann::json meta_;
  std::vector<std::string> sections_;
  std::vector<Entry> entries_;
  std::vector<unsigned char> data_;
};

}  // namespace scn
